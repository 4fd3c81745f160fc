"""Named prevalence estimators with a uniform ``EstimateReport`` interface.

Every estimator takes the training data (or the quantities derived from it),
the unlabeled test data, and the posterior model or hard classifiers it needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from prevalest.core import (
    HardClassifier,
    LabeledDataset,
    PosteriorModel,
    PrevalenceVector,
    UnlabeledDataset,
    empirical_priors,
    make_prevalence,
)
from prevalest.errors import InvalidInputError, SingularSystemError
from prevalest.moments import (
    CONDITION_THRESHOLD,
    StatisticProfile,
    build_conditional_mean_system,
    solve_full_system,
    solve_reduced,
)
from prevalest.report import Diagnostics, EstimateReport

log = logging.getLogger(__name__)

ZERO_DENOMINATOR = 1e-12
MIN_POSTERIOR_VARIANCE = 1e-12
EM_TOL = 1e-8
EM_MAX_ITER = 10_000


@dataclass(frozen=True)
class CostSensitiveSpec:
    """Costs for a binary one-vs-all problem.

    ``w_pos`` is the cost of missing a ``positive_class`` example and ``w_neg``
    the cost of a false alarm. The Friedman-equivalent choice is
    ``(1 - p_pos, p_pos)``; see :meth:`from_priors`.
    """

    positive_class: int
    w_pos: float
    w_neg: float

    def __post_init__(self):
        if self.w_pos < 0 or self.w_neg < 0 or (self.w_pos == 0 and self.w_neg == 0):
            raise InvalidInputError("cost weights must be non-negative and not both zero")

    @classmethod
    def from_priors(cls, priors: PrevalenceVector, positive_class: int = 1) -> "CostSensitiveSpec":
        p = float(priors.probs[positive_class - 1])
        return cls(positive_class, 1.0 - p, p)


def _binary_ratio(test_mean, rate_pos, rate_neg, method):
    """``(E_Q[Z] - E_P[Z|2]) / (E_P[Z|1] - E_P[Z|2])``."""
    denom = rate_pos - rate_neg
    if abs(denom) < ZERO_DENOMINATOR:
        raise SingularSystemError(
            f"{method}: zero denominator (class-conditional means {rate_pos:.6g} and {rate_neg:.6g} coincide)"
        )
    return (test_mean - rate_neg) / denom


def _binary_report(method, q1, **diag):
    raw = np.array([q1, 1.0 - q1])
    estimate = make_prevalence(raw)
    return EstimateReport(method, estimate, raw, Diagnostics(clipped=estimate.clipped, **diag))


def friedman_from_rates(test_rate, tpr, fpr) -> float:
    return _binary_ratio(test_rate, tpr, fpr, "friedman")


def debias_from_moments(p1, var_p, test_mean) -> float:
    """``p1 (1 - p1) / var_P[post] * (mean_test post - p1) + p1``."""
    if var_p < MIN_POSTERIOR_VARIANCE:
        raise SingularSystemError(f"debias: posterior variance {var_p:.3g} is below {MIN_POSTERIOR_VARIANCE:g}")
    return p1 * (1.0 - p1) / var_p * (test_mean - p1) + p1


def _require_binary(data, method):
    if data.class_count != 2:
        raise InvalidInputError(f"{method} is defined for two classes only, got {data.class_count}")


def _class_means(values, train: LabeledDataset):
    w = train.row_weights()
    ind = train.class_indicators() * w[:, None]
    return (values.T @ ind) / ind.sum(axis=0)


# -- Adjusted Count ---------------------------------------------------------


def adjusted_count(classifiers: HardClassifier, train: LabeledDataset, test: UnlabeledDataset) -> EstimateReport:
    """Conditional-mean system with ``Z_y = 1_{C_y}(X)`` solved on the simplex."""
    if classifiers.n_classes != train.class_count:
        raise InvalidInputError("classifier count does not match the number of classes")
    stats = StatisticProfile.from_classifier(classifiers)
    system = build_conditional_mean_system(stats, train, test)
    return solve_full_system(system, method="ac")


# -- Friedman ---------------------------------------------------------------


def friedman_classifier(posterior: PosteriorModel) -> HardClassifier:
    """``f*_y(x) = 1`` iff ``P[Y=y | X=x] > p_y``; ties go to 0."""
    p = posterior.priors.probs

    def indicators(x):
        return (posterior(x) > p[None, :]).astype(float)

    return HardClassifier(indicators, posterior.n_classes, "friedman-threshold")


def friedman_estimate(train: LabeledDataset, test: UnlabeledDataset, classifier: HardClassifier) -> EstimateReport:
    """Adjusted count with Friedman's thresholded classifiers.

    Binary: closed-form ratio on the class-1 indicator. Multi-class: the
    ``l x l`` conditional-mean system solved by simplex least squares.
    """
    if classifier.n_classes != train.class_count:
        raise InvalidInputError("classifier count does not match the number of classes")
    method = "friedman-cs" if classifier.mode == "cost-sensitive" else "friedman"
    if train.class_count == 2:
        f_train = classifier(train.features)[:, :1]
        tpr, fpr = _class_means(f_train, train)[0]
        test_rate = float(test.row_weights() @ classifier(test.features)[:, 0])
        q1 = _binary_ratio(test_rate, tpr, fpr, method)
        return _binary_report(method, q1)
    stats = StatisticProfile.from_classifier(classifier)
    return solve_full_system(build_conditional_mean_system(stats, train, test), method=method)


def _threshold_search(scores, positive, weights, w_pos, w_neg):
    """Threshold ``t`` minimizing the weighted cost of ``1{score > t}``.

    Candidates are below-min, midpoints of consecutive distinct scores and the
    maximum; ties in cost go to the largest threshold.
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    pos_mass = weights[order] * positive[order]
    neg_mass = weights[order] * (1.0 - positive[order])
    # cost when everything at or below index k is predicted 0
    total_neg = neg_mass.sum()
    cum_pos = np.concatenate([[0.0], np.cumsum(pos_mass)])
    cum_neg = np.concatenate([[0.0], np.cumsum(neg_mass)])
    last_of_run = np.concatenate([np.flatnonzero(np.diff(s) > 0), [s.size - 1]])
    cut = np.concatenate([[0], last_of_run + 1])  # number of rows predicted 0
    cost = w_pos * cum_pos[cut] + w_neg * (total_neg - cum_neg[cut])
    best = np.flatnonzero(cost <= cost.min() * (1 + 1e-12) + 1e-15)[-1]
    k = cut[best]
    if k == 0:
        t = s[0] - max(1.0, abs(s[0]))
    elif k == s.size:
        t = s[-1]
    else:
        t = 0.5 * (s[k - 1] + s[k])
    return float(t), float(cost[best])


@dataclass(frozen=True)
class ThresholdRule:
    scorer: Callable[[np.ndarray], np.ndarray]
    threshold: float
    cost: float

    def __call__(self, x):
        return (np.asarray(self.scorer(x), dtype=float).reshape(-1) > self.threshold).astype(float)


def fit_cost_sensitive_rule(
    train: LabeledDataset,
    spec: CostSensitiveSpec,
    scorer: Callable[[np.ndarray], np.ndarray] | None = None,
) -> ThresholdRule:
    """One-vs-all rule minimizing ``w_pos E[(1-f) 1{Y=c}] + w_neg E[f 1{Y!=c}]``.

    Without a ``scorer``, a logistic scorer is fit with instance weights
    proportional to the costs; either way the threshold is chosen by exhaustive
    search on the training scores. No posterior estimate is thresholded.
    """
    positive = (train.labels == spec.positive_class).astype(float)
    if positive.min() == positive.max():
        raise InvalidInputError(f"class {spec.positive_class} vs rest has only one class in the training data")
    w = train.row_weights()
    if scorer is None:
        scorer = _fit_reweighted_scorer(train.features, positive, w, spec)
    scores = np.asarray(scorer(train.features), dtype=float).reshape(-1)
    t, cost = _threshold_search(scores, positive, w, spec.w_pos, spec.w_neg)
    return ThresholdRule(scorer, t, cost)


def _fit_reweighted_scorer(x, positive, w, spec):
    from sklearn.linear_model import LogisticRegression

    sw = w * np.where(positive == 1, spec.w_pos, spec.w_neg)
    if sw.sum() <= 0 or np.all(sw[positive == 1] == 0) or np.all(sw[positive == 0] == 0):
        sw = w
    model = LogisticRegression(C=1e6, max_iter=1000)
    model.fit(x, positive.astype(int), sample_weight=sw * (len(sw) / sw.sum()))
    return model.decision_function


def cost_sensitive_classifier(
    train: LabeledDataset,
    spec: CostSensitiveSpec | None = None,
    scorer: Callable[[np.ndarray], np.ndarray] | None = None,
) -> HardClassifier:
    """Friedman-type classifiers learned as cost-sensitive one-vs-all rules.

    With ``spec`` given only that class is fit (binary use); otherwise one rule
    per class with weights ``(1 - p_y, p_y)``. Missing columns are filled with
    the complement in the binary case.
    """
    ell = train.class_count
    priors = empirical_priors(train)
    if spec is not None:
        specs = [spec]
    elif ell == 2:
        specs = [CostSensitiveSpec.from_priors(priors, 1)]
    else:
        specs = [CostSensitiveSpec.from_priors(priors, c) for c in range(1, ell + 1)]
    rules = {s.positive_class: fit_cost_sensitive_rule(train, s, scorer) for s in specs}

    def indicators(x):
        out = np.zeros((x.shape[0], ell))
        for c, rule in rules.items():
            out[:, c - 1] = rule(x)
        if ell == 2 and len(rules) == 1:
            (c,) = rules
            out[:, 2 - c] = 1.0 - out[:, c - 1]
        return out

    return HardClassifier(indicators, ell, "cost-sensitive", details={"rules": rules})


# -- DeBias / PAC / covariance DeBias -----------------------------------------


def debias_estimate(posterior: PosteriorModel, train: LabeledDataset, test: UnlabeledDataset) -> EstimateReport:
    """Binary DeBias: rescale the shift of the mean test posterior by ``p1 (1-p1) / var_P``."""
    _require_binary(train, "debias")
    p1 = float(empirical_priors(train).probs[0])
    w = train.row_weights()
    post = posterior(train.features)[:, 0]
    var_p = float(w @ (post - w @ post) ** 2)
    test_mean = float(test.row_weights() @ posterior(test.features)[:, 0])
    q1 = debias_from_moments(p1, var_p, test_mean)
    return _binary_report("debias", q1)


def pac_estimate(posterior: PosteriorModel, train: LabeledDataset, test: UnlabeledDataset) -> EstimateReport:
    """Probabilistic adjusted count; generalized (GPAC) for more than two classes."""
    if train.class_count > 2:
        return gpac_estimate(posterior, train, test)
    post_train = posterior(train.features)[:, :1]
    a1, a2 = _class_means(post_train, train)[0]
    test_mean = float(test.row_weights() @ posterior(test.features)[:, 0])
    return _binary_report("pac", _binary_ratio(test_mean, a1, a2, "pac"))


def gpac_estimate(posterior: PosteriorModel, train: LabeledDataset, test: UnlabeledDataset) -> EstimateReport:
    stats = StatisticProfile.from_posterior(posterior)
    return solve_full_system(build_conditional_mean_system(stats, train, test), method="gpac")


def covariance_debias_multiclass(
    posterior: PosteriorModel,
    train: LabeledDataset,
    test: UnlabeledDataset,
    dropped_class: int | None = None,
    cond_threshold: float = CONDITION_THRESHOLD,
) -> EstimateReport:
    """Invert the covariance of the first ``l-1`` training posteriors."""
    ell = train.class_count
    dropped = ell if dropped_class is None else dropped_class
    classes = [c for c in range(1, ell + 1) if c != dropped]
    stats = StatisticProfile.from_posterior(posterior, classes)
    return solve_reduced(
        stats, train, test, "posteriors", posterior, dropped, cond_threshold, method="cov-debias"
    )


# -- EM maximum likelihood ----------------------------------------------------


def em_ml_estimate(
    posterior: PosteriorModel,
    test: UnlabeledDataset,
    init: PrevalenceVector | None = None,
    max_iter: int = EM_MAX_ITER,
    tol: float = EM_TOL,
) -> EstimateReport:
    """Maximum-likelihood priors by the EM fixed point on rescaled posteriors.

    The per-iteration test log-likelihood (up to a constant not depending on
    ``q``) is kept in ``diagnostics.extra['log_likelihood']``. Non-convergence
    is flagged, not raised.
    """
    p = posterior.priors.probs
    q = (init if init is not None else posterior.priors).probs.copy()
    post = posterior(test.features)
    w = test.row_weights()
    ratios = post / p[None, :]
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mix = ratios @ q
        trace.append(float(w @ np.log(mix)))
        resp = ratios * q[None, :] / mix[:, None]
        q_new = w @ resp
        q_new /= q_new.sum()
        step = np.abs(q_new - q).sum()
        q = q_new
        if step < tol:
            converged = True
            break
    trace.append(float(w @ np.log(ratios @ q)))
    estimate = make_prevalence(q)
    diag = Diagnostics(clipped=estimate.clipped, iterations=it, converged=converged)
    diag.extra["log_likelihood"] = np.array(trace)
    if not converged:
        log.warning("EM did not converge within %d iterations", max_iter)
    return EstimateReport("em", estimate, q.copy(), diag)


# -- minimal learners for real data -------------------------------------------


def fit_logistic_posterior(train: LabeledDataset, C: float = 1e6) -> PosteriorModel:
    """Multinomial logistic regression posteriors, priors set to the training frequencies."""
    from sklearn.linear_model import LogisticRegression

    model = LogisticRegression(C=C, max_iter=5000)
    model.fit(train.features, train.labels, sample_weight=train.row_weights() * train.n)
    cols = np.searchsorted(model.classes_, np.arange(1, train.class_count + 1))

    def predict(x):
        return model.predict_proba(x)[:, cols]

    return PosteriorModel(predict, empirical_priors(train))


def fit_one_vs_all_classifiers(train: LabeledDataset, C: float = 1e6) -> HardClassifier:
    """Independent per-class logistic classifiers ``1{P_y(x) > 1/2}`` learned on training data only."""
    from sklearn.linear_model import LogisticRegression

    models = []
    for c in range(1, train.class_count + 1):
        y = (train.labels == c).astype(int)
        m = LogisticRegression(C=C, max_iter=5000)
        m.fit(train.features, y, sample_weight=train.row_weights() * train.n)
        models.append(m)

    def indicators(x):
        return np.column_stack([m.predict(x) for m in models]).astype(float)

    return HardClassifier(indicators, train.class_count, "one-vs-all")


METHODS = ("ac", "friedman", "friedman-cs", "debias", "pac", "gpac", "cov-debias", "em")


def run_method(method: str, train: LabeledDataset, test: UnlabeledDataset, posterior=None) -> EstimateReport:
    """Run a named method with the default learners."""
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "ac":
        return adjusted_count(fit_one_vs_all_classifiers(train), train, test)
    if method == "friedman-cs":
        return friedman_estimate(train, test, cost_sensitive_classifier(train))
    posterior = posterior or fit_logistic_posterior(train)
    if method == "friedman":
        return friedman_estimate(train, test, friedman_classifier(posterior))
    if method == "debias":
        return debias_estimate(posterior, train, test)
    if method == "pac":
        return pac_estimate(posterior, train, test)
    if method == "gpac":
        return gpac_estimate(posterior, train, test)
    if method == "cov-debias":
        return covariance_debias_multiclass(posterior, train, test)
    return em_ml_estimate(posterior, test)
