"""Linear moment systems for prevalence estimation under prior probability shift.

Three constructions relate test expectations of a feature statistic ``Z`` to
training-distribution quantities:

* conditional-mean form: ``E_Q[Z] = sum_y q_y E_P[Z | Y=y]`` (unknowns ``q``);
* indicator-covariance form: ``E_Q[Z] - E_P[Z] = sum_y (q_y/p_y) cov_P(Z, 1{Y=y})``;
* posterior-covariance form: as above with ``P[Y=y | X]`` in place of the indicator.

The covariance matrices always annihilate ``(1, ..., 1)``, so the full covariance
forms are singular. They are solved through the reduced ``(l-1)``-dimensional
system instead (see :func:`solve_reduced`).

All expectations use row weights and the ``1/n`` normalization.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable, Sequence

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
from prevalest.report import Diagnostics, EstimateReport, RankReport

FORMS = ("conditional-mean", "indicator-covariance", "posterior-covariance")
CONSTRAINT_MODES = ("append-sum-row", "substitute")

RANK_TOLERANCE = 1e-10
CONDITION_THRESHOLD = 1e8
KERNEL_ATOL = 1e-10


@dataclass(frozen=True, eq=False)
class StatisticProfile:
    """``r`` named statistics ``f_i(x)`` evaluated as one ``m x r`` block.

    Evaluated columns are cached per dataset object.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    names: tuple[str, ...]
    _cache: weakref.WeakKeyDictionary = field(default_factory=weakref.WeakKeyDictionary, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 1:
            raise InvalidInputError("a statistic profile needs at least one statistic")

    @property
    def r(self) -> int:
        return len(self.names)

    @classmethod
    def from_functions(cls, functions: Sequence[Callable], names: Sequence[str] | None = None):
        functions = list(functions)
        names = names or [f"f_{i + 1}" for i in range(len(functions))]

        def evaluator(x):
            return np.column_stack([np.asarray(f(x), dtype=float).reshape(-1) for f in functions])

        return cls(evaluator, tuple(names))

    @classmethod
    def from_posterior(cls, posterior: PosteriorModel, classes: Sequence[int] | None = None):
        """Statistics ``P[Y=y | X]`` for the given 1-based classes (default: all)."""
        classes = list(classes or range(1, posterior.n_classes + 1))
        cols = np.asarray(classes) - 1
        return cls(lambda x: posterior(x)[:, cols], tuple(f"posterior_{c}" for c in classes))

    @classmethod
    def from_classifier(cls, classifier: HardClassifier, classes: Sequence[int] | None = None):
        classes = list(classes or range(1, classifier.n_classes + 1))
        cols = np.asarray(classes) - 1
        return cls(lambda x: classifier(x)[:, cols], tuple(f"indicator_{c}" for c in classes))

    def evaluate(self, data) -> np.ndarray:
        try:
            return self._cache[data]
        except (KeyError, TypeError):
            pass
        out = np.asarray(self.evaluator(data.features), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape != (data.n, self.r):
            raise InvalidInputError(f"statistics returned shape {out.shape}, expected {(data.n, self.r)}")
        bad = ~np.all(np.isfinite(out), axis=0)
        if np.any(bad):
            names = [n for n, b in zip(self.names, bad) if b]
            raise InvalidInputError(f"statistic(s) {', '.join(names)} evaluate to non-finite values")
        out.setflags(write=False)
        try:
            self._cache[data] = out
        except TypeError:
            pass
        return out


@dataclass(frozen=True, eq=False)
class MomentSystem:
    A: np.ndarray
    b: np.ndarray
    form: str
    train_priors: PrevalenceVector
    constraint_mode: str = "append-sum-row"
    names: tuple[str, ...] = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.form not in FORMS:
            raise InvalidInputError(f"unknown form {self.form!r}")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise InvalidInputError(f"unknown constraint mode {self.constraint_mode!r}")
        if b.size != A.shape[0] or A.shape[1] != self.train_priors.n_classes:
            raise InvalidInputError(f"inconsistent dimensions: A {A.shape}, b {b.shape}")
        if self.form != "conditional-mean":
            scale = max(1.0, float(np.abs(A).max(initial=0.0)))
            if np.abs(A.sum(axis=1)).max(initial=0.0) > KERNEL_ATOL * scale:
                raise InvalidInputError("covariance-form rows must sum to zero")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def shape(self):
        return self.A.shape


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """``C s = z`` with one class dropped; ``s`` is None when ``C`` is judged singular."""

    C: np.ndarray
    z: np.ndarray
    s: np.ndarray | None
    condition_number: float
    dropped_class: int
    train_priors: PrevalenceVector

    def recover(self) -> np.ndarray:
        """Test priors from ``s``: ``q_y = p_y (s_y + 1 - sum_i p_i s_i)``; the dropped class has ``s = 0``."""
        if self.s is None:
            raise SingularSystemError("reduced system has no solution")
        p = self.train_priors.probs
        keep = _kept(p.size, self.dropped_class)
        s_full = np.zeros(p.size)
        s_full[keep] = self.s
        return p * (s_full + 1.0 - p[keep] @ self.s)


def _kept(ell, dropped_class):
    return np.array([c for c in range(ell) if c != dropped_class - 1])


def _weighted_moments(stats: StatisticProfile, train: LabeledDataset, test: UnlabeledDataset):
    Z = stats.evaluate(train)
    w = train.row_weights()
    EZ_P = w @ Z
    EZ_Q = test.row_weights() @ stats.evaluate(test)
    return Z, w, EZ_P, EZ_Q


def build_conditional_mean_system(
    stats: StatisticProfile,
    train: LabeledDataset,
    test: UnlabeledDataset,
    constraint_mode: str = "append-sum-row",
) -> MomentSystem:
    """``A[i, j] = E_P[Z_i | Y=j]``, ``b[i] = E_Q[Z_i]``."""
    Z, w, _, EZ_Q = _weighted_moments(stats, train, test)
    ind = train.class_indicators() * w[:, None]
    A = (Z.T @ ind) / ind.sum(axis=0)[None, :]
    return MomentSystem(A, EZ_Q, "conditional-mean", empirical_priors(train), constraint_mode, stats.names)


def build_covariance_system(
    stats: StatisticProfile,
    train: LabeledDataset,
    test: UnlabeledDataset,
    target: str = "indicators",
    posterior: PosteriorModel | None = None,
) -> MomentSystem:
    """``A[i, j] = cov_P(Z_i, T_j)`` with ``T`` the class indicators or posteriors.

    ``b[i] = E_Q[Z_i] - E_P[Z_i]``; the unknowns are ``q_y / p_y``.
    """
    if target not in ("indicators", "posteriors"):
        raise InvalidInputError(f"target must be 'indicators' or 'posteriors', got {target!r}")
    if (target == "posteriors") != (posterior is not None):
        raise InvalidInputError("a posterior model is required exactly when target='posteriors'")
    Z, w, EZ_P, EZ_Q = _weighted_moments(stats, train, test)
    if target == "indicators":
        T = train.class_indicators()
        form = "indicator-covariance"
    else:
        T = posterior(train.features)
        if T.shape[1] != train.class_count:
            raise InvalidInputError("posterior model class count does not match the training data")
        form = "posterior-covariance"
    Zc = Z - EZ_P[None, :]
    Tc = T - (w @ T)[None, :]
    A = (Zc * w[:, None]).T @ Tc
    return MomentSystem(A, EZ_Q - EZ_P, form, empirical_priors(train), names=stats.names)


def rank_diagnostic(
    system: MomentSystem,
    tolerance: float = RANK_TOLERANCE,
    with_sum_row: bool = False,
) -> RankReport:
    """Numerical rank from singular values above ``tolerance * s_max``.

    With ``with_sum_row`` the constraint row ``(1, ..., 1)`` is appended first,
    which is the matrix whose rank decides uniqueness in :func:`solve_full_system`.
    """
    A = system.A
    if with_sum_row:
        A = np.vstack([A, np.ones(A.shape[1])])
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > tolerance * s[0])) if s.size and s[0] > 0 else 0
    residual = float(np.linalg.norm(system.A @ np.ones(A.shape[1])))
    return RankReport(rank, s, residual, tolerance)


def _equality_lsq(A, b):
    """min ||A q - b|| subject to sum(q) = 1, by eliminating the last coordinate."""
    k = A.shape[1]
    if k == 1:
        return np.ones(1)
    last = A[:, -1]
    t, *_ = np.linalg.lstsq(A[:, :-1] - last[:, None], b - last, rcond=None)
    return np.append(t, 1.0 - t.sum())


def simplex_lsq(A, b, max_iter: int | None = None):
    """Minimize ``||A q - b||_2`` over the probability simplex.

    Primal active-set method; each working set is solved exactly with the sum
    constraint eliminated. Returns ``(q, active, iterations)`` where ``active``
    marks coordinates held at the zero bound.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    ell = A.shape[1]
    max_iter = max_iter or 10 * ell + 50
    q = np.full(ell, 1.0 / ell)
    active = np.zeros(ell, dtype=bool)
    for it in range(1, max_iter + 1):
        free = ~active
        cand = np.zeros(ell)
        cand[free] = _equality_lsq(A[:, free], b)
        if np.all(cand[free] >= 0):
            q = cand
            g = A.T @ (A @ q - b)
            lam = g[free].mean()
            slack = g - lam
            tol = 1e-12 * max(1.0, np.abs(g).max())
            if not np.any(active) or slack[active].min() >= -tol:
                return q, active, it
            idx = np.flatnonzero(active)
            active[idx[np.argmin(slack[idx])]] = False
        else:
            blocking = free & (cand < 0)
            ratios = np.full(ell, np.inf)
            ratios[blocking] = q[blocking] / (q[blocking] - cand[blocking])
            j = int(np.argmin(ratios))
            q = q + ratios[j] * (cand - q)
            q[j] = 0.0
            active[j] = True
            q = np.where(active, 0.0, q)
    raise SingularSystemError(f"simplex least squares did not terminate in {max_iter} iterations")


def solve_full_system(
    system: MomentSystem,
    tolerance: float = RANK_TOLERANCE,
    cond_threshold: float = CONDITION_THRESHOLD,
    method: str = "full-system",
) -> EstimateReport:
    """Solve a conditional-mean system by least squares on the simplex.

    The sum constraint is enforced inside the solver (by elimination in
    ``substitute`` mode, by an extra equation with a Lagrange condition in
    ``append-sum-row`` mode; the two coincide). Raises
    :class:`SingularSystemError` when ``[A; 1]`` is numerically rank deficient.
    """
    if system.form != "conditional-mean":
        raise InvalidInputError(
            f"{system.form} systems are rank deficient by construction; use solve_reduced"
        )
    ell = system.A.shape[1]
    if system.constraint_mode == "append-sum-row":
        report = rank_diagnostic(system, tolerance, with_sum_row=True)
        needed = ell
    else:
        reduced = system.A[:, :-1] - system.A[:, -1:]
        s = np.linalg.svd(reduced, compute_uv=False) if ell > 1 else np.zeros(0)
        rank = int(np.sum(s > tolerance * s[0])) if s.size and s[0] > 0 else 0
        residual = float(np.linalg.norm(system.A @ np.ones(ell)))
        report = RankReport(rank, s, residual, tolerance)
        needed = ell - 1
    cond = report.condition_number
    if report.numerical_rank < needed or not cond <= cond_threshold:
        raise SingularSystemError(
            f"{method}: system is singular or ill-conditioned (rank {report.numerical_rank} < {needed} "
            f"or condition number {cond:.3g} > {cond_threshold:.3g}); zero denominator",
            report,
        )
    raw = _equality_lsq(system.A, system.b)
    q, active, iterations = simplex_lsq(system.A, system.b)
    estimate = make_prevalence(q)
    diag = Diagnostics(
        clipped=bool(active.any() or estimate.clipped),
        condition_number=cond,
        iterations=iterations,
        rank_report=report,
        active_bounds=tuple(bool(a) for a in active),
    )
    return EstimateReport(method, estimate, raw, diag)


def build_reduced_system(
    stats: StatisticProfile,
    train: LabeledDataset,
    test: UnlabeledDataset,
    target: str = "indicators",
    posterior: PosteriorModel | None = None,
    dropped_class: int | None = None,
    cond_threshold: float = CONDITION_THRESHOLD,
) -> ReducedSystem:
    ell = train.class_count
    if stats.r != ell - 1:
        raise InvalidInputError(f"reduced system needs {ell - 1} statistics, got {stats.r}")
    dropped_class = ell if dropped_class is None else int(dropped_class)
    if not 1 <= dropped_class <= ell:
        raise InvalidInputError(f"dropped class must be in 1..{ell}")
    full = build_covariance_system(stats, train, test, target, posterior)
    C = full.A[:, _kept(ell, dropped_class)]
    z = full.b
    sv = np.linalg.svd(C, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    s = None
    if sv[0] > 1e-14 and cond <= cond_threshold:
        s = np.linalg.solve(C, z)
    return ReducedSystem(C, z, s, cond, dropped_class, full.train_priors)


def solve_reduced(
    stats: StatisticProfile,
    train: LabeledDataset,
    test: UnlabeledDataset,
    target: str = "indicators",
    posterior: PosteriorModel | None = None,
    dropped_class: int | None = None,
    cond_threshold: float = CONDITION_THRESHOLD,
    method: str = "reduced-system",
) -> EstimateReport:
    """Invert the ``(l-1) x (l-1)`` covariance matrix ``C`` and recover all ``l`` priors."""
    red = build_reduced_system(stats, train, test, target, posterior, dropped_class, cond_threshold)
    if red.s is None:
        sv = np.linalg.svd(red.C, compute_uv=False)
        rank = int(np.sum(sv > RANK_TOLERANCE * sv[0])) if sv[0] > 0 else 0
        report = RankReport(rank, sv, float(np.linalg.norm(red.C.sum(axis=1))), RANK_TOLERANCE)
        raise SingularSystemError(
            f"{method}: covariance matrix C is not invertible (condition number "
            f"{red.condition_number:.3g} > {cond_threshold:.3g})",
            report,
        )
    raw = red.recover()
    estimate = make_prevalence(raw)
    diag = Diagnostics(clipped=estimate.clipped, condition_number=red.condition_number)
    diag.extra["reduced_system"] = red
    return EstimateReport(method, estimate, raw, diag)
