"""Domain types shared by every estimator.

Labels are 1-based (classes ``1..l``). Datasets may carry non-negative row
weights; a weighted dataset over a finite support represents a population
exactly, which is how the discrete toy models are evaluated without sampling
noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from prevalest.errors import InvalidInputError

SIMPLEX_ATOL = 1e-12
POSTERIOR_ATOL = 1e-9

Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PrevalenceVector:
    """A point on the probability simplex over ``l >= 2`` classes."""

    probs: np.ndarray
    clipped: bool = False
    degenerate: bool = False

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 2:
            raise InvalidInputError(f"prevalence vector needs at least 2 entries, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise InvalidInputError("prevalence vector has non-finite entries")
        if np.any(probs < 0) or np.any(probs > 1):
            raise InvalidInputError(f"prevalence entries outside [0, 1]: {probs}")
        if abs(probs.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidInputError(f"prevalence entries sum to {probs.sum():.17g}, not 1")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def n_classes(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.probs.size

    def __getitem__(self, i):
        return self.probs[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __repr__(self):
        flags = "".join([", clipped" if self.clipped else "", ", degenerate" if self.degenerate else ""])
        return f"PrevalenceVector({np.array2string(self.probs, precision=6)}{flags})"


def make_prevalence(raw) -> PrevalenceVector:
    """Project a raw estimate onto the simplex by clipping to [0, 1] and renormalizing.

    If every entry clips to zero the uniform vector is returned with
    ``degenerate=True``. ``clipped`` is set whenever any entry left [0, 1].
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 2:
        raise InvalidInputError(f"need a vector with at least 2 entries, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise InvalidInputError(f"non-finite prevalence estimate: {raw}")
    clipped = bool(np.any(raw < 0) or np.any(raw > 1))
    probs = np.clip(raw, 0.0, 1.0)
    total = probs.sum()
    if not clipped and abs(total - 1.0) <= SIMPLEX_ATOL:
        return PrevalenceVector(probs)
    if total <= 0:
        return PrevalenceVector(np.full(raw.size, 1.0 / raw.size), clipped=clipped, degenerate=True)
    probs = probs / total
    # renormalization can leave a last-ulp excess above 1 for one-hot vectors
    probs = np.minimum(probs, 1.0)
    return PrevalenceVector(probs, clipped=clipped)


def _check_weights(weights, n):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise InvalidInputError(f"weights must have shape ({n},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidInputError("weights must be finite, non-negative and not all zero")
    return _frozen(w / w.sum())


def _as_feature_matrix(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidInputError(f"features must be a 2-d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise InvalidInputError(f"non-finite feature value at row {bad[0]}, column {bad[1]}")
    return x


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Training sample: features, 1-based labels and optional row weights."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = _as_feature_matrix(self.features)
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.size != x.shape[0]:
            raise InvalidInputError(f"{y.size} labels for {x.shape[0]} feature rows")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InvalidInputError("labels must be integers")
            y = y.astype(int)
        ell = int(self.class_count)
        if ell < 2:
            raise InvalidInputError("need at least 2 classes")
        if y.min() < 1 or y.max() > ell:
            raise InvalidInputError(f"labels must lie in 1..{ell}")
        w = _check_weights(self.weights, y.size)
        mass = np.bincount(y - 1, weights=w, minlength=ell)
        missing = [c + 1 for c in range(ell) if mass[c] <= 0]
        if missing:
            raise InvalidInputError(f"classes {missing} have no training examples")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "class_count", ell)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.labels.size

    def row_weights(self) -> np.ndarray:
        """Normalized row weights (uniform when none were given)."""
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights

    def class_indicators(self) -> np.ndarray:
        """``n x l`` matrix of 0/1 class membership."""
        return (self.labels[:, None] == np.arange(1, self.class_count + 1)[None, :]).astype(float)


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    features: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = _as_feature_matrix(self.features)
        if x.shape[0] < 1:
            raise InvalidInputError("test dataset is empty")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "weights", _check_weights(self.weights, x.shape[0]))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def row_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights


@dataclass(frozen=True, eq=False)
class PosteriorModel:
    """Training posteriors ``P[Y=y | X=x]`` plus the training priors they refer to.

    ``predict`` maps an ``m x d`` feature matrix to an ``m x l`` matrix. Calling
    the model validates the output and renormalizes rows so they sum to one to
    machine precision.
    """

    predict: Callable[[np.ndarray], np.ndarray]
    priors: PrevalenceVector

    def __call__(self, features) -> np.ndarray:
        x = _as_feature_matrix(features)
        out = np.asarray(self.predict(x), dtype=float)
        if out.shape != (x.shape[0], self.priors.n_classes):
            raise InvalidInputError(
                f"posterior model returned shape {out.shape}, expected {(x.shape[0], self.priors.n_classes)}"
            )
        if not np.all(np.isfinite(out)) or np.any(out < 0):
            raise InvalidInputError("posterior model returned negative or non-finite values")
        sums = out.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > POSTERIOR_ATOL):
            raise InvalidInputError("posterior rows do not sum to 1")
        return out / sums[:, None]

    @property
    def n_classes(self) -> int:
        return self.priors.n_classes


HARD_MODES = ("one-vs-all", "friedman-threshold", "cost-sensitive")


@dataclass(frozen=True, eq=False)
class HardClassifier:
    """Per-class crisp indicators ``f_y(x) in {0, 1}``.

    ``indicators`` maps an ``m x d`` feature matrix to an ``m x l`` 0/1 matrix,
    column ``y-1`` holding ``f_y``.
    """

    indicators: Callable[[np.ndarray], np.ndarray]
    n_classes: int
    mode: str = "one-vs-all"
    details: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in HARD_MODES:
            raise InvalidInputError(f"unknown classifier mode {self.mode!r}")

    def __call__(self, features) -> np.ndarray:
        x = _as_feature_matrix(features)
        out = np.asarray(self.indicators(x), dtype=float)
        if out.shape != (x.shape[0], self.n_classes):
            raise InvalidInputError(f"classifier returned shape {out.shape}")
        if not np.all((out == 0) | (out == 1)):
            raise InvalidInputError("hard classifier output must be exactly 0 or 1")
        return out


def empirical_priors(data: LabeledDataset) -> PrevalenceVector:
    """Weighted class relative frequencies."""
    mass = np.bincount(data.labels - 1, weights=data.row_weights(), minlength=data.class_count)
    return PrevalenceVector(mass / mass.sum())


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; accepts an int or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def sample_prior_shift(
    samplers: Sequence[Sampler],
    q,
    n: int,
    seed,
    return_labels: bool = False,
):
    """Draw ``n`` test points whose labels follow ``q`` and features the class conditionals.

    Each sampler is called as ``sampler(rng, size)`` and must return ``size``
    feature rows. Deterministic given ``seed``. With ``return_labels`` the hidden
    1-based labels are returned as well, for test harnesses.
    """
    q = q if isinstance(q, PrevalenceVector) else PrevalenceVector(q)
    if len(samplers) != q.n_classes:
        raise InvalidInputError(f"{len(samplers)} samplers for {q.n_classes} classes")
    n = int(n)
    if n < 1:
        raise InvalidInputError("sample size must be positive")
    rng = make_rng(seed)
    labels = rng.choice(q.n_classes, size=n, p=q.probs) + 1
    blocks = {}
    for c, sampler in enumerate(samplers, start=1):
        count = int(np.sum(labels == c))
        if count:
            blocks[c] = _as_feature_matrix(sampler(rng, count))
    d = next(iter(blocks.values())).shape[1]
    features = np.empty((n, d))
    for c, block in blocks.items():
        features[labels == c] = block
    test = UnlabeledDataset(features)
    if return_labels:
        return test, labels
    return test


@dataclass(frozen=True, eq=False)
class DiscretePopulation:
    """A finite feature space ``{0, ..., k-1}`` with known class conditionals.

    ``conditionals[x, y-1] = P[X=x | Y=y]``. Provides exact (population-level)
    training and test datasets, the exact posterior, and a brute-force solve of
    the total-probability system used as an oracle.
    """

    conditionals: np.ndarray
    train_priors: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.conditionals, dtype=float)
        if g.ndim != 2 or np.any(g < 0) or np.any(np.abs(g.sum(axis=0) - 1) > 1e-12):
            raise InvalidInputError("conditionals must be a k x l matrix with columns summing to 1")
        p = PrevalenceVector(self.train_priors).probs
        if p.size != g.shape[1]:
            raise InvalidInputError("train priors do not match the number of classes")
        object.__setattr__(self, "conditionals", _frozen(g))
        object.__setattr__(self, "train_priors", p)

    @property
    def support_size(self) -> int:
        return self.conditionals.shape[0]

    @property
    def n_classes(self) -> int:
        return self.conditionals.shape[1]

    def points(self) -> np.ndarray:
        return np.arange(self.support_size, dtype=float)[:, None]

    def train(self) -> LabeledDataset:
        k, ell = self.conditionals.shape
        joint = self.conditionals * self.train_priors[None, :]
        xs = np.repeat(np.arange(k, dtype=float), ell)
        ys = np.tile(np.arange(1, ell + 1), k)
        return LabeledDataset(xs[:, None], ys, ell, weights=joint.ravel())

    def feature_law(self, q) -> np.ndarray:
        return self.conditionals @ np.asarray(q, dtype=float)

    def test(self, q) -> UnlabeledDataset:
        return UnlabeledDataset(self.points(), weights=self.feature_law(q))

    def posterior_table(self) -> np.ndarray:
        joint = self.conditionals * self.train_priors[None, :]
        return joint / joint.sum(axis=1, keepdims=True)

    def posterior_model(self) -> PosteriorModel:
        table = self.posterior_table()

        def predict(x):
            return table[np.rint(x[:, 0]).astype(int)]

        return PosteriorModel(predict, PrevalenceVector(self.train_priors))

    def lookup(self, table: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Turn a per-point table (``k x ...``) into a feature-matrix function."""
        table = np.asarray(table)

        def f(x):
            return table[np.rint(x[:, 0]).astype(int)]

        return f

    def brute_force_priors(self, feature_law) -> np.ndarray:
        """Least-squares solve of ``conditionals @ q = feature_law``."""
        q, *_ = np.linalg.lstsq(self.conditionals, np.asarray(feature_law, dtype=float), rcond=None)
        return q
