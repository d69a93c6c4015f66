"""Two-feature Gaussian suppressor model and its Bayes-optimal linear rule.

Data are generated as ``x = a*z + eta`` with ``z`` a Rademacher signal,
``a = (1, epsilon)`` and ``eta ~ N(0, Sigma)``.  The label is ``y = z``.
Feature 1 carries the signal; for ``epsilon = 0`` feature 2 is a pure
suppressor: independent of ``y`` yet useful to any multivariate rule
whenever the noise correlation ``c`` is non-zero.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np
from scipy.special import expit

from .errors import ParameterError, SingularCovarianceError

Point = Tuple[float, float]

# records per independently seeded generator block
SAMPLE_BLOCK = 1 << 16


@dataclass(frozen=True)
class GenParams:
    """Parameters of the generative model.

    ``s1`` and ``s2`` are noise standard deviations.  Use
    :meth:`from_variances` when working with the variances ``s1**2`` and
    ``s2**2`` that the figures and the CLI use.
    """

    c: float
    s1: float
    s2: float
    epsilon: float = 0.0

    def __post_init__(self):
        for name in ("c", "s1", "s2", "epsilon"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if abs(self.c) > 1.0:
            raise ParameterError(f"correlation c must lie in [-1, 1], got {self.c!r}")
        if self.s1 <= 0.0 or self.s2 <= 0.0:
            raise ParameterError(
                f"noise standard deviations must be positive, got s1={self.s1!r}, s2={self.s2!r}"
            )

    @classmethod
    def from_variances(cls, c: float, s1sq: float, s2sq: float, epsilon: float = 0.0) -> "GenParams":
        if s1sq <= 0.0 or s2sq <= 0.0:
            raise ParameterError(f"noise variances must be positive, got s1sq={s1sq!r}, s2sq={s2sq!r}")
        return cls(float(c), math.sqrt(s1sq), math.sqrt(s2sq), float(epsilon))

    @property
    def s1sq(self) -> float:
        return self.s1 * self.s1

    @property
    def s2sq(self) -> float:
        return self.s2 * self.s2

    @property
    def k(self) -> float:
        """Ratio ``c*s1/s2``; the suppressor weight is ``-alpha*k``."""
        return self.c * self.s1 / self.s2

    @property
    def alpha(self) -> float:
        return 1.0 / math.sqrt(1.0 + self.k * self.k)

    @property
    def beta(self) -> float:
        return 1.0 / (1.0 + self.k * self.k)

    @property
    def pattern(self) -> np.ndarray:
        return np.array([1.0, self.epsilon])

    # Class means as the closed-form densities and the rule take them.  For
    # epsilon != 0 the sampler's class -1 mean is (-1, -epsilon) instead.
    @property
    def mu_pos(self) -> np.ndarray:
        return np.array([1.0, self.epsilon])

    @property
    def mu_neg(self) -> np.ndarray:
        return np.array([-1.0, self.epsilon])

    @property
    def cov(self) -> np.ndarray:
        off = self.c * self.s1 * self.s2
        return np.array([[self.s1sq, off], [off, self.s2sq]])

    @property
    def is_singular(self) -> bool:
        return abs(self.c) >= 1.0

    @property
    def cov_inv(self) -> np.ndarray:
        """Closed-form inverse of the noise covariance."""
        self.require_invertible()
        scale = 1.0 / (self.s1sq * self.s2sq * (1.0 - self.c * self.c))
        off = -self.c * self.s1 * self.s2
        return scale * np.array([[self.s2sq, off], [off, self.s1sq]])

    def as_variances(self) -> dict:
        """``c``, ``s1sq``, ``s2sq`` and ``epsilon`` for reports.

        Variances are rounded to 15 significant digits so that values given
        to :meth:`from_variances` read back unchanged after the square root.
        """
        return {
            "c": self.c,
            "s1sq": float(f"{self.s1sq:.15g}"),
            "s2sq": float(f"{self.s2sq:.15g}"),
            "epsilon": self.epsilon,
        }

    def require_invertible(self) -> None:
        if self.is_singular:
            raise SingularCovarianceError(f"noise covariance is singular for |c| = 1 (c={self.c!r})")

    def require_base_model(self, what: str = "this operation") -> None:
        if self.epsilon != 0.0:
            raise ParameterError(f"{what} is derived for epsilon = 0, got epsilon={self.epsilon!r}")


@dataclass(frozen=True)
class BayesLinearRule:
    """Linear decision function ``f(x) = w1*x1 + w2*x2 + b`` with unit-norm weights."""

    w1: float
    w2: float
    b: float
    alpha: float

    @property
    def w(self) -> np.ndarray:
        return np.array([self.w1, self.w2])

    def decision(self, x) -> np.ndarray:
        """Evaluate ``f`` on a point or an ``(n, 2)`` array of points."""
        x = np.asarray(x, dtype=float)
        return x[..., 0] * self.w1 + x[..., 1] * self.w2 + self.b

    __call__ = decision

    def classify(self, x) -> np.ndarray:
        return np.where(self.decision(x) >= 0.0, 1, -1)


@dataclass(frozen=True)
class LabeledDataset:
    """Samples of the generative process, stored column-wise."""

    x: np.ndarray
    y: np.ndarray
    seed: int
    params: GenParams

    def __len__(self) -> int:
        return len(self.y)

    @property
    def x1(self) -> np.ndarray:
        return self.x[:, 0]

    @property
    def x2(self) -> np.ndarray:
        return self.x[:, 1]

    def records(self) -> Iterator[Tuple[float, float, int]]:
        for (x1, x2), y in zip(self.x, self.y):
            yield float(x1), float(x2), int(y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["x1", "x2", "y"])
        for x1, x2, y in self.records():
            writer.writerow([repr(x1), repr(x2), y])
        return buf.getvalue()


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    return seed


def _block_generator(seed: int, block: int) -> np.random.Generator:
    # counter-based bit generator keyed on (seed, block index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def sample_dataset(params: GenParams, n: int, seed: int) -> LabeledDataset:
    """Draw ``n`` labeled records.

    Records are produced in blocks of :data:`SAMPLE_BLOCK`, each from its own
    generator keyed on ``(seed, block index)``, so a record depends only on
    the seed and its position.  A shorter draw is a prefix of a longer one.
    """
    n = int(n)
    if n < 1:
        raise ParameterError(f"sample size must be at least 1, got {n}")
    seed = _check_seed(seed)

    z = np.empty(n)
    g = np.empty((n, 2))
    for block, start in enumerate(range(0, n, SAMPLE_BLOCK)):
        stop = min(start + SAMPLE_BLOCK, n)
        rng = _block_generator(seed, block)
        full_z = rng.integers(0, 2, size=SAMPLE_BLOCK)
        full_g = rng.standard_normal((SAMPLE_BLOCK, 2))
        z[start:stop] = 2.0 * full_z[: stop - start] - 1.0
        g[start:stop] = full_g[: stop - start]

    # explicit factorisation stays valid at |c| = 1
    c = params.c
    eta1 = params.s1 * g[:, 0]
    eta2 = params.s2 * (c * g[:, 0] + math.sqrt(max(0.0, 1.0 - c * c)) * g[:, 1])
    x = np.column_stack((z + eta1, params.epsilon * z + eta2))
    return LabeledDataset(x=x, y=z.astype(np.int64), seed=seed, params=params)


def _label_mean(params: GenParams, y: int) -> np.ndarray:
    if y == 1:
        return params.mu_pos
    if y == -1:
        return params.mu_neg
    raise ParameterError(f"label must be +1 or -1, got {y!r}")


def class_conditional_density(params: GenParams, x, y: int) -> np.ndarray:
    """Density of ``N(mu_y, Sigma)`` at ``x`` (a point or an ``(n, 2)`` array)."""
    inv = params.cov_inv
    d = np.asarray(x, dtype=float) - _label_mean(params, y)
    quad = np.einsum("...i,ij,...j->...", d, inv, d)
    det = params.s1sq * params.s2sq * (1.0 - params.c * params.c)
    return np.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det))


def joint_density(params: GenParams, x) -> np.ndarray:
    return 0.5 * class_conditional_density(params, x, 1) + 0.5 * class_conditional_density(params, x, -1)


def bayes_rule(params: GenParams) -> BayesLinearRule:
    """Bayes-optimal linear rule, normalised to ``||w|| = 1``."""
    params.require_invertible()
    a = params.alpha
    k = params.k
    return BayesLinearRule(w1=a, w2=-a * k, b=params.epsilon * a * k, alpha=a)


def mahalanobis_classify(params: GenParams, x) -> np.ndarray:
    """Assign each point to the class mean with the smaller squared Mahalanobis distance.

    Ties go to +1.  Distances that agree to within a few ulps count as ties,
    so points constructed on the boundary classify as +1.
    """
    inv = params.cov_inv
    x = np.asarray(x, dtype=float)
    dp = x - params.mu_pos
    dn = x - params.mu_neg
    d2p = np.einsum("...i,ij,...j->...", dp, inv, dp)
    d2n = np.einsum("...i,ij,...j->...", dn, inv, dn)
    tol = 64.0 * np.finfo(float).eps * np.maximum(np.maximum(d2p, d2n), 1.0)
    return np.where(d2p - d2n <= tol, 1, -1)


def posterior_y_given_x1(params: GenParams, x1) -> np.ndarray:
    """``P(Y = 1 | X1 = x1)``, a logistic function of ``2*x1/s1**2``."""
    params.require_base_model("posterior_y_given_x1")
    return expit(2.0 * np.asarray(x1, dtype=float) / params.s1sq)


def h_function(params: GenParams, x1) -> np.ndarray:
    """Posterior-weighted shift ``(x1-1)*P(+1|x1) + (x1+1)*P(-1|x1)``.

    Evaluated as ``x1 - tanh(x1/s1**2)``, which is the same quantity but odd
    to the last bit and free of cancellation for large ``|x1|``.
    """
    x1 = np.asarray(x1, dtype=float)
    return x1 - np.tanh(x1 / params.s1sq)


def cond_expectation(params: GenParams, known_feature: int, value) -> np.ndarray:
    """Conditional mean of the *other* feature given ``X_known = value``.

    ``known_feature=1`` gives ``E[X2 | X1 = value]``; ``known_feature=2``
    gives ``E[X1 | X2 = value]``.
    """
    params.require_base_model("cond_expectation")
    value = np.asarray(value, dtype=float)
    if known_feature == 1:
        return params.c * params.s2 / params.s1 * h_function(params, value)
    if known_feature == 2:
        return params.c * params.s1 / params.s2 * value
    raise ParameterError(f"feature index must be 1 or 2, got {known_feature!r}")
