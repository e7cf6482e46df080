"""Gaussian-process surrogate and expected improvement for cost minimization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, NamedTuple, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.spatial.distance import cdist
from scipy.stats import norm

from clusterfit import config
from clusterfit.core.config_space import FeatureVector
from clusterfit.core.errors import ConfigurationError, GpInputError, NumericalError

logger = logging.getLogger(__name__)

_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class GpHyperparams:
    length_scales: tuple[float, ...]
    signal_variance: float = 1.0
    noise_variance: float = 1e-4
    prior_mean: float = 0.0
    jitter_start: float = 1e-10
    jitter_max: float = 1e-6

    def __post_init__(self) -> None:
        if not self.length_scales or any(not s > 0 for s in self.length_scales):
            raise ConfigurationError(f"length scales must be > 0 (got {self.length_scales})")
        if not self.signal_variance > 0:
            raise ConfigurationError("signal_variance must be > 0")
        if self.noise_variance < 0:
            raise ConfigurationError("noise_variance must be >= 0")

    @classmethod
    def isotropic(cls, dim: int, length_scale: float = 0.3, **kwargs: Any) -> "GpHyperparams":
        return cls(length_scales=(float(length_scale),) * dim, **kwargs)

    @classmethod
    def from_config(cls, dim: int) -> "GpHyperparams":
        return cls.isotropic(
            dim,
            length_scale=float(config.get("gp.length_scale", 0.3)),
            signal_variance=float(config.get("gp.signal_variance", 1.0)),
            noise_variance=float(config.get("gp.noise_variance", 1e-4)),
            prior_mean=float(config.get("gp.prior_mean", 0.0)),
            jitter_start=float(config.get("gp.jitter_start", 1e-10)),
            jitter_max=float(config.get("gp.jitter_max", 1e-6)),
        )


def matern52(
    a: np.ndarray, b: np.ndarray, length_scales: Sequence[float], signal_variance: float
) -> np.ndarray:
    """Matérn 5/2 covariance between the rows of ``a`` and ``b``."""
    ls = np.asarray(length_scales, dtype=float)
    r = cdist(a / ls, b / ls)
    sr = _SQRT5 * r
    return signal_variance * (1.0 + sr + sr ** 2 / 3.0) * np.exp(-sr)


def _as_matrix(x: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    if isinstance(x, np.ndarray):
        arr = np.asarray(x, dtype=float)
    else:
        rows = [v.as_array() if isinstance(v, FeatureVector) else np.asarray(v, dtype=float)
                for v in x]
        if len({r.shape for r in rows}) > 1:
            raise GpInputError("feature vectors differ in dimension")
        arr = np.array(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise GpInputError(f"expected a 2-d input matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """Fitted GP state; immutable, predictions are pure."""
    train_inputs: np.ndarray
    train_targets: np.ndarray
    factor: np.ndarray          # lower Cholesky factor of K + (noise + jitter) I
    alpha: np.ndarray           # (K + noise I)^-1 (z - prior_mean), z standardized
    target_mean: float
    target_std: float
    hyperparams: GpHyperparams
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]

    def standardize(self, y: np.ndarray | float) -> np.ndarray | float:
        return (y - self.target_mean) / self.target_std

    def destandardize(self, z: np.ndarray | float) -> np.ndarray | float:
        return z * self.target_std + self.target_mean

    def predict_many(self, x: Sequence[FeatureVector] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and std (de-standardized) for each row of ``x``."""
        xq = _as_matrix(x)
        if xq.shape[1] != self.dim:
            raise GpInputError(f"query dimension {xq.shape[1]} != training dimension {self.dim}")
        hp = self.hyperparams
        k_star = matern52(self.train_inputs, xq, hp.length_scales, hp.signal_variance)
        mean_z = hp.prior_mean + k_star.T @ self.alpha
        v = cho_solve((self.factor, True), k_star)
        var_z = hp.signal_variance - np.sum(k_star * v, axis=0)
        std_z = np.sqrt(np.clip(var_z, 0.0, None))
        return self.destandardize(mean_z), std_z * self.target_std


def _standardization(y: np.ndarray) -> tuple[float, float]:
    # one point: identity; equal targets: centred, unit scale
    if y.size == 1:
        return 0.0, 1.0
    mean = float(np.mean(y))
    std = float(np.std(y))
    if std == 0.0:
        return mean, 1.0
    return mean, std


def _factorize(k: np.ndarray, hp: GpHyperparams) -> tuple[np.ndarray, float]:
    n = k.shape[0]
    try:
        return cholesky(k + hp.noise_variance * np.eye(n), lower=True), 0.0
    except LinAlgError:
        pass
    jitter = hp.jitter_start
    while jitter <= hp.jitter_max * (1 + 1e-9):
        try:
            factor = cholesky(k + (hp.noise_variance + jitter) * np.eye(n), lower=True)
            logger.warning("Kernel matrix needed jitter %.0e to factorize", jitter)
            return factor, jitter
        except LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"kernel matrix not positive definite even with jitter {hp.jitter_max:g}")


def gp_fit(
    x: Sequence[FeatureVector] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    hp: GpHyperparams,
) -> GpPosterior:
    """Condition a Matérn 5/2 GP on standardized targets."""
    xt = _as_matrix(x)
    yt = np.asarray(y, dtype=float).ravel()
    if xt.shape[0] == 0 or xt.shape[0] != yt.size:
        raise GpInputError(f"need matching non-empty inputs, got {xt.shape[0]} x and {yt.size} y")
    if xt.shape[1] != len(hp.length_scales):
        raise GpInputError(
            f"input dimension {xt.shape[1]} != {len(hp.length_scales)} length scales"
        )
    mean, std = _standardization(yt)
    z = (yt - mean) / std
    k = matern52(xt, xt, hp.length_scales, hp.signal_variance)
    factor, jitter = _factorize(k, hp)
    alpha = cho_solve((factor, True), z - hp.prior_mean)
    return GpPosterior(
        train_inputs=xt,
        train_targets=yt,
        factor=factor,
        alpha=alpha,
        target_mean=mean,
        target_std=std,
        hyperparams=hp,
        jitter=jitter,
    )


def gp_predict(model: GpPosterior, x: FeatureVector | np.ndarray) -> tuple[float, float]:
    mean, std = model.predict_many(_as_matrix(x if not isinstance(x, FeatureVector) else [x]))
    return float(mean[0]), float(std[0])


def log_marginal_likelihood(model: GpPosterior) -> float:
    z = (model.train_targets - model.target_mean) / model.target_std - model.hyperparams.prior_mean
    n = z.size
    return float(
        -0.5 * z @ model.alpha
        - np.sum(np.log(np.diag(model.factor)))
        - 0.5 * n * np.log(2 * np.pi)
    )


def refit_length_scale(
    x: Sequence[FeatureVector] | np.ndarray,
    y: Sequence[float] | np.ndarray,
    hp: GpHyperparams,
    grid: Sequence[float] = (0.1, 0.2, 0.3, 0.5, 1.0),
) -> GpHyperparams:
    """Isotropic length scale with the highest marginal likelihood on ``grid``.

    Ties keep the earlier grid value.
    """
    best_hp, best_ll = hp, -np.inf
    for ls in grid:
        cand = GpHyperparams(
            length_scales=(float(ls),) * len(hp.length_scales),
            signal_variance=hp.signal_variance,
            noise_variance=hp.noise_variance,
            prior_mean=hp.prior_mean,
            jitter_start=hp.jitter_start,
            jitter_max=hp.jitter_max,
        )
        try:
            ll = log_marginal_likelihood(gp_fit(x, y, cand))
        except NumericalError:
            continue
        if ll > best_ll:
            best_hp, best_ll = cand, ll
    return best_hp


def expected_improvement(
    mean: float | np.ndarray, std: float | np.ndarray, best_cost: float
) -> float | np.ndarray:
    """Expected reduction below ``best_cost`` (minimization form)."""
    mean_a = np.asarray(mean, dtype=float)
    std_a = np.clip(np.asarray(std, dtype=float), 0.0, None)
    improvement = best_cost - mean_a
    safe_std = np.where(std_a > 0, std_a, 1.0)
    z = improvement / safe_std
    ei = np.where(
        std_a > 0,
        improvement * norm.cdf(z) + std_a * norm.pdf(z),
        np.maximum(improvement, 0.0),
    )
    ei = np.maximum(ei, 0.0)
    if np.ndim(ei) == 0:
        return float(ei)
    return ei


class Candidate(NamedTuple):
    config_id: int
    features: FeatureVector | np.ndarray
    hourly_cost: float = 0.0


class Selection(NamedTuple):
    config_id: int
    ei: float


def select_next(
    model: GpPosterior, candidates: Sequence[Candidate], best_cost: float
) -> Selection | None:
    """Candidate with the highest EI; None when nothing is left to explore.

    Ties go to the lower hourly cost, then the lower config id.
    """
    if not candidates:
        return None
    feats = np.array(
        [c.features.as_array() if isinstance(c.features, FeatureVector) else c.features
         for c in candidates],
        dtype=float,
    )
    mean, std = model.predict_many(feats)
    ei = np.atleast_1d(expected_improvement(mean, std, best_cost))
    top = float(ei.max())
    winner = min(
        (c for c, e in zip(candidates, ei) if e == top),
        key=lambda c: (c.hourly_cost, c.config_id),
    )
    return Selection(config_id=winner.config_id, ei=top)
