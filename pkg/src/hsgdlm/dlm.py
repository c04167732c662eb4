"""Conjugate Normal-Gamma dynamic linear model for a single series.

The observation equation is ``y_t = F_t' theta_t + nu_t`` with
``nu_t ~ N(0, 1/lambda_t)``. Between steps the state covariance is inflated by
block discounting and the precision by a beta-gamma discount.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, NumericalError
from .linalg import symmetrize


@dataclass(frozen=True)
class DlmState:
    """Posterior ``NG(m, C, n, s)``."""

    m: np.ndarray
    C: np.ndarray
    n: float
    s: float

    @property
    def p(self) -> int:
        return len(self.m)


@dataclass(frozen=True)
class PriorState:
    """Evolved prior ``NG(a, R, r, s_prev)``."""

    a: np.ndarray
    R: np.ndarray
    r: float
    s: float

    @property
    def p(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class DiscountConfig:
    delta_phi: float = 0.99
    delta_gamma: float = 0.95
    beta_lambda: float = 0.95

    def __post_init__(self) -> None:
        for name in ("delta_phi", "delta_gamma", "beta_lambda"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"discount.{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class Forecast:
    mean: float
    scale: float
    dof: float

    def interval(self, mass: float = 0.9) -> tuple[float, float]:
        """Central Student-t interval holding ``mass`` probability."""
        if mass >= 1.0:
            return -np.inf, np.inf
        half = stats.t.ppf(0.5 + 0.5 * mass, self.dof) * np.sqrt(self.scale)
        return self.mean - half, self.mean + half


def initial_prior(p: int, *, var: float = 1.0, r: float = 1.0, s: float = 1.0) -> PriorState:
    return PriorState(np.zeros(p), var * np.eye(p), float(r), float(s))


def kalman_update(prior: PriorState, F: np.ndarray, y: float) -> DlmState:
    """Conjugate update of ``prior`` on observing ``y`` with regressors ``F``."""
    F = np.asarray(F, dtype=float)
    if F.shape != prior.a.shape:
        raise ValueError(f"regressor length {F.shape} does not match state {prior.a.shape}")
    RF = prior.R @ F
    e = y - F @ prior.a
    q = prior.s + F @ RF
    if not q > 0:
        raise NumericalError(f"non-positive one-step variance q={q}")
    A = RF / q
    z = (prior.r + e * e / q) / (prior.r + 1.0)
    m = prior.a + A * e
    C = symmetrize((prior.R - np.outer(A, A) * q) * z)
    return DlmState(m, C, prior.r + 1.0, z * prior.s)


def discount_matrix(B: np.ndarray, n_endo: int, cfg: DiscountConfig) -> np.ndarray:
    """Evolution variance ``W`` from ``B = G C G'`` by block discounting.

    The leading ``n_endo`` coordinates form the own-feature block and the rest
    the parent block; the cross blocks use the geometric mean discount.
    """
    f_e = 1.0 / cfg.delta_phi - 1.0
    f_p = 1.0 / cfg.delta_gamma - 1.0
    f_x = 1.0 / np.sqrt(cfg.delta_phi * cfg.delta_gamma) - 1.0
    p = B.shape[0]
    factor = np.full((p, p), f_x)
    factor[:n_endo, :n_endo] = f_e
    factor[n_endo:, n_endo:] = f_p
    return B * factor


def evolve(
    post: DlmState, G: np.ndarray | None, cfg: DiscountConfig, n_endo: int
) -> PriorState:
    """Evolve a posterior to the next prior.

    ``G`` may be a full matrix, a vector holding its diagonal, or ``None`` for
    the identity.
    """
    p = post.p
    if not 0 <= n_endo <= p:
        raise ValueError(f"n_endo={n_endo} outside [0, {p}]")
    if G is None:
        a, B = post.m.copy(), post.C.copy()
    else:
        G = np.asarray(G, dtype=float)
        if G.ndim == 1:
            a = G * post.m
            B = post.C * np.outer(G, G)
        else:
            a = G @ post.m
            B = G @ post.C @ G.T
    B = symmetrize(B)
    R = symmetrize(B + discount_matrix(B, n_endo, cfg))
    return PriorState(a, R, cfg.beta_lambda * post.n, post.s)


def forecast_one(prior: PriorState, F: np.ndarray) -> Forecast:
    F = np.asarray(F, dtype=float)
    q = prior.s + F @ prior.R @ F
    if not q > 0:
        raise NumericalError(f"non-positive one-step variance q={q}")
    return Forecast(float(F @ prior.a), float(q), float(prior.r))
