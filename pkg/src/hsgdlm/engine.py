"""Coupled multi-series filtering cycle.

Each series runs its own conjugate DLM whose regressors include the
same-day values of its parents. The per-series posteriors are updated in
parallel, re-coupled by importance weights ``|det(I - Gamma)|`` over Monte
Carlo draws, and projected back to independent Normal-Gammas by variational
Bayes before evolving to the next prior.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from . import rng as rngmod
from .dlm import (
    DiscountConfig,
    DlmState,
    PriorState,
    evolve,
    forecast_one,
    initial_prior,
    kalman_update,
)
from .errors import ConfigError, DegenerateWeightsError, NumericalError
from .linalg import min_eig, shrink_to_pd
from .parents import (
    ParentConfig,
    ParentSets,
    WishartState,
    age_down,
    age_up,
    downset_decay_matrix,
    promote_and_retire,
    propose_candidates,
    reindex,
    snr_scores,
    wishart_update,
)

__all__ = [
    "EngineConfig",
    "Engine",
    "SampleBatch",
    "shrink_to_pd",
    "sample_normal_gamma",
    "sample_posteriors",
    "recouple_weights",
    "importance_weights",
    "log_abs_det",
    "vb_decouple",
    "joint_forecast",
    "forecast_k_steps",
]

logger = logging.getLogger(__name__)

PURPOSE_FORECAST = 1
PURPOSE_POSTERIOR = 2
SPLU_BLOCK = 64


@dataclass(frozen=True)
class EngineConfig:
    discount: DiscountConfig = field(default_factory=DiscountConfig)
    parents: ParentConfig = field(default_factory=ParentConfig)
    n_mc: int = 500
    ess_floor: float = 10.0
    interval_mass: float = 0.9
    prior_var: float = 1.0
    prior_r: float = 1.0
    prior_s: float = 1.0
    det_tol: float = 1e-10
    max_reject_frac: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_mc < 2:
            raise ConfigError(f"engine.n_mc must be >= 2, got {self.n_mc}")
        if not 0.0 < self.interval_mass < 1.0:
            raise ConfigError("engine.interval_mass must lie in (0, 1)")
        if self.ess_floor < 1 or self.ess_floor > self.n_mc:
            raise ConfigError("engine.ess_floor must lie in [1, n_mc]")
        for name in ("prior_var", "prior_r", "prior_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"engine.{name} must be positive")


# --------------------------------------------------------------------------
# sampling


def _factor(C: np.ndarray, name: str) -> np.ndarray:
    """Lower Cholesky factor of a PSD matrix; zero matrices give a zero factor."""
    if not np.any(C):
        return np.zeros_like(C)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    S, _ = shrink_to_pd(C)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"series {name}: Cholesky failed after shrinkage") from exc


def sample_normal_gamma(
    mean: np.ndarray, scale: np.ndarray, dof: float, s: float, n: int, gen: np.random.Generator, name: str = "?"
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``lambda ~ Gamma(dof/2, rate dof*s/2)`` and ``theta | lambda ~ N(mean, scale/(s lambda))``."""
    lam = gen.gamma(dof / 2.0, 2.0 / (dof * s), size=n)
    L = _factor(np.asarray(scale, dtype=float), name)
    z = gen.standard_normal((n, len(mean)))
    theta = mean + (z @ L.T) / np.sqrt(s * lam)[:, None]
    return theta, lam


@dataclass
class SampleBatch:
    """Monte Carlo draws for a subset of series.

    ``theta[j]`` is ``(N, p_j)`` and ``lam[:, c]`` belongs to ``series[c]``.
    """

    series: list[int]
    theta: dict[int, np.ndarray]
    lam: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.lam.shape[0]


def sample_posteriors(
    states: dict[int, DlmState],
    n_mc: int,
    seed: int,
    day: int,
    names: Sequence[str] | None = None,
) -> SampleBatch:
    """Independent Normal-Gamma draws for each state, one stream per series."""
    series = sorted(states)
    theta, lam = {}, np.empty((n_mc, len(series)))
    for c, j in enumerate(series):
        st = states[j]
        gen = rngmod.stream(seed, day, j, PURPOSE_POSTERIOR)
        theta[j], lam[:, c] = sample_normal_gamma(
            st.m, st.C, st.n, st.s, n_mc, gen, names[j] if names is not None else str(j)
        )
    return SampleBatch(series, theta, lam, np.full(n_mc, 1.0 / n_mc))


# --------------------------------------------------------------------------
# recoupling


def coupling_blocks(parents: dict[int, Sequence[int]], m: int) -> list[np.ndarray]:
    """Strongly connected components (size > 1) of the child -> parent graph.

    ``det(I - Gamma)`` factorizes over these blocks: with the nodes ordered
    topologically ``I - Gamma`` is block triangular with unit diagonal outside them.
    """
    rows, cols = [], []
    for j, ps in parents.items():
        rows += [j] * len(ps)
        cols += list(ps)
    if not rows:
        return []
    A = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    n_comp, labels = connected_components(A, directed=True, connection="strong")
    counts = np.bincount(labels, minlength=n_comp)
    return [np.flatnonzero(labels == c) for c in range(n_comp) if counts[c] > 1]


def log_abs_det(
    gamma_rows: dict[int, np.ndarray], parents: dict[int, Sequence[int]], m: int, n: int
) -> np.ndarray:
    """``log |det(I - Gamma_n)|`` for every draw, block by block.

    ``gamma_rows[j]`` is ``(N, |parents[j]|)``.
    """
    out = np.zeros(n)
    for block in coupling_blocks(parents, m):
        b = len(block)
        pos = {int(node): k for k, node in enumerate(block)}
        M = np.broadcast_to(np.eye(b), (n, b, b)).copy()
        for node in block:
            r = pos[int(node)]
            for c, par in enumerate(parents.get(int(node), ())):
                if par in pos:
                    M[:, r, pos[par]] -= gamma_rows[int(node)][:, c]
        if b > SPLU_BLOCK:
            for d in range(n):
                try:
                    lu = splu(csr_matrix(M[d]).tocsc())
                except RuntimeError:  # exactly singular
                    out[d] = -np.inf
                    continue
                out[d] += np.sum(np.log(np.abs(lu.U.diagonal())))
        else:
            sign, logdet = np.linalg.slogdet(M)
            out += np.where(sign == 0, -np.inf, logdet)
    return out


@dataclass(frozen=True)
class Weights:
    weights: np.ndarray
    entropy: float
    ess: float


def importance_weights(log_w: np.ndarray) -> Weights:
    log_w = np.asarray(log_w, dtype=float)
    if not np.any(np.isfinite(log_w)):
        raise DegenerateWeightsError("every importance weight is zero")
    N = len(log_w)
    if np.all(log_w == log_w[0]):
        return Weights(np.full(N, 1.0 / N), 0.0, float(N))
    w = np.exp(log_w - np.max(log_w))
    w /= w.sum()
    nz = w > 0
    entropy = float(np.sum(w[nz] * np.log(N * w[nz])))
    return Weights(w, max(entropy, 0.0), float(1.0 / np.sum(w * w)))


def recouple_weights(gammas: np.ndarray) -> Weights:
    """Importance weights ``|det(I - Gamma_n)|`` for dense ``(N, m, m)`` draws."""
    gammas = np.asarray(gammas, dtype=float)
    if np.any(np.diagonal(gammas, axis1=1, axis2=2)):
        raise ValueError("Gamma must have a zero diagonal")
    m = gammas.shape[1]
    sign, logdet = np.linalg.slogdet(np.eye(m) - gammas)
    return importance_weights(np.where(sign == 0, -np.inf, logdet))


def temper(log_w: np.ndarray, ess_floor: float) -> tuple[Weights, float]:
    """Raise weights to the largest power ``tau`` in [0, 1] keeping ESS >= floor."""
    full = importance_weights(log_w)
    if full.ess >= ess_floor:
        return full, 1.0
    finite = np.where(np.isfinite(log_w), log_w, np.min(log_w[np.isfinite(log_w)]) - 1e3)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if importance_weights(mid * finite).ess >= ess_floor:
            lo = mid
        else:
            hi = mid
    return importance_weights(lo * finite), lo


# --------------------------------------------------------------------------
# decoupling


@dataclass(frozen=True)
class VbResult:
    state: DlmState
    residual: float
    fallback: bool


def _dof_equation(n: float, p_minus_d: float, mean_lam: float, mean_log_lam: float) -> float:
    return (
        np.log(n + p_minus_d)
        - special.digamma(n / 2.0)
        - p_minus_d / n
        - np.log(2.0 * mean_lam)
        + mean_log_lam
    )


def _weighted_moments(theta, lam, w):
    wl = w * lam
    return wl.sum(), float(w @ np.log(lam)), wl @ theta, (theta * wl[:, None]).T @ theta


def _control_moments(theta, lam, w, ref: DlmState):
    """Weighted moments with the draws' known Normal-Gamma moments as control variates.

    Only the departure of ``w`` from uniform is estimated from the sample, so
    uniform weights return the reference moments exactly.
    """
    dw = w - 1.0 / len(w)
    d0, d1, d2, d3 = _weighted_moments(theta, lam, dw)
    inv_s = 1.0 / ref.s
    mean_lam = inv_s + d0
    mean_log_lam = special.digamma(ref.n / 2.0) - np.log(ref.n * ref.s / 2.0) + d1
    M1 = ref.m * inv_s + d2
    M2 = (np.outer(ref.m, ref.m) + ref.C) * inv_s + d3
    return mean_lam, mean_log_lam, M1, M2


def vb_decouple(
    theta: np.ndarray,
    lam: np.ndarray,
    weights: np.ndarray,
    n_prev: float,
    name: str = "?",
    reference: DlmState | None = None,
) -> VbResult:
    """Closest (in KL) Normal-Gamma to a weighted joint sample of ``(theta, lambda)``.

    When the draws came from the Normal-Gamma ``reference``, its closed-form
    moments serve as control variates. The fit then carries Monte Carlo error
    only through the non-uniformity of the weights. It falls back to the plain
    weighted moments if the corrected ones are not a valid Normal-Gamma.
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    p = theta.shape[1]
    mom = None
    if reference is not None:
        mean_lam, mean_log_lam, M1, M2 = _control_moments(theta, lam, w, reference)
        if mean_lam > 0 and np.log(mean_lam) > mean_log_lam:
            m = M1 / mean_lam
            V = M2 - mean_lam * np.outer(m, m)
            V = 0.5 * (V + V.T)
            if p == 0 or min_eig(V) > 0:
                mom = (mean_lam, mean_log_lam, m, V, 0.0)
    if mom is None:
        mean_lam, mean_log_lam, M1, _ = _weighted_moments(theta, lam, w)
        m = M1 / mean_lam
        D = theta - m
        V = (D * (w * lam)[:, None]).T @ D
        V = 0.5 * (V + V.T)
        Vinv = np.linalg.pinv(V, hermitian=True)
        d = float(np.sum(w * lam * np.sum((D @ Vinv) * D, axis=1)))
        mom = (mean_lam, mean_log_lam, m, V, max(p - d, 0.0))
    mean_lam, mean_log_lam, m, V, p_minus_d = mom
    f = lambda n: _dof_equation(n, p_minus_d, mean_lam, mean_log_lam)  # noqa: E731
    lo, hi = 1e-2, 1e6
    fallback = False
    try:
        n = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    except ValueError:
        warnings.warn(f"series {name}: dof root not bracketed; keeping n={n_prev:.4g}", RuntimeWarning, stacklevel=2)
        n = float(n_prev)
        fallback = True
    residual = float(abs(f(n)))
    s = (n + p_minus_d) / (n * mean_lam)
    return VbResult(DlmState(m, s * V, float(n), float(s)), residual, fallback)


# --------------------------------------------------------------------------
# forecasting


@dataclass
class JointForecast:
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    median: np.ndarray
    rejections: int = 0
    draws: np.ndarray | None = None


def _regressor(x: np.ndarray, y: np.ndarray, parents: Sequence[int]) -> np.ndarray:
    zp = np.nan_to_num(y[list(parents)], nan=0.0) if len(parents) else np.zeros(0)
    return np.concatenate([x, zp])


def joint_forecast(
    priors: Sequence[PriorState],
    X: np.ndarray,
    parents: Sequence[Sequence[int]],
    n_mc: int,
    *,
    seed: int = 0,
    day: int = 0,
    horizon: int = 0,
    mass: float = 0.9,
    det_tol: float = 1e-10,
    max_reject_frac: float = 0.1,
    names: Sequence[str] | None = None,
) -> JointForecast:
    """Predictive distribution of all series on one day.

    Series without parents get their analytic Student-t mean and interval.
    If any series has parents, the system ``y = Gamma y + mu + eps`` is
    simulated from the priors and coupled series use the pooled draws.
    Draws whose ``|det(I - Gamma)|`` falls below ``det_tol`` are redrawn.
    """
    m, k = X.shape
    mean = np.empty(m)
    lo = np.empty(m)
    hi = np.empty(m)
    med = np.empty(m)
    for j in range(m):
        # parent slots are irrelevant here: coupled series are overwritten below
        fc = forecast_one(priors[j], np.concatenate([X[j], np.zeros(len(parents[j]))]))
        mean[j] = med[j] = fc.mean
        lo[j], hi[j] = fc.interval(mass)
    coupled = [j for j in range(m) if len(parents[j])]
    if not coupled:
        return JointForecast(mean, lo, hi, med)

    accepted: list[np.ndarray] = []
    need = n_mc
    rejected = 0
    attempt = 0
    while need > 0:
        mu = np.empty((n_mc, m))
        eps = np.empty((n_mc, m))
        A = np.broadcast_to(np.eye(m), (n_mc, m, m)).copy()
        for j in range(m):
            pr = priors[j]
            gen = rngmod.stream(seed, day, j, PURPOSE_FORECAST, horizon, attempt)
            name = names[j] if names is not None else str(j)
            theta, lam = sample_normal_gamma(pr.a, pr.R, pr.r, pr.s, n_mc, gen, name)
            mu[:, j] = theta[:, :k] @ X[j]
            eps[:, j] = gen.standard_normal(n_mc) / np.sqrt(lam)
            if parents[j]:
                A[:, j, list(parents[j])] -= theta[:, k:]
        sign, logdet = np.linalg.slogdet(A)
        ok = (sign != 0) & (logdet > np.log(det_tol))
        rejected += int(np.sum(~ok))
        good = np.flatnonzero(ok)[:need]
        if len(good):
            accepted.append(np.linalg.solve(A[good], (mu[good] + eps[good])[..., None])[..., 0])
        need -= len(good)
        attempt += 1
        if rejected > max_reject_frac * n_mc:
            raise NumericalError(
                f"day {day}: {rejected} of {n_mc} forecast draws had singular I - Gamma"
            )
    Y = np.concatenate(accepted)
    q_lo, q_hi = np.quantile(Y, [0.5 - 0.5 * mass, 0.5 + 0.5 * mass], axis=0)
    q_med = np.median(Y, axis=0)
    for j in coupled:
        mean[j] = Y[:, j].mean()
        lo[j], hi[j], med[j] = q_lo[j], q_hi[j], q_med[j]
    return JointForecast(mean, lo, hi, med, rejected, Y)


# --------------------------------------------------------------------------
# engine


@dataclass
class StepOutput:
    day: int
    forecast: JointForecast
    posteriors: list[DlmState]
    coef_names: list[list[str]]
    entropy: float
    ess: float
    tau: float
    vb_fallbacks: int
    min_eig: float
    n_coupled: int
    parent_rows: list[tuple[int, int, str, float]]
    retired: list[tuple[int, int, float]]


class Engine:
    """Sequential filter over an ``m``-series panel with ``k`` endogenous regressors."""

    def __init__(self, m: int, endo_names: Sequence[str], cfg: EngineConfig, ids: Sequence[str] | None = None):
        self.m = m
        self.endo_names = list(endo_names)
        self.k = len(self.endo_names)
        self.cfg = cfg
        self.ids = list(ids) if ids is not None else [str(i) for i in range(m)]
        if len(self.ids) != m:
            raise ValueError("ids length does not match number of series")
        self.priors = [
            initial_prior(self.k, var=cfg.prior_var, r=cfg.prior_r, s=cfg.prior_s) for _ in range(m)
        ]
        self.sets = [ParentSets() for _ in range(m)]
        pc = cfg.parents
        self.wishart = WishartState.initial(m, pc.delta_w, pc.beta_w)
        self.steps = 0

    @property
    def parents_enabled(self) -> bool:
        return self.cfg.parents.enabled and self.m > 1

    def parent_lists(self) -> list[list[int]]:
        return [s.members() for s in self.sets]

    def coef_names(self, j: int) -> list[str]:
        s = self.sets[j]
        return self.endo_names + [f"{tag}:{self.ids[i]}" for tag, i in zip(s.tags(), s.members())]

    def forecast(self, day: int, X: np.ndarray, horizon: int = 0, priors: Sequence[PriorState] | None = None) -> JointForecast:
        cfg = self.cfg
        return joint_forecast(
            self.priors if priors is None else priors,
            X,
            self.parent_lists(),
            cfg.n_mc,
            seed=cfg.seed,
            day=day,
            horizon=horizon,
            mass=cfg.interval_mass,
            det_tol=cfg.det_tol,
            max_reject_frac=cfg.max_reject_frac,
            names=self.ids,
        )

    def step(self, day: int, X: np.ndarray, y: np.ndarray) -> StepOutput:
        """Forecast day ``day`` from the current priors, then absorb ``y``.

        ``X`` is ``(m, k)`` standardized regressors and ``y`` the ``(m,)``
        standardized targets (``NaN`` = missing, which skips that update).
        """
        cfg = self.cfg
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape != (self.m, self.k) or y.shape != (self.m,):
            raise ValueError(f"expected X {(self.m, self.k)} and y {(self.m,)}, got {X.shape} and {y.shape}")
        fc = self.forecast(day, X)
        names = [self.coef_names(j) for j in range(self.m)]
        parents = self.parent_lists()

        posts: list[DlmState] = []
        for j in range(self.m):
            pr = self.priors[j]
            if np.isnan(y[j]):
                posts.append(DlmState(pr.a.copy(), pr.R.copy(), pr.r, pr.s))
            else:
                posts.append(kalman_update(pr, _regressor(X[j], y, parents[j]), y[j]))

        coupled = [j for j in range(self.m) if parents[j]]
        entropy, ess, tau, fallbacks = 0.0, float(cfg.n_mc), 1.0, 0
        if coupled:
            batch = sample_posteriors({j: posts[j] for j in coupled}, cfg.n_mc, cfg.seed, day, self.ids)
            rows = {j: batch.theta[j][:, self.k :] for j in coupled}
            log_w = log_abs_det(rows, {j: parents[j] for j in coupled}, self.m, cfg.n_mc)
            raw = importance_weights(log_w)
            entropy, ess = raw.entropy, raw.ess
            used, tau = temper(log_w, cfg.ess_floor)
            for c, j in enumerate(batch.series):
                res = vb_decouple(
                    batch.theta[j], batch.lam[:, c], used.weights, posts[j].n, self.ids[j], reference=posts[j]
                )
                fallbacks += res.fallback
                posts[j] = res.state
        lowest = min((min_eig(p.C) for p in posts), default=np.inf)

        parent_rows: list[tuple[int, int, str, float]] = []
        retired: list[tuple[int, int, float]] = []
        self.steps += 1
        if self.parents_enabled:
            retired = self._maintain(y, list(posts))
            for j, s in enumerate(self.sets):
                for tag, i in zip(s.tags(), s.members()):
                    parent_rows.append((j, i, tag, float(s.scores.get(i, np.nan))))
        else:
            self.priors = [evolve(p, None, cfg.discount, self.k) for p in posts]

        return StepOutput(day, fc, posts, names, entropy, ess, tau, fallbacks, lowest, len(coupled), parent_rows, retired)

    def _maintain(self, y: np.ndarray, posts: list[DlmState]) -> list[tuple[int, int, float]]:
        cfg, pc = self.cfg, self.cfg.parents
        self.wishart = wishart_update(self.wishart, y)
        precision = None
        missing = set(np.flatnonzero(np.isnan(y)).tolist())
        retired: list[tuple[int, int, float]] = []
        new_priors: list[PriorState] = []
        for j in range(self.m):
            old = self.sets[j]
            sets = age_up(old)
            post = posts[j]
            if self.steps % pc.dT == 0:
                scores = snr_scores(self.priors[j], old.members(), self.k)
                sets = promote_and_retire(sets, scores, pc, self.ids)
                post = reindex(post, old.members(), sets.members(), self.k, pc.init_var)
            sets = age_down(sets)
            G = downset_decay_matrix(sets, pc.dT, self.k)
            prior = evolve(post, G, cfg.discount, self.k)
            layout = sets.members()
            expired = [i for i, l in sets.down.items() if l >= pc.dT]
            for i in expired:
                pos = self.k + layout.index(i)
                retired.append((j, i, float(prior.a[pos])))
                del sets.down[i]
            if expired:
                # drop first so a series nominated again below starts afresh
                prior = reindex(prior, layout, sets.members(), self.k, pc.init_var)
                layout = sets.members()
            if precision is None:
                precision = self.wishart.precision()
            for i in propose_candidates(precision, j, pc.n_max, sets, pc.n_up, exclude=missing):
                sets.up[i] = 0
            prior = reindex(prior, layout, sets.members(), self.k, pc.init_var)
            self.sets[j] = sets
            new_priors.append(prior)
        self.priors = new_priors
        return retired


def forecast_k_steps(
    engine: Engine,
    day: int,
    X: np.ndarray,
    k: int,
    updater: Callable[[np.ndarray], np.ndarray],
) -> list[JointForecast]:
    """Recursive multi-step forecasts from the current priors.

    Horizon ``h`` feeds the median prediction of horizon ``h - 1`` through
    ``updater`` to build its regressors, and evolves the priors one more step
    with the parent layout frozen. Horizon 1 equals :meth:`Engine.forecast`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    priors = list(engine.priors)
    X_h = np.asarray(X, dtype=float)
    for h in range(k):
        fc = engine.forecast(day, X_h, horizon=h, priors=priors)
        out.append(fc)
        if h + 1 < k:
            X_h = updater(fc.median)
            priors = [
                evolve(DlmState(p.a, p.R, p.r, p.s), None, engine.cfg.discount, engine.k) for p in priors
            ]
    return out
