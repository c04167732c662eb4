"""Dynamic simultaneous-parent selection.

A discount Wishart filter over all series tracks a precision matrix whose
largest off-diagonal entries nominate parent candidates. Each series keeps
three disjoint parent sets:

* ``up``: probationary candidates, ageing one step per update;
* ``core``: current parents, re-ranked every ``dT`` steps by ``|a| / sqrt(R)``;
* ``down``: retired parents whose coefficients are decayed to zero over
  ``dT`` evolutions and then dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dlm import DlmState, PriorState
from .errors import ConfigError, NumericalError
from .linalg import shrink_to_pd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParentConfig:
    enabled: bool = True
    n_core: int = 5
    n_up: int = 5
    n_down: int = 5
    dT: int = 10
    n_max: int = 5
    delta_w: float = 0.97
    beta_w: float = 0.97
    init_var: float = 1e-4
    min_snr: float = 1.0

    def __post_init__(self) -> None:
        for name in ("n_core", "n_up", "n_down", "n_max"):
            if getattr(self, name) < 0:
                raise ConfigError(f"parents.{name} must be >= 0")
        if self.dT < 1:
            raise ConfigError("parents.dT must be >= 1")
        for name in ("delta_w", "beta_w"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"parents.{name} must lie in (0, 1], got {v}")
        if self.init_var <= 0:
            raise ConfigError("parents.init_var must be positive")
        if self.min_snr < 0:
            raise ConfigError("parents.min_snr must be >= 0")


# --------------------------------------------------------------------------
# Wishart filter


@dataclass(frozen=True)
class WishartState:
    D: np.ndarray
    h: float
    delta_w: float = 0.97
    beta_w: float = 0.97

    @classmethod
    def initial(cls, m: int, delta_w: float = 0.97, beta_w: float = 0.97, scale: float = 1.0) -> "WishartState":
        return cls(scale * np.eye(m), 1.0, delta_w, beta_w)

    @property
    def m(self) -> int:
        return self.D.shape[0]

    def precision(self) -> np.ndarray:
        """Point estimate ``(h - m) D^{-1}``; the multiplier is floored at 1."""
        D, _ = shrink_to_pd(self.D)
        try:
            inv = np.linalg.inv(D)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"Wishart sum-of-squares singular after shrinkage (trace={np.trace(self.D):.3g})"
            ) from exc
        return max(self.h - self.m, 1.0) * inv


def wishart_update(state: WishartState, y: np.ndarray) -> WishartState:
    """Discounted sum-of-squares update; ``NaN`` entries count as 0."""
    y = np.nan_to_num(np.asarray(y, dtype=float), nan=0.0)
    if y.shape != (state.m,):
        raise ValueError(f"observation length {y.shape} does not match Wishart dimension {state.m}")
    D = state.delta_w * state.D + np.outer(y, y)
    return replace(state, D=0.5 * (D + D.T), h=state.beta_w * state.h + 1.0)


# --------------------------------------------------------------------------
# set bookkeeping


@dataclass
class ParentSets:
    """Parent sets of one series. ``up`` maps member to age in steps,
    ``down`` maps member to the number of decay evolutions applied."""

    core: list[int] = field(default_factory=list)
    up: dict[int, int] = field(default_factory=dict)
    down: dict[int, int] = field(default_factory=dict)
    scores: dict[int, float] = field(default_factory=dict)

    def copy(self) -> "ParentSets":
        return ParentSets(list(self.core), dict(self.up), dict(self.down), dict(self.scores))

    def members(self) -> list[int]:
        """Coefficient layout: core, then up, then down."""
        return list(self.core) + list(self.up) + list(self.down)

    def tags(self) -> list[str]:
        return ["core"] * len(self.core) + ["up"] * len(self.up) + ["down"] * len(self.down)

    def __len__(self) -> int:
        return len(self.core) + len(self.up) + len(self.down)

    def check(self, self_index: int, cfg: ParentConfig) -> None:
        c, u, d = set(self.core), set(self.up), set(self.down)
        if len(c) != len(self.core) or c & u or c & d or u & d:
            raise AssertionError(f"parent sets overlap: core={self.core} up={list(self.up)} down={list(self.down)}")
        if self_index in c | u | d:
            raise AssertionError(f"series {self_index} is its own parent")
        if len(c) > cfg.n_core or len(u) > cfg.n_up or len(d) > cfg.n_down:
            raise AssertionError("parent set capacity exceeded")
        if any(not 0 <= a for a in self.up.values()) or any(not 0 <= l <= cfg.dT for l in self.down.values()):
            raise AssertionError("parent ages out of range")


def propose_candidates(
    precision: np.ndarray | WishartState,
    j: int,
    n_max: int,
    sets: ParentSets,
    n_up: int,
    exclude: Iterable[int] = (),
) -> list[int]:
    """Series with the largest ``|precision[j, i]|`` that may enter ``j``'s up set.

    Excludes ``j``, current members of any set and ``exclude``; the list is
    truncated to the remaining up-set capacity. Ties go to the lower index.
    """
    room = min(n_max, n_up - len(sets.up))
    if room <= 0:
        return []
    P = precision.precision() if isinstance(precision, WishartState) else precision
    row = np.abs(np.asarray(P[j], dtype=float))
    banned = {j, *sets.core, *sets.up, *sets.down, *exclude}
    order = sorted((i for i in range(len(row)) if i not in banned), key=lambda i: (-row[i], i))
    return order[:room]


def snr_scores(prior: PriorState, members: Sequence[int], n_endo: int) -> dict[int, float]:
    """``|a_i| / sqrt(R_ii)`` for each parent coefficient in layout order."""
    out = {}
    for k, idx in enumerate(members):
        pos = n_endo + k
        var = prior.R[pos, pos]
        out[idx] = float(abs(prior.a[pos]) / np.sqrt(var)) if var > 0 else 0.0
    return out


def promote_and_retire(
    sets: ParentSets,
    scores: Mapping[int, float],
    cfg: ParentConfig,
    ids: Sequence[str] | None = None,
) -> ParentSets:
    """Re-rank core members together with up members that have served ``dT`` steps.

    The best ``n_core`` by score form the new core; the others move to down
    with decay age 0. Sitting core members whose score is below
    ``cfg.min_snr`` are retired even when the core has room; newly eligible
    up members are exempt because their coefficients have only had ``dT``
    observations to move away from the prior. Ties are broken by series id.
    If the down set overflows, its members with the most decay applied are
    dropped first.
    """
    out = sets.copy()
    eligible = [i for i, age in sets.up.items() if age >= cfg.dT]
    if not eligible and cfg.min_snr == 0.0:
        out.scores.update({i: scores.get(i, 0.0) for i in sets.core})
        return out
    pool = list(sets.core) + eligible
    fresh = set(eligible)

    def tie(i: int):
        return ids[i] if ids is not None else i

    ranked = sorted(pool, key=lambda i: (-scores.get(i, 0.0), tie(i)))
    keep = [i for i in ranked if i in fresh or scores.get(i, 0.0) >= cfg.min_snr][: cfg.n_core]
    keep_set = set(keep)
    out.core = keep
    for i in eligible:
        del out.up[i]
    for i in ranked:
        if i not in keep_set:
            out.down[i] = 0
    out.scores = {i: float(scores.get(i, 0.0)) for i in pool}
    while len(out.down) > cfg.n_down:
        oldest = max(out.down, key=out.down.__getitem__)  # first inserted wins ties
        del out.down[oldest]
    return out


def downset_decay_matrix(sets: ParentSets, dT: int, n_endo: int) -> np.ndarray:
    """Diagonal of the evolution matrix for the layout of ``sets``.

    Each down member with decay age ``l`` in ``[1, dT]`` gets ``1 - 1/(dT + 1 - l)``,
    every other coefficient 1.
    """
    g = np.ones(n_endo + len(sets))
    offset = n_endo + len(sets.core) + len(sets.up)
    for k, l in enumerate(sets.down.values()):
        if not 1 <= l <= dT:
            raise ValueError(f"down-set age {l} outside [1, {dT}]")
        g[offset + k] = 1.0 - 1.0 / (dT + 1 - l)
    return g


def age_down(sets: ParentSets) -> ParentSets:
    out = sets.copy()
    out.down = {i: l + 1 for i, l in sets.down.items()}
    return out


def age_up(sets: ParentSets) -> ParentSets:
    out = sets.copy()
    out.up = {i: a + 1 for i, a in sets.up.items()}
    return out


def reindex(
    state: PriorState | DlmState,
    old: Sequence[int],
    new: Sequence[int],
    n_endo: int,
    init_var: float,
) -> PriorState | DlmState:
    """Map a state from parent layout ``old`` to ``new``.

    Kept members carry their mean and covariance; dropped members are
    marginalized out; new members start at mean 0, variance ``init_var`` and
    no correlation.
    """
    mean = state.a if isinstance(state, PriorState) else state.m
    cov = state.R if isinstance(state, PriorState) else state.C
    pos_old = {idx: n_endo + k for k, idx in enumerate(old)}
    src = list(range(n_endo)) + [pos_old.get(idx, -1) for idx in new]
    src = np.asarray(src, dtype=int)
    kept = src >= 0
    p = len(src)
    m2 = np.zeros(p)
    m2[kept] = mean[src[kept]]
    C2 = np.zeros((p, p))
    C2[np.ix_(kept, kept)] = cov[np.ix_(src[kept], src[kept])]
    fresh = np.flatnonzero(~kept)
    C2[fresh, fresh] = init_var
    if isinstance(state, PriorState):
        return PriorState(m2, C2, state.r, state.s)
    return DlmState(m2, C2, state.n, state.s)
