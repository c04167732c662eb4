"""Small dense linear-algebra helpers shared by the filters."""

from __future__ import annotations

import numpy as np

SHRINK_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
PD_REL_TOL = 1e-10


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def shrink_to_pd(M: np.ndarray, rel_tol: float = PD_REL_TOL) -> tuple[np.ndarray, float]:
    """Shrink a symmetric matrix toward its (positive part) diagonal until it is PD.

    Returns ``(M', gamma)`` with ``M' = (1 - gamma) M + gamma diag(M)+`` for the
    smallest ``gamma`` on a fixed grid such that the smallest eigenvalue is at
    least ``rel_tol * trace / p``. Already-PD inputs come back unchanged.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    p = M.shape[0]
    if p == 0:
        return M, 0.0
    d = np.clip(np.diag(M), 0.0, None)
    trace = d.sum()
    if trace <= 0:
        return rel_tol * np.eye(p), 1.0
    floor = rel_tol * trace / p
    target = np.diag(d)
    for gamma in SHRINK_GRID:
        cand = M if gamma == 0.0 else (1.0 - gamma) * M + gamma * target
        if gamma == 1.0:
            # zero diagonal entries would keep the pure diagonal singular
            cand = np.diag(np.maximum(d, floor))
        if np.linalg.eigvalsh(cand)[0] >= floor:
            return cand, gamma
    return np.diag(np.maximum(d, floor)), 1.0


def min_eig(M: np.ndarray) -> float:
    if M.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(symmetrize(M))[0])
