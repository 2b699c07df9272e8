"""Dense matrix primitives: products, norms and a deterministic thin SVD.

Matrices are plain 2-D ``float64`` numpy arrays. The SVD is a one-sided
(Hestenes) Jacobi iteration with a fixed round-robin pair schedule so the
factors are reproducible bit for bit on a given platform, independent of the
LAPACK build underneath numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SWEEP_BUDGET = 60
OFF_TOL = 1e-14


class ShapeError(ValueError):
    pass


class SvdConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, off_mass: float, scale: float):
        self.sweeps = sweeps
        self.off_mass = off_mass
        self.scale = scale
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps: "
            f"off-diagonal Gram mass {off_mass:.3e} (||W||_F^2 = {scale:.3e})"
        )


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b, ledger=None, layer=None, kind: str = "linear_full") -> np.ndarray:
    """Dense product ``a @ b``; charges rows*cols*inner MACs to ``ledger`` if given."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if ledger is not None:
        ledger.charge(layer, kind, a.shape[0] * b.shape[1] * a.shape[1])
    return a @ b


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint column pairs for each round of a cyclic tournament over ``n`` columns."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            idx = np.array(pairs, dtype=np.intp)
            rounds.append((idx[:, 0], idx[:, 1]))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_mass(a: np.ndarray) -> float:
    g = a.T @ a
    np.fill_diagonal(g, 0.0)
    return float(np.sqrt(np.sum(g * g)))


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalise the columns of tall ``a`` (m >= n); returns (A V, V)."""
    # columns are kept as contiguous rows of ``at`` / ``vt`` for cheap pair gathers
    at = a.T.copy()
    n = at.shape[0]
    vt = np.eye(n)
    scale = float(np.sum(at * at))
    if n < 2 or scale == 0.0:
        return at.T, vt.T
    rounds = _round_robin(n)
    eps = np.finfo(np.float64).eps
    off = _off_mass(at.T)
    for _ in range(SWEEP_BUDGET):
        if off < OFF_TOL * scale:
            return at.T, vt.T
        rotated = 0
        for i, j in rounds:
            ai, aj = at[i], at[j]
            alpha = np.einsum("ij,ij->i", ai, ai)
            beta = np.einsum("ij,ij->i", aj, aj)
            gamma = np.einsum("ij,ij->i", ai, aj)
            active = np.abs(gamma) > eps * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated += int(active.sum())
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)[:, None]
            s = np.where(active, t, 0.0)[:, None] * c
            at[i], at[j] = c * ai - s * aj, s * ai + c * aj
            vi, vj = vt[i], vt[j]
            vt[i], vt[j] = c * vi - s * vj, s * vi + c * vj
        off = _off_mass(at.T)
        if rotated == 0:
            return at.T, vt.T
    if off < OFF_TOL * scale:
        return at.T, vt.T
    raise SvdConvergenceError(SWEEP_BUDGET, off, scale)


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns not in ``keep`` with an orthonormal completion of the kept ones."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if keep[j]]
    out = u.copy()
    for j in range(k):
        if keep[j]:
            continue
        q = np.array(basis).reshape(-1, m).T if basis else np.zeros((m, 0))
        resid = np.eye(m) - q @ (q.T @ np.eye(m))
        resid -= q @ (q.T @ resid)
        norms = np.linalg.norm(resid, axis=0)
        pick = int(np.argmax(norms))
        col = resid[:, pick] / norms[pick]
        out[:, j] = col
        basis.append(col)
    return out


def thin_svd(w) -> SvdFactors:
    """Thin SVD ``w = u @ diag(sigma) @ vt`` with k = min(rows, cols).

    Singular values are sorted non-increasing with ties kept in original
    column order. Each left singular vector is signed so that its
    largest-magnitude entry is positive.
    """
    w = as_matrix(w)
    if not np.all(np.isfinite(w)):
        raise ValueError("thin_svd requires a finite matrix")
    m, n = w.shape
    transposed = m < n
    a = w.T if transposed else w
    rows, k = a.shape
    if k == 0:
        return SvdFactors(np.zeros((m, 0)), np.zeros(0), np.zeros((0, n)))

    av, v = _jacobi_tall(a)
    sigma = np.linalg.norm(av, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    av = av[:, order]
    v = v[:, order]

    tiny = max(rows, k) * np.finfo(np.float64).eps * (sigma[0] if sigma[0] > 0 else 1.0)
    keep = sigma > tiny
    left = np.zeros_like(av)
    left[:, keep] = av[:, keep] / sigma[keep]
    if not keep.all():
        left = _complete_basis(left, keep)

    u, vt = (v, left.T) if transposed else (left, v.T)
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivot, np.arange(k)] < 0, -1.0, 1.0)
    return SvdFactors(u * signs, sigma, vt * signs[:, None])


def truncate_factors(f: SvdFactors, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced rank-``r`` split: ``wa = U_r sqrt(S_r)``, ``wb = sqrt(S_r) V_r^T``."""
    k = f.sigma.shape[0]
    if not 0 <= r <= k:
        raise ValueError(f"rank {r} out of range [0, {k}]")
    root = np.sqrt(f.sigma[:r])
    return f.u[:, :r] * root, root[:, None] * f.vt[:r]


def spectral_norm(m) -> float:
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    return float(thin_svd(m).sigma[0])


def frobenius_norm(m) -> float:
    m = as_matrix(m)
    return float(np.sqrt(np.sum(m * m)))
