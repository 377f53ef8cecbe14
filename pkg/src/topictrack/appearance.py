"""Attention-based appearance reconstruction and the appearance cost matrix.

For a gallery embedding ``t`` and a detection embedding ``d`` (both unit
length after normalisation) the attention map is the outer product
``R = t d^T``. Its row-wise softmax ``Rd`` and the transpose ``Rt = Rd^T``
reconstruct ``d_hat = (Rd + I) d`` and ``t_hat = (Rt + I) t``; similarity is
the dot product of the reconstructions, optionally after L2 normalisation.

The dense form costs ``O(dim^2)`` per pair. :func:`aarm_similarity_matrix`
uses the rank-1 structure instead: every softmax row is a function of a
single scalar ``t_i``, so all needed sums expand into power sums of the two
vectors.  Truncation orders are picked from a bound on the convergence
radius so the result matches the dense computation to ~1e-13.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assoc import FORBIDDEN, CostMatrix
from .core import Detection, Tracklet, as_embedding, l2_normalize
from .errors import ConfigError, EmptyGalleryError, InvalidEmbeddingError

DENSE_MAX_DIM = 16
_TOL = 1e-13
_CHUNK = 128
_EXACT_ABS = 6


@dataclass(frozen=True)
class AppearanceConfig:
    gallery_capacity: int = 30
    appearance_gate: float = 0.25
    normalize_reconstructed: bool = True

    def __post_init__(self):
        if self.gallery_capacity < 1:
            raise ValueError("gallery_capacity must be >= 1")
        if not 0.0 <= self.appearance_gate <= 1.0:
            raise ValueError("appearance_gate must lie in [0, 1]")


def _unit(e, name: str) -> np.ndarray:
    try:
        return l2_normalize(as_embedding(e))
    except InvalidEmbeddingError as exc:
        raise InvalidEmbeddingError(f"{name}: {exc}") from None


def attention_map(t, d) -> np.ndarray:
    """Outer product of the normalised embeddings (rows follow ``t``)."""
    t, d = _unit(t, "t"), _unit(d, "d")
    if t.size != d.size:
        raise InvalidEmbeddingError(f"dim mismatch: {t.size} vs {d.size}")
    return np.outer(t, d)


def cross_attention(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax of ``R`` and its transpose."""
    z = R - R.max(axis=1, keepdims=True)
    e = np.exp(z)
    rd = e / e.sum(axis=1, keepdims=True)
    return rd, rd.T


def reconstruct(t, d, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Residual attention reconstruction, returns ``(t_hat, d_hat)``."""
    R = attention_map(t, d)
    rd, rt = cross_attention(R)
    t, d = _unit(t, "t"), _unit(d, "d")
    d_hat = rd @ d + d
    t_hat = rt @ t + t
    if normalize:
        d_hat = d_hat / np.linalg.norm(d_hat)
        t_hat = t_hat / np.linalg.norm(t_hat)
    return t_hat, d_hat


def aarm_similarity(gallery: Sequence[np.ndarray], d, normalize: bool = True) -> float:
    """Best reconstructed similarity between ``d`` and any gallery entry."""
    if len(gallery) == 0:
        raise EmptyGalleryError("appearance similarity needs a non-empty gallery")
    d = _unit(d, "d")
    T = np.stack([_unit(g, "gallery entry") for g in gallery])
    if T.shape[1] != d.size:
        raise InvalidEmbeddingError(f"dim mismatch: gallery {T.shape[1]} vs detection {d.size}")
    return float(aarm_similarity_matrix(T, d[None, :], normalize=normalize)[:, 0].max())


def _dense_pairs(T: np.ndarray, D: np.ndarray, normalize: bool) -> np.ndarray:
    """Reference evaluation for every (gallery row, detection row) pair."""
    G, n = T.shape
    out = np.empty((G, D.shape[0]))
    for j, d in enumerate(D):
        R = T[:, :, None] * d[None, None, :]
        R = R - R.max(axis=2, keepdims=True)
        e = np.exp(R)
        rd = e / e.sum(axis=2, keepdims=True)
        d_hat = rd @ d + d
        t_hat = np.einsum("gij,gi->gj", rd, T) + T
        dot = np.einsum("gk,gk->g", d_hat, t_hat)
        if normalize:
            dot = dot / (np.linalg.norm(d_hat, axis=1) * np.linalg.norm(t_hat, axis=1))
        out[:, j] = dot
    return out


def _reciprocal_series(a: np.ndarray) -> np.ndarray:
    """Power-series coefficients of ``1 / A(x)`` for each row of ``a``."""
    m, K = a.shape
    b = np.zeros_like(a)
    b[:, 0] = 1.0 / a[:, 0]
    for r in range(1, K):
        b[:, r] = -np.einsum("js,js->j", a[:, 1:r + 1], b[:, r - 1::-1][:, :r]) * b[:, 0]
    return b


def _convolve_rows(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((a.shape[0], K))
    for r in range(K):
        lo, hi = max(0, r - b.shape[1] + 1), min(r, a.shape[1] - 1)
        for s in range(lo, hi + 1):
            out[:, r] += a[:, s] * b[:, r - s]
    return out


def _last_significant(bound: np.ndarray, lowest: int) -> int:
    """Highest order whose term bound exceeds the tolerance (at least ``lowest``)."""
    big = np.flatnonzero(3.0 * bound > _TOL)
    return max(lowest, int(big[-1]) if big.size else 0)


def _orders(tmax: float, dmax: float, span: float, n: int) -> tuple[int, int] | None:
    # row softmax denominators have no complex zeros within pi / span
    q = tmax * span / (0.8 * math.pi)
    if q >= 0.5:
        return None
    kt = 2
    while q > 0 and n * q ** (kt + 1) / (1 - q) > _TOL and kt < 200:
        kt += 1
    x = tmax * dmax
    kd = 2
    while x > 0 and n * math.exp(x) * x ** (kd + 1) / math.factorial(kd + 1) > _TOL and kd < 100:
        kd += 1
    return kt, kd


def aarm_similarity_matrix(T: np.ndarray, D: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Pairwise reconstructed similarity, ``(G, n)`` gallery x ``(m, n)`` detections.

    Rows of ``T`` and ``D`` are normalised internally.
    """
    T = np.asarray(T, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if T.ndim != 2 or D.ndim != 2 or T.shape[1] != D.shape[1]:
        raise InvalidEmbeddingError(f"shape mismatch {T.shape} vs {D.shape}")
    G, n = T.shape
    m = D.shape[0]
    if G == 0 or m == 0:
        return np.zeros((G, m))
    tn = np.linalg.norm(T, axis=1, keepdims=True)
    dn = np.linalg.norm(D, axis=1, keepdims=True)
    if (tn == 0).any() or (dn == 0).any():
        raise InvalidEmbeddingError("zero-norm embedding")
    T, D = T / tn, D / dn

    orders = None
    if n > DENSE_MAX_DIM:
        span = float((D.max(axis=1) - D.min(axis=1)).max())
        orders = _orders(float(np.abs(T).max()), float(np.abs(D).max()), span, n)
    if orders is None:
        return _dense_pairs(T, D, normalize)
    kt0, kd0 = orders
    inv_fact = np.array([1.0 / math.factorial(k) for k in range(2 * max(kt0, kd0) + 3)])

    # detection side: power sums and the series of f = N / Z
    n_p = max(kt0 + 2, 2 * kd0 + 1)
    Dpow = np.ones((n_p, m, n))
    for k in range(1, n_p):
        np.multiply(Dpow[k - 1], D, out=Dpow[k])
    P = Dpow.sum(axis=2).T                         # (m, n_p): sum_l d_l^k
    Z = P[:, :kt0 + 1] * inv_fact[:kt0 + 1]        # sum_j exp(x d_j)
    N = P[:, 1:kt0 + 2] * inv_fact[:kt0 + 1]       # sum_j d_j exp(x d_j)
    beta = _reciprocal_series(Z)                   # 1 / Z(x)
    alpha = _convolve_rows(N, beta, kt0 + 1)       # f(x) = N(x) / Z(x)

    # The orders above are worst-case. Bound every term through absolute
    # power sums and keep only those above tolerance.
    n_abs = 2 * max(kt0, kd0) + 3
    At = np.abs(T)
    rmax = At.max(axis=1)
    Tabs = np.empty(n_abs)
    Tabs[0], Tabs[1] = n, At.sum(axis=1).max()
    acc = At * At
    for p in range(2, min(n_abs, _EXACT_ABS + 1)):
        Tabs[p] = acc.sum(axis=1).max()
        acc *= At
    # past that, sum |t|^p <= max|t|^(p-q) * sum |t|^q row by row
    rows = acc.sum(axis=1) / At.max(axis=1)
    for p in range(_EXACT_ABS + 1, n_abs):
        rows = rows * rmax
        Tabs[p] = rows.max()
    Dabs = np.abs(Dpow).sum(axis=2).max(axis=1)
    tmax, dmax = float(At.max()), float(np.abs(D).max())
    amag, bmag = np.abs(alpha).max(axis=0), np.abs(beta).max(axis=0)
    kt = _last_significant(amag * Tabs[:kt0 + 1], 1)
    kb = _last_significant(bmag * Tabs[1:kt0 + 2], 0)
    wmag = np.array([bmag[:kb + 1] @ Tabs[k + 1:k + kb + 2] for k in range(kd0 + 1)])
    cmag = inv_fact[:kd0 + 1] * wmag               # bounds |W_k| / k!
    kd = _last_significant(cmag * Dabs[:kd0 + 1], 1)
    alpha, beta = alpha[:, :kt + 1], beta[:, :kb + 1]
    alpha2 = _convolve_rows(alpha, alpha, 2 * kt + 1)
    ka2 = _last_significant(np.abs(alpha2).max(axis=0) * Tabs[:2 * kt + 1], 0)
    alpha2 = alpha2[:, :ka2 + 1]
    # r-order needed for sum_l f(t_l) d_l^k; k = 1 also feeds |d_hat| so keeps all
    r_of = [kt, kt]
    for k in range(2, kd + 1):
        bound = amag[:kt + 1] * cmag[k] * np.minimum(
            Tabs[:kt + 1] * dmax ** k, Dabs[k] * tmax ** np.arange(kt + 1))
        r_of.append(_last_significant(bound, 1))
    bb_terms = [(k, q) for k in range(kd + 1) for q in range(k, kd + 1)
                if 3.0 * cmag[k] * cmag[q] * Dabs[k + q] > _TOL]
    idx = np.add.outer(np.arange(kd + 1), np.arange(kb + 1)) + 1     # (kd+1, kb+1)
    n_s = max(kt + 2, ka2 + 1, kd + kb + 2)
    ck = inv_fact[:kd + 1, None, None]
    # X_k stacks alpha_r * d^k over r >= 2 so one GEMM gives the higher orders of
    # sum_l f(t_l) d_l^k; orders 0 and 1 come from the power sums P and Q
    X = [None] + [np.concatenate([(Dpow[k] * alpha[:, r:r + 1]).T for r in range(2, r_of[k] + 1)])
                  if r_of[k] >= 2 else None for k in range(1, kd + 1)]
    DT = np.ascontiguousarray(Dpow[:kd + 1].transpose(2, 0, 1)).reshape(n, (kd + 1) * m)
    aT, a2T, bT = alpha.T.copy(), alpha2.T.copy(), beta.T.copy()
    Pk = P.T                                                         # (n_p, m)

    # chunk arrays are (g, m) or (order, g, m) with g a block of gallery rows
    out = np.empty((G, m))
    for lo in range(0, G, _CHUNK):
        Tc = T[lo:lo + _CHUNK]
        g = Tc.shape[0]
        TP = np.empty((g, kt + 1, n))              # t_l^r, powers side by side
        TP[:, 0] = 1.0
        TP[:, 1] = Tc
        for p in range(2, kt + 1):
            np.multiply(TP[:, p - 1], Tc, out=TP[:, p])
        S = np.empty((n_s, g))                     # sum_l t_l^p
        S[:kt + 1] = TP.sum(axis=2).T
        cur = TP[:, kt].copy()
        for p in range(kt + 1, n_s):
            cur *= Tc
            S[p] = cur.sum(axis=1)
        TPf = TP.reshape(g, (kt + 1) * n)

        # W_k / k! with W_k = sum_l t_l^(k+1) / Z(t_l)
        Sh = S[idx].transpose(0, 2, 1).reshape((kd + 1) * g, kb + 1)
        cW = (Sh @ bT).reshape(kd + 1, g, m) * ck
        Q = (Tc @ DT).reshape(g, kd + 1, m).transpose(1, 0, 2)   # sum_l t_l d_l^k

        dt = Q[1]
        at = S[1:kt + 2].T @ aT
        aa = S[:ka2 + 1].T @ a2T
        ab = cW[0] * (S[:kt + 1].T @ aT)
        tb = (cW * Q).sum(axis=0)
        db = np.einsum("kgj,kj->gj", cW, Pk[1:kd + 2])
        for k in range(1, kd + 1):
            Yk = alpha[:, 0] * Pk[k] + alpha[:, 1] * Q[k]          # sum_l f(t_l) d_l^k
            if X[k] is not None:
                Yk += TPf[:, 2 * n:(r_of[k] + 1) * n] @ X[k]
            if k == 1:
                da = Yk
            ab += cW[k] * Yk
        bb = np.zeros_like(at)
        for k, q in bb_terms:
            w = Pk[k + q] if k == q else 2.0 * Pk[k + q]
            bb += (w * cW[k]) * cW[q]

        dot = dt + at + db + ab
        if normalize:
            dot = dot / np.sqrt((1.0 + 2.0 * da + aa) * (1.0 + 2.0 * tb + bb))
        out[lo:lo + g] = dot
    return out


def gallery_push(tracklet: Tracklet, e, cfg: AppearanceConfig | None = None) -> Tracklet:
    """Append the normalised embedding, evicting the oldest past capacity."""
    cfg = cfg or AppearanceConfig()
    e = _unit(e, "embedding")
    if tracklet.gallery and tracklet.gallery[0].size != e.size:
        raise InvalidEmbeddingError(
            f"dim mismatch: gallery holds {tracklet.gallery[0].size}, got {e.size}")
    if tracklet.gallery.maxlen != cfg.gallery_capacity:
        from collections import deque
        tracklet.gallery = deque(tracklet.gallery, maxlen=cfg.gallery_capacity)
    tracklet.gallery.append(e)
    return tracklet


def appearance_cost_matrix(tracklets: Sequence[Tracklet], detections: Sequence[Detection],
                           cfg: AppearanceConfig | None = None) -> CostMatrix:
    """``1 - similarity`` for every tracklet/detection pair.

    Pairs below the appearance gate and rows of tracklets without a gallery
    are forbidden. Without normalisation similarities can exceed 1; those
    costs are clipped at 0.
    """
    cfg = cfg or AppearanceConfig()
    n, m = len(tracklets), len(detections)
    cost = np.full((n, m), FORBIDDEN)
    if m == 0:
        return CostMatrix(cost)
    missing = [d.frame for d in detections if d.embedding is None]
    if missing:
        raise ConfigError(f"detections in frame {missing[0]} have no appearance embedding")
    owners = [i for i, t in enumerate(tracklets) for _ in t.gallery]
    if not owners:
        return CostMatrix(cost)
    T = np.stack([e for t in tracklets for e in t.gallery])
    D = np.stack([as_embedding(d.embedding, T.shape[1]) for d in detections])
    sims = aarm_similarity_matrix(T, D, normalize=cfg.normalize_reconstructed)
    owners = np.asarray(owners)
    starts = np.flatnonzero(np.r_[True, owners[1:] != owners[:-1]])
    best = np.maximum.reduceat(sims, starts, axis=0)
    rows = owners[starts]
    allowed = best >= cfg.appearance_gate
    cost[rows] = np.where(allowed, np.maximum(0.0, 1.0 - best), FORBIDDEN)
    return CostMatrix(cost)
