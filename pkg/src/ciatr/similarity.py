"""Hybrid similarity between feature bundles: SSIM on maps plus cosine on vectors.

SSIM uses a uniform ``WINDOW x WINDOW`` window at stride 1, population
(1/N) moments, and stabilizers ``C1 = (K1 L)^2``, ``C2 = (K2 L)^2`` where the
dynamic range ``L`` is the larger absolute entry of the two maps (at least
``L_FLOOR``). The score is the mean over channels and windows.

Both single-pair and all-pairs (batch) versions are provided; the batched
ones are what training uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError
from .model import FeatureBundle

WINDOW = 8
K1, K2 = 0.01, 0.03
L_FLOOR = 1e-6
COS_EPS = 1e-12


@dataclass(frozen=True)
class HybridScore:
    stm: float
    vam: float
    hm: float


def _box_mean(z: np.ndarray) -> np.ndarray:
    """Mean over every ``WINDOW x WINDOW`` window of the last two axes."""
    s = np.cumsum(np.cumsum(z, axis=-2), axis=-1)
    s = np.pad(s, [(0, 0)] * (z.ndim - 2) + [(1, 0), (1, 0)])
    k = WINDOW
    total = s[..., k:, k:] - s[..., :-k, k:] - s[..., k:, :-k] + s[..., :-k, :-k]
    return total / (k * k)


def _box_mean_adjoint(g: np.ndarray) -> np.ndarray:
    """Transpose of ``_box_mean``: spread window gradients back onto pixels."""
    k = WINDOW
    pad = [(0, 0)] * (g.ndim - 2) + [(k - 1, k - 1), (k - 1, k - 1)]
    return _box_mean(np.pad(g, pad))


def _check_maps(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"feature maps differ in shape: {a.shape} vs {b.shape}")
    if a.ndim < 2 or a.shape[-1] < WINDOW or a.shape[-2] < WINDOW:
        raise ShapeError(f"feature maps need at least {WINDOW}x{WINDOW} spatial extent, got {a.shape}")


def _ssim_terms(mx, my, exx, eyy, exy, c1, c2):
    a1 = 2.0 * mx * my + c1
    a2 = 2.0 * (exy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    return a1, a2, b1, b2


def _ssim_partials(mx, my, a1, a2, b1, b2, s):
    """Partials of the per-window score w.r.t. its moments and constants."""
    den = b1 * b2
    d_a1 = a2 / den
    d_a2 = a1 / den
    d_b1 = -s / b1
    d_b2 = -s / b2
    d_mx = 2.0 * my * (d_a1 - d_a2) + 2.0 * mx * (d_b1 - d_b2)
    d_my = 2.0 * mx * (d_a1 - d_a2) + 2.0 * my * (d_b1 - d_b2)
    return d_mx, d_my, d_b2, d_b2, 2.0 * d_a2, d_a1 + d_b1, d_a2 + d_b2


def stm(a, b) -> float:
    """Mean SSIM between two feature maps of shape ``(c, h, w)`` or ``(h, w)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_maps(a, b)
    big = max(np.abs(a).max(), np.abs(b).max(), L_FLOOR)
    c1, c2 = (K1 * big) ** 2, (K2 * big) ** 2
    mx, my = _box_mean(a), _box_mean(b)
    terms = _ssim_terms(mx, my, _box_mean(a * a), _box_mean(b * b), _box_mean(a * b), c1, c2)
    a1, a2, b1, b2 = terms
    return float(np.mean((a1 * a2) / (b1 * b2)))


def _stm_grad(a: np.ndarray, b: np.ndarray, scale: float):
    big_a, big_b = np.abs(a).max(), np.abs(b).max()
    big = max(big_a, big_b, L_FLOOR)
    c1, c2 = (K1 * big) ** 2, (K2 * big) ** 2
    mx, my = _box_mean(a), _box_mean(b)
    a1, a2, b1, b2 = _ssim_terms(mx, my, _box_mean(a * a), _box_mean(b * b), _box_mean(a * b), c1, c2)
    s = (a1 * a2) / (b1 * b2)
    w = scale / s.size
    g_mx, g_my, g_exx, g_eyy, g_exy, g_c1, g_c2 = (w * t for t in _ssim_partials(mx, my, a1, a2, b1, b2, s))
    da = _box_mean_adjoint(g_mx) + 2.0 * a * _box_mean_adjoint(g_exx) + b * _box_mean_adjoint(g_exy)
    db = _box_mean_adjoint(g_my) + 2.0 * b * _box_mean_adjoint(g_eyy) + a * _box_mean_adjoint(g_exy)
    if big > L_FLOOR:
        # the range constant depends on the single largest |entry|
        d_big = g_c1.sum() * 2.0 * K1 * K1 * big + g_c2.sum() * 2.0 * K2 * K2 * big
        target, grad = (a, da) if big_a >= big_b else (b, db)
        idx = np.unravel_index(np.argmax(np.abs(target)), target.shape)
        grad[idx] += d_big * np.sign(target[idx])
    return da, db


def _cos_denominator(uu, vv):
    """``|u| |v|`` as ``sqrt(uu * vv)`` so parallel inputs give exactly +-1."""
    nu, nv = np.sqrt(uu), np.sqrt(vv)
    guarded = np.maximum(nu, COS_EPS) * np.maximum(nv, COS_EPS)
    with np.errstate(over="ignore"):
        joint = np.sqrt(uu * vv)
    ok = (nu > COS_EPS) & (nv > COS_EPS) & np.isfinite(joint)
    return np.where(ok, joint, guarded)


def vam(u, v) -> float:
    """Cosine similarity with norm guards, clamped to [-1, 1]."""
    u = np.ravel(np.asarray(u, dtype=np.float64))
    v = np.ravel(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise ShapeError(f"feature vectors differ in length: {u.size} vs {v.size}")
    return float(np.clip(u @ v / _cos_denominator(u @ u, v @ v), -1.0, 1.0))


def _vam_grad(u: np.ndarray, v: np.ndarray, scale: float):
    ru, rv = np.linalg.norm(u), np.linalg.norm(v)
    nu, nv = max(ru, COS_EPS), max(rv, COS_EPS)
    cos = u @ v / _cos_denominator(u @ u, v @ v)
    if abs(cos) > 1.0:
        return np.zeros_like(u), np.zeros_like(v)
    du = v / (nu * nv)
    dv = u / (nu * nv)
    if ru > COS_EPS:
        du = du - cos * u / (nu * nu)
    if rv > COS_EPS:
        dv = dv - cos * v / (nv * nv)
    return scale * du, scale * dv


def hm(A: FeatureBundle, B: FeatureBundle) -> HybridScore:
    s = stm(A.feature_map, B.feature_map)
    c = vam(A.feature_vector, B.feature_vector)
    return HybridScore(s, c, s + c)


def hm_backward(A: FeatureBundle, B: FeatureBundle, d_hm: float):
    """Gradients of ``d_hm * hm(A, B)``.

    Returns ``((dA_map, dA_vec), (dB_map, dB_vec))``. The map and vector
    gradients are reported separately; the vector is the flattened map, so a
    caller feeding the model sums them.
    """
    a = np.asarray(A.feature_map, dtype=np.float64)
    b = np.asarray(B.feature_map, dtype=np.float64)
    _check_maps(a, b)
    if d_hm == 0:
        zero_u = np.zeros(np.shape(A.feature_vector))
        return (np.zeros_like(a), zero_u), (np.zeros_like(b), zero_u.copy())
    da, db = _stm_grad(a, b, d_hm)
    du, dv = _vam_grad(np.asarray(A.feature_vector, dtype=np.float64),
                       np.asarray(B.feature_vector, dtype=np.float64), d_hm)
    return (da, du), (db, dv)


# --- all pairs within a batch ----------------------------------------------
#
# hm is symmetric and hm(x, x) is constant, so only pairs i < j are computed;
# the diagonal of the returned matrices is filled in directly and carries no
# gradient.


def _window_matrix(h: int, w: int) -> np.ndarray:
    """``(h*w, nh*nw)`` matrix ``M`` with ``box_mean(z).ravel() == z.ravel() @ M``."""
    key = (h, w)
    if key not in _WINDOW_CACHE:
        nh, nw = h - WINDOW + 1, w - WINDOW + 1
        m = np.zeros((h, w, nh, nw))
        for i in range(nh):
            for j in range(nw):
                m[i:i + WINDOW, j:j + WINDOW, i, j] = 1.0 / (WINDOW * WINDOW)
        _WINDOW_CACHE[key] = m.reshape(h * w, nh * nw)
    return _WINDOW_CACHE[key]


_WINDOW_CACHE: dict[tuple[int, int], np.ndarray] = {}


@dataclass
class PairwiseCache:
    maps: np.ndarray
    vecs: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    mx: np.ndarray
    amax: np.ndarray
    big: np.ndarray
    terms: tuple
    ssim: np.ndarray
    norms: np.ndarray
    raw_norms: np.ndarray
    cos: np.ndarray


def pairwise_hm(maps: np.ndarray, vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray, PairwiseCache]:
    """All-pairs ``stm`` and ``vam`` for a batch.

    ``maps`` is ``(B, c, h, w)``; ``vecs`` is ``(B, F)``. Returns the
    ``(B, B)`` matrices of structural and angular similarity plus a cache
    for ``pairwise_hm_backward``.
    """
    maps = np.asarray(maps, dtype=np.float64)
    vecs = np.asarray(vecs, dtype=np.float64)
    _check_maps(maps[0], maps[0])
    n, c, h, w = maps.shape
    win = _window_matrix(h, w)
    flat = maps.reshape(n, c, h * w)
    rows, cols = np.triu_indices(n, 1)
    nwin = win.shape[1]
    mx = (flat.reshape(-1, h * w) @ win).reshape(n, c, nwin)
    exx = ((flat * flat).reshape(-1, h * w) @ win).reshape(n, c, nwin)
    exy = ((flat[rows] * flat[cols]).reshape(-1, h * w) @ win).reshape(len(rows), c, nwin)
    amax = np.abs(flat.reshape(n, -1)).max(axis=1)
    big = np.maximum(np.maximum(amax[rows], amax[cols]), L_FLOOR)
    c1 = ((K1 * big) ** 2)[:, None, None]
    c2 = ((K2 * big) ** 2)[:, None, None]
    terms = _ssim_terms(mx[rows], mx[cols], exx[rows], exx[cols], exy, c1, c2)
    a1, a2, b1, b2 = terms
    ssim = (a1 * a2) / (b1 * b2)
    stm_mat = np.eye(n)
    stm_mat[rows, cols] = stm_mat[cols, rows] = ssim.reshape(len(rows), -1).mean(axis=-1)

    gram = vecs @ vecs.T
    sq = np.diag(gram).copy()
    raw = np.sqrt(sq)
    norms = np.maximum(raw, COS_EPS)
    cos = gram / _cos_denominator(sq[:, None], sq[None, :])
    vam_mat = np.clip(cos, -1.0, 1.0)
    cache = PairwiseCache(maps, vecs, rows, cols, mx, amax, big, terms, ssim, norms, raw, cos)
    return stm_mat, vam_mat, cache


def pairwise_hm_backward(cache: PairwiseCache, d_hm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(d_hm * (stm + vam))`` w.r.t. the batch maps and vectors.

    Diagonal entries of ``d_hm`` are ignored (``hm(x, x)`` is constant).
    """
    d_hm = np.asarray(d_hm, dtype=np.float64)
    maps, vecs = cache.maps, cache.vecs
    n, c, h, w = maps.shape
    rows, cols = cache.rows, cache.cols
    d_pair = d_hm[rows, cols] + d_hm[cols, rows]
    dmaps = np.zeros_like(maps)
    dvecs = np.zeros_like(vecs)
    if not np.any(d_pair):
        return dmaps, dvecs

    live = np.nonzero(d_pair)[0]
    pr, pc = rows[live], cols[live]
    a1, a2, b1, b2 = (t[live] for t in cache.terms)
    s = cache.ssim[live]
    weight = (d_pair[live] / s[0].size)[:, None, None]
    g_mx, g_my, g_exx, g_eyy, g_exy, g_c1, g_c2 = (
        weight * t for t in _ssim_partials(cache.mx[pr], cache.mx[pc], a1, a2, b1, b2, s))
    win_t = _window_matrix(h, w).T
    flat = maps.reshape(n, c, h * w)
    # terms linear in a sample's own statistics are summed before the adjoint
    first = np.zeros((n, len(live)))
    first[pr, np.arange(len(live))] = 1.0
    second = np.zeros_like(first)
    second[pc, np.arange(len(live))] = 1.0

    def gather(x, y):
        # sum pair quantities onto their first / second member
        return (first @ x.reshape(len(live), -1) + second @ y.reshape(len(live), -1)).reshape(n, c, -1)

    def adjoint(g):
        return (g.reshape(-1, g.shape[-1]) @ win_t).reshape(g.shape[:-1] + (h * w,))

    spread = adjoint(g_exy)
    dflat = (adjoint(gather(g_mx, g_my)) + 2.0 * flat * adjoint(gather(g_exx, g_eyy))
             + gather(flat[pc] * spread, flat[pr] * spread))

    # the range constant depends on the larger |entry| of each pair
    big = cache.big[live]
    d_big = (g_c1.reshape(len(live), -1).sum(-1) * 2 * K1 * K1
             + g_c2.reshape(len(live), -1).sum(-1) * 2 * K2 * K2) * big
    d_big = np.where(big > L_FLOOR, d_big, 0.0)
    owner = np.where(cache.amax[pr] >= cache.amax[pc], pr, pc)
    per_owner = np.bincount(owner, weights=d_big, minlength=n)
    dflat = dflat.reshape(n, -1)
    arg = np.abs(maps.reshape(n, -1)).argmax(axis=1)
    idx = np.arange(n)
    dflat[idx, arg] += per_owner * np.sign(maps.reshape(n, -1)[idx, arg])
    dmaps = dflat.reshape(maps.shape)

    # angular part, on the same off-diagonal pairs
    off = ~np.eye(n, dtype=bool)
    wc = np.where((np.abs(cache.cos) > 1.0) | ~off, 0.0, d_hm)
    scaled = wc / (cache.norms[:, None] * cache.norms[None, :])
    dvecs += scaled @ vecs + scaled.T @ vecs
    guard = cache.raw_norms > COS_EPS
    row_pull = (wc * cache.cos).sum(axis=1) + (wc * cache.cos).sum(axis=0)
    dvecs -= (guard * row_pull / cache.norms ** 2)[:, None] * vecs
    return dmaps, dvecs
