"""Inner-loop log evidences ``log (1/N) sum_s p(y | G[m, s])`` for many ``y``.

Evaluation paths, all for the same quantity:

* ``dense``: the full double sum, chunked.  Cost ``O(n_M N P)``.
* ``windowed``: samples sorted by one component; for each ``y`` only samples
  with ``|y/G - 1| < R sigma`` (R = 9.5) enter the sum.  Everything dropped
  has likelihood below ``exp(-R^2/2) / G``, i.e. a relative contribution far
  below double-precision round-off of the kept terms.  Needs ``R sigma < 1``
  on the sorted component and ``y > 0``; otherwise falls back to ``dense``.
* ``grid``: for one or two observed components, ``log E_m`` is computed on a
  grid in ``log y`` and cubic-spline interpolated.  The likelihood kernel has
  width ``sigma`` in ``log y`` and the spacing is a fraction of that width.
  Points outside the grid (the extreme tails of ``G``) use the windowed sum.
  In two dimensions grid values come from one matrix product per structure.

``method="exact"`` means windowed-or-dense; ``"auto"`` adds the grid when the
problem is large enough for it to pay off.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.special import logsumexp

from ..stochastics import LOG_2PI

WINDOW_R = 9.5
GRID_DENSITY_1D = 8  # grid points per sigma in log y
GRID_DENSITY_2D = 4
GRID_MAX_1D = 20_000
GRID_MAX_2D = 2_000
GRID_MAX_CELLS = 1_500_000
GRID_SIGMA_MAX = 0.3
GRID_NOISE_SPAN = 6.0
GRID_TAILS = (5e-4, 2e-3, 5e-3, 1e-2, 2e-2)
CHUNK_ELEMS = 4_000_000
LOG_FLOOR_GAP = 700.0
AUTO_GRID_WORK = 5e7


def _component_loglik(y: np.ndarray, G: np.ndarray, sigma: float) -> np.ndarray:
    """``[p, s]`` log density of scalar observations ``y[p]`` under ``G[s]``."""
    pos = G > 0
    Gs = np.where(pos, G, 1.0)
    inv = 1.0 / Gs
    r = (y[:, None] * inv[None, :] - 1.0) * (1.0 / sigma)
    out = -0.5 * r * r + (-0.5 * LOG_2PI - math.log(sigma) - np.log(Gs))[None, :]
    if not pos.all():
        out[:, ~pos] = -np.inf
    return out


def _block_loglik(y: np.ndarray, G: np.ndarray, sigmas) -> np.ndarray:
    ll = _component_loglik(y[:, 0], G[:, 0], sigmas[0])
    for k in range(1, G.shape[1]):
        ll += _component_loglik(y[:, k], G[:, k], sigmas[k])
    return ll


def dense_log_evidence(Gm: np.ndarray, sigmas, y: np.ndarray) -> np.ndarray:
    """Full double sum; ``Gm`` is ``(N, n_y)``, ``y`` ``(P, n_y)``."""
    n = Gm.shape[0]
    out = np.empty(y.shape[0])
    step = max(1, CHUNK_ELEMS // max(n, 1))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for lo in range(0, y.shape[0], step):
            hi = min(lo + step, y.shape[0])
            out[lo:hi] = logsumexp(_block_loglik(y[lo:hi], Gm, sigmas), axis=1) - math.log(n)
    return out


def _sort_component(sigmas) -> int | None:
    """Component to window on: the tightest one, if its window has an upper edge."""
    k = int(np.argmin(sigmas))
    return k if WINDOW_R * sigmas[k] < 1.0 else None


class _Sorted:
    """One structure's samples sorted along the windowing component."""

    def __init__(self, Gm: np.ndarray, k: int):
        order = np.argsort(Gm[:, k], kind="stable")
        self.G = Gm[order]
        self.key = self.G[:, k]
        self.k = k
        self.n = Gm.shape[0]


def windowed_log_evidence(Gm: np.ndarray, sigmas, y: np.ndarray, sorted_=None) -> np.ndarray:
    """Same quantity as ``dense_log_evidence`` summing only in-window samples."""
    sigmas = np.asarray(sigmas, dtype=float)
    k = _sort_component(sigmas)
    if k is None:
        return dense_log_evidence(Gm, sigmas, y)
    srt = sorted_ if sorted_ is not None and sorted_.k == k else _Sorted(Gm, k)
    n = srt.n
    out = np.empty(y.shape[0])
    yk = y[:, k]
    good = yk > 0
    if not good.all():
        out[~good] = dense_log_evidence(Gm, sigmas, y[~good])
    idx = np.flatnonzero(good)
    s = WINDOW_R * sigmas[k]
    lo = np.searchsorted(srt.key, yk[idx] / (1.0 + s), side="left")
    hi = np.searchsorted(srt.key, yk[idx] / (1.0 - s), side="right")
    # an empty window means y is far from every sample: only the dense sum
    # gets the (tiny but finite) value right
    empty = hi <= lo
    if empty.any():
        out[idx[empty]] = dense_log_evidence(Gm, sigmas, y[idx[empty]])
        idx, lo, hi = idx[~empty], lo[~empty], hi[~empty]
    if idx.size == 0:
        return out
    order = np.argsort(yk[idx], kind="stable")
    idx, lo, hi = idx[order], lo[order], hi[order]
    log_n = math.log(n)
    i = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while i < idx.size:
            # hi is nondecreasing in y; keep each block within twice the first
            # window so no point is scored against far more than its own window
            width = max(int(hi[i] - lo[i]), 1)
            j_span = int(np.searchsorted(hi, lo[i] + 2 * width, side="right"))
            j = min(idx.size, i + max(1, CHUNK_ELEMS // (2 * width)), max(j_span, i + 1))
            a, b = int(lo[i]), int(hi[j - 1])
            pts = idx[i:j]
            out[pts] = logsumexp(_block_loglik(y[pts], srt.G[a:b], sigmas), axis=1) - log_n
            i = j
    return out


def exact_log_evidence(Gm: np.ndarray, sigmas, y: np.ndarray) -> np.ndarray:
    """``log E(y[p])`` for one structure, windowed when possible."""
    return windowed_log_evidence(Gm, np.asarray(sigmas, dtype=float), np.atleast_2d(y))


def _axis(Gk: np.ndarray, sigma: float, density: int, cap: int):
    """Log-y grid covering ``G (1 + eps)``, ``|eps| <= 6 sigma``, over all structures.

    The extreme tails of ``G`` are left to the windowed fallback; the trimmed
    fraction grows (up to 2 % per side) until the grid fits under ``cap``.
    """
    pos = Gk[Gk > 0]
    if pos.size == 0:
        return None
    h = sigma / density
    pad_lo = math.log(max(1.0 - GRID_NOISE_SPAN * sigma, 0.05))
    pad_hi = math.log(1.0 + GRID_NOISE_SPAN * sigma)
    logs = np.log(pos)
    for tail in GRID_TAILS:
        q_lo, q_hi = np.quantile(logs, [tail, 1.0 - tail])
        lo, hi = q_lo + pad_lo, q_hi + pad_hi
        g = int(math.ceil((hi - lo) / h)) + 1
        if g <= cap:
            g = max(g, 4)
            return np.linspace(lo, lo + (g - 1) * h, g)
    return None


def _grid_ok(sigmas, y) -> bool:
    return len(sigmas) in (1, 2) and max(sigmas) <= GRID_SIGMA_MAX and bool(np.all(y > 0))


def log_evidence_table(G: np.ndarray, sigmas, y: np.ndarray, method: str = "auto") -> np.ndarray:
    """``L[m, p] = log E_m(y[p])`` for all structures.

    ``G`` is ``(n_M, N, n_y)``; ``y`` is ``(P, n_y)``.  A structure whose QoI
    is never positive on some component gets ``-inf`` (absent edge).
    ``method``: ``auto``, ``grid``, ``exact`` (windowed/dense) or ``dense``.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n_m = G.shape[0]
    if method not in ("auto", "exact", "grid", "dense"):
        raise ValueError(f"unknown evidence method '{method}'")
    big = G.shape[1] * n_m * y.shape[0] > AUTO_GRID_WORK
    if (method == "grid" or (method == "auto" and big)) and _grid_ok(sigmas, y):
        out = _grid_1d(G, sigmas, y) if len(sigmas) == 1 else _grid_2d(G, sigmas, y)
        if out is not None:
            return out
    out = np.empty((n_m, y.shape[0]))
    dead = _dead_rows(G)
    for m in range(n_m):
        if dead[m]:
            out[m] = -np.inf
        elif method == "dense":
            out[m] = dense_log_evidence(G[m], sigmas, y)
        else:
            out[m] = windowed_log_evidence(G[m], sigmas, y)
    return out


def _dead_rows(G: np.ndarray) -> np.ndarray:
    """Structures where some observed component is never positive."""
    return np.any(np.all(G <= 0, axis=1), axis=1)


def _grid_1d(G, sigmas, y):
    sigma = float(sigmas[0])
    t = _axis(G[:, :, 0], sigma, GRID_DENSITY_1D, GRID_MAX_1D)
    if t is None:
        return None
    n_m = G.shape[0]
    dead = _dead_rows(G)
    ty = np.log(y[:, 0])
    inside = (ty >= t[0]) & (ty <= t[-1])
    out = np.full((n_m, y.shape[0]), -np.inf)
    yg = np.exp(t)[:, None]
    for m in range(n_m):
        if dead[m]:
            continue
        srt = _Sorted(G[m], 0) if _sort_component(sigmas) is not None else None
        le = windowed_log_evidence(G[m], sigmas, yg, srt)
        le = _floor(le)
        out[m, inside] = CubicSpline(t, le)(ty[inside])
        if not inside.all():
            out[m, ~inside] = windowed_log_evidence(G[m], sigmas, y[~inside], srt)
    return out


def _floor(le: np.ndarray) -> np.ndarray:
    """Replace -inf / underflowed grid values by a floor far below the peak.

    Such nodes sit outside every sample's support; the floor keeps splines
    finite and only touches likelihood ratios below exp(-700).
    """
    finite = np.isfinite(le)
    if finite.all():
        return le
    floor = (le[finite].max() if finite.any() else 0.0) - LOG_FLOOR_GAP
    return np.where(finite, np.maximum(le, floor), floor)


class KernelCache:
    """Bounded LRU of row-scaled likelihood kernels, keyed per target and structure.

    A ranking over all pairs touches each target many times; a kernel is only
    rebuilt after eviction.
    """

    def __init__(self, max_bytes: float = 1.2e9):
        self.max_bytes = max_bytes
        self._store = OrderedDict()
        self._bytes = 0

    def get(self, key, build):
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        value = build()
        self._store[key] = value
        self._bytes += value[0].nbytes + value[1].nbytes
        while len(self._store) > 1 and self._bytes > self.max_bytes:
            _, old = self._store.popitem(last=False)
            self._bytes -= old[0].nbytes + old[1].nbytes
        return value


def _kernel(Gk: np.ndarray, sigma: float, t: np.ndarray):
    """Row-scaled kernel ``K (g, N)`` and row log-scales ``c (g,)`` for one structure."""
    with np.errstate(divide="ignore", invalid="ignore"):
        L = _component_loglik(np.exp(t), Gk, sigma)
        c = L.max(axis=1)
        c = np.where(np.isfinite(c), c, 0.0)
        L -= c[:, None]
        np.exp(L, out=L)
    return L, c


def _grid_2d(G, sigmas, y, cache: KernelCache | None = None, keys=None):
    axes = [_axis(G[:, :, k], float(sigmas[k]), GRID_DENSITY_2D, GRID_MAX_2D) for k in range(2)]
    if any(a is None for a in axes) or axes[0].size * axes[1].size > GRID_MAX_CELLS:
        return None
    n_m, n = G.shape[0], G.shape[1]
    dead = _dead_rows(G)
    ta, tb = axes
    ya, yb = np.log(y[:, 0]), np.log(y[:, 1])
    inside = (ya >= ta[0]) & (ya <= ta[-1]) & (yb >= tb[0]) & (yb <= tb[-1])
    out = np.full((n_m, y.shape[0]), -np.inf)
    for m in range(n_m):
        if dead[m]:
            continue
        kern = []
        for k in range(2):
            build = lambda k=k: _kernel(G[m, :, k], float(sigmas[k]), axes[k])
            kern.append(cache.get((keys[k], m), build) if cache is not None else build())
        (Ka, ca), (Kb, cb) = kern
        S = Ka @ Kb.T
        with np.errstate(divide="ignore"):
            le = np.log(S) + ca[:, None] + cb[None, :] - math.log(n)
        spline = RectBivariateSpline(ta, tb, _floor(le), kx=3, ky=3, s=0)
        out[m, inside] = spline.ev(ya[inside], yb[inside])
        if not inside.all():
            out[m, ~inside] = windowed_log_evidence(G[m], sigmas, y[~inside])
    return out


def pair_log_evidence_table(G, sigmas, y, cache: KernelCache, keys) -> np.ndarray:
    """Grid path for two-target designs with kernel reuse across designs."""
    sigmas = np.asarray(sigmas, dtype=float)
    if _grid_ok(sigmas, y):
        out = _grid_2d(G, sigmas, y, cache=cache, keys=keys)
        if out is not None:
            return out
    return log_evidence_table(G, sigmas, y, method="exact")
