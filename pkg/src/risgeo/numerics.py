"""Numeric kernels shared by the rest of the package.

Complex linear algebra (SVD, randomized QB, Hermitian eigensolver), adaptive
Gauss-Kronrod quadrature, Gamma-family special functions and seeded samplers.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg


class InvalidInputError(ValueError):
    """Raised when an argument violates a kernel's precondition."""


class NumericFailureError(RuntimeError):
    """Raised when an iterative kernel fails to converge.

    Attributes
    ----------
    best_estimate : float or None
        Last available estimate at the point of failure.
    """

    def __init__(self, message: str, best_estimate: Optional[float] = None):
        super().__init__(message)
        self.best_estimate = best_estimate


def _as_complex_matrix(a, name: str = "a") -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr.astype(complex, copy=False)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(s) @ vh`` with ``s`` sorted descending."""

    u: np.ndarray
    s: np.ndarray
    vh: np.ndarray

    @property
    def v(self) -> np.ndarray:
        """Right singular vectors as columns."""
        return self.vh.conj().T

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vh


def svd(a, full_matrices: bool = False) -> SvdResult:
    """Singular value decomposition of a finite complex matrix.

    Backed by LAPACK ``gesdd`` through numpy. Non-convergence is reported as
    :class:`NumericFailureError`.
    """
    arr = _as_complex_matrix(a)
    try:
        u, s, vh = np.linalg.svd(arr, full_matrices=full_matrices)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u=u, s=s, vh=vh)


@dataclass(frozen=True)
class QBResult:
    """Randomized range factorization ``a ~= q @ b``.

    Attributes
    ----------
    q : (m, tau) matrix with orthonormal columns.
    b : (tau, n) matrix, ``q^H a``.
    tau : number of retained range directions.
    residual : relative Frobenius residual ``||a - q b|| / ||a||``.
    saturated : True when the rank cap was hit before reaching ``tol``.
    """

    q: np.ndarray
    b: np.ndarray
    tau: int
    residual: float
    saturated: bool


# singular values of a sketch block below this fraction of ||a||_F carry no new range
_RANK_DROP = 1e-10


def randomized_qb(a, block: int, tol: float, rng, max_rank: Optional[int] = None) -> QBResult:
    """Blocked randomized QB factorization with a residual stopping rule.

    Gaussian test blocks are appended one at a time. Each block is applied to
    the current residual, orthogonalized against the basis found so far, and
    trimmed to its numerically significant directions. Iteration stops once
    ``||a - q b||_F <= tol * ||a||_F``, or when the rank cap
    (``min(a.shape)`` or ``max_rank``) is reached.

    Parameters
    ----------
    a : (m, n) complex matrix
    block : columns per test block
    tol : relative residual target
    rng : RngStream or numpy Generator
    max_rank : optional cap on ``tau``
    """
    if block < 1:
        raise InvalidInputError("block must be >= 1")
    if not tol > 0:
        raise InvalidInputError("tol must be > 0")
    arr = _as_complex_matrix(a)
    gen = as_generator(rng)
    m, n = arr.shape
    cap = min(m, n) if max_rank is None else min(m, n, int(max_rank))
    norm_a = float(np.linalg.norm(arr))
    if norm_a == 0.0:
        return QBResult(np.zeros((m, 0), complex), np.zeros((0, n), complex), 0, 0.0, False)

    q = np.zeros((m, 0), complex)
    b = np.zeros((0, n), complex)
    resid = arr.copy()
    res = 1.0
    while q.shape[1] < cap:
        k = min(block, cap - q.shape[1])
        omega = (gen.standard_normal((n, k)) + 1j * gen.standard_normal((n, k))) / math.sqrt(2.0)
        y = resid @ omega
        if q.shape[1]:
            y -= q @ (q.conj().T @ y)
        uy, sy, _ = np.linalg.svd(y, full_matrices=False)
        keep = int(np.count_nonzero(sy > _RANK_DROP * norm_a))
        if keep == 0:
            break
        qn = uy[:, :keep]
        if q.shape[1]:
            qn -= q @ (q.conj().T @ qn)
            qn, _ = np.linalg.qr(qn)
        bn = qn.conj().T @ resid
        q = np.hstack([q, qn])
        b = np.vstack([b, bn])
        resid -= qn @ bn
        res = float(np.linalg.norm(resid)) / norm_a
        if res <= tol:
            break
    saturated = res > tol and q.shape[1] >= cap
    return QBResult(q=q, b=b, tau=int(q.shape[1]), residual=res, saturated=bool(saturated))


def eig_hermitian(c, herm_tol: float = 1e-9):
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending.

    Uses LAPACK ``heev``: Householder reduction to real tridiagonal form
    followed by implicit-shift QL/QR sweeps with accumulated rotations.

    Returns
    -------
    vectors : (n, n) matrix, column i pairs with ``values[i]``
    values : (n,) real array, descending
    """
    arr = _as_complex_matrix(c, "c")
    if arr.shape[0] != arr.shape[1]:
        raise InvalidInputError("c must be square")
    scale = max(float(np.max(np.abs(arr))), 1.0)
    if float(np.max(np.abs(arr - arr.conj().T))) > herm_tol * scale:
        raise InvalidInputError("c is not Hermitian within tolerance")
    try:
        w, v = scipy.linalg.eigh(arr, driver="ev", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"tridiagonal QR did not converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    return v[:, order], w[order]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

_GK_NODES = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_K15_W = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_G7_W = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_X15 = np.concatenate([-_GK_NODES[:-1], _GK_NODES[::-1]])
_W15 = np.concatenate([_K15_W[:-1], _K15_W[::-1]])
# Gauss nodes are the odd-indexed Kronrod nodes
_W7 = np.zeros(15)
_W7[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_G7_W[:-1], _G7_W[::-1]])


def _gk15(g: Callable, a: float, b: float):
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = np.asarray(g(mid + half * _X15), dtype=float)
    if fx.shape != (15,):
        fx = np.broadcast_to(fx, (15,))
    if not np.all(np.isfinite(fx)):
        raise NumericFailureError(f"integrand not finite on [{a}, {b}]")
    k = half * float(_W15 @ fx)
    g7 = half * float(_W7 @ fx)
    return k, abs(k - g7)


def _mapped_integrand(f: Callable, lo: float, hi: float):
    """Return (g, a, b) such that the integral of f over (lo, hi) is that of g over (a, b)."""
    if math.isinf(lo) and math.isinf(hi):
        def g(t):
            x = t / (1.0 - t * t)
            return np.asarray(f(x), float) * (1.0 + t * t) / (1.0 - t * t) ** 2
        return g, -1.0, 1.0
    if math.isinf(hi):
        def g(t):
            return np.asarray(f(lo + t / (1.0 - t)), float) / (1.0 - t) ** 2
        return g, 0.0, 1.0
    if math.isinf(lo):
        def g(t):
            return np.asarray(f(hi - t / (1.0 - t)), float) / (1.0 - t) ** 2
        return g, 0.0, 1.0
    return f, lo, hi


def integrate(f: Callable, lo: float, hi: float, tol: float = 1e-10, max_intervals: int = 2000,
              breakpoints=()) -> float:
    """Globally adaptive 15-point Gauss-Kronrod quadrature.

    ``f`` is called with a 1-D numpy array of abscissae and must return values
    of the same shape. An infinite limit is mapped to a finite one through
    ``x = t / (1 - t)``. The interval with the largest error estimate is
    bisected until the summed estimate is at most ``tol``.

    Parameters
    ----------
    breakpoints : optional interior points where ``f`` has kinks; the
        initial partition splits there (finite limits only).

    Raises
    ------
    NumericFailureError
        When ``max_intervals`` is exhausted; ``best_estimate`` holds the
        current value.
    """
    if not tol > 0:
        raise InvalidInputError("tol must be > 0")
    lo = float(lo)
    hi = float(hi)
    if math.isnan(lo) or math.isnan(hi):
        raise InvalidInputError("integration limits must not be NaN")
    if lo == hi:
        return 0.0
    if lo > hi:
        return -integrate(f, hi, lo, tol, max_intervals, breakpoints)
    g, a, b = _mapped_integrand(f, lo, hi)
    edges = [a]
    if not (math.isinf(lo) or math.isinf(hi)):
        edges += sorted(float(p) for p in breakpoints if a < p < b)
    edges.append(b)

    heap = []
    total = 0.0
    err = 0.0
    for x0, x1 in zip(edges[:-1], edges[1:]):
        val, e = _gk15(g, x0, x1)
        heapq.heappush(heap, (-e, x0, x1, val))
        total += val
        err += e
    while err > tol:
        if len(heap) >= max_intervals:
            raise NumericFailureError(
                f"quadrature did not reach tol={tol:g} (error estimate {err:.3g})", best_estimate=total)
        neg_e, x0, x1, val = heapq.heappop(heap)
        xm = 0.5 * (x0 + x1)
        if not (x0 < xm < x1):
            raise NumericFailureError("interval collapsed below machine resolution", best_estimate=total)
        v1, e1 = _gk15(g, x0, xm)
        v2, e2 = _gk15(g, xm, x1)
        total += v1 + v2 - val
        err += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, x0, xm, v1))
        heapq.heappush(heap, (-e2, xm, x1, v2))
    return float(total)


def gauss_legendre(n: int, lo: float, hi: float):
    """Nodes and weights of an ``n``-point Gauss-Legendre rule on [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS_C = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])


def _lanczos_sum(z):
    acc = np.full_like(z, _LANCZOS_C[0])
    for i in range(1, len(_LANCZOS_C)):
        acc = acc + _LANCZOS_C[i] / (z + i)
    return acc


def gamma_fn(x):
    """Gamma function via the Lanczos approximation (g = 7, 9 terms).

    Accepts scalars or arrays; arguments below 0.5 use the reflection formula.
    """
    xa = np.asarray(x, dtype=float)
    if np.any((xa <= 0) & (xa == np.floor(xa))):
        raise InvalidInputError("gamma_fn has poles at non-positive integers")
    small = xa < 0.5
    z = np.where(small, 1.0 - xa, xa) - 1.0
    t = z + _LANCZOS_G + 0.5
    with np.errstate(over="ignore"):
        core = math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * np.exp(-t) * _lanczos_sum(z)
        out = np.where(small, math.pi / (np.sin(math.pi * xa) * core), core)
    return float(out) if out.ndim == 0 else out


def log_gamma(x):
    """Natural log of the Gamma function for positive arguments."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise InvalidInputError("log_gamma requires positive arguments")
    small = xa < 0.5
    # ln Gamma(x) = ln Gamma(x + 1) - ln x keeps the Lanczos form in range
    z = np.where(small, xa + 1.0, xa) - 1.0
    t = z + _LANCZOS_G + 0.5
    out = 0.5 * math.log(2.0 * math.pi) + (z + 0.5) * np.log(t) - t + np.log(_lanczos_sum(z))
    out = np.where(small, out - np.log(xa), out)
    return float(out) if out.ndim == 0 else out


_INC_EPS = 1e-15
_INC_MAX_ITER = 100000


def lower_incomplete_gamma_regularized(shape, x):
    """Regularized lower incomplete gamma P(shape, x) = gamma(shape, x) / Gamma(shape).

    Power series for ``x < shape + 1``, modified-Lentz continued fraction for
    the complement otherwise. Broadcasts over array arguments.
    """
    a, xv = np.broadcast_arrays(np.asarray(shape, float), np.asarray(x, float))
    if np.any(a <= 0):
        raise InvalidInputError("shape must be > 0")
    if np.any(xv < 0) or np.any(np.isnan(xv)):
        raise InvalidInputError("x must be >= 0")
    out = np.zeros(a.shape, float)
    pos = xv > 0
    inf = np.isinf(xv)
    out[inf] = 1.0
    work = pos & ~inf
    if np.any(work):
        aw = a[work]
        xw = xv[work]
        with np.errstate(under="ignore"):
            log_pref = aw * np.log(xw) - xw - log_gamma(aw)
        res = np.empty_like(aw)
        ser = xw < aw + 1.0
        if np.any(ser):
            res[ser] = _inc_series(aw[ser], xw[ser], log_pref[ser])
        cf = ~ser
        if np.any(cf):
            res[cf] = 1.0 - _inc_contfrac(aw[cf], xw[cf], log_pref[cf])
        out[work] = np.clip(res, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _inc_series(a, x, log_pref):
    ap = a.copy()
    term = 1.0 / a
    total = term.copy()
    active = np.ones(a.shape, bool)
    for _ in range(_INC_MAX_ITER):
        ap = ap + 1.0
        term = np.where(active, term * x / ap, term)
        total = np.where(active, total + term, total)
        active &= np.abs(term) > np.abs(total) * _INC_EPS
        if not active.any():
            break
    else:
        raise NumericFailureError("incomplete gamma series did not converge")
    with np.errstate(under="ignore"):
        return total * np.exp(log_pref)


def _inc_contfrac(a, x, log_pref):
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(a, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(a.shape, bool)
    for i in range(1, _INC_MAX_ITER):
        an = -i * (i - a)
        b = b + 2.0
        d_new = an * d + b
        d_new = np.where(np.abs(d_new) < tiny, tiny, d_new)
        c_new = b + an / c
        c_new = np.where(np.abs(c_new) < tiny, tiny, c_new)
        d_new = 1.0 / d_new
        delta = d_new * c_new
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _INC_EPS
        if not active.any():
            break
    else:
        raise NumericFailureError("incomplete gamma continued fraction did not converge")
    with np.errstate(under="ignore"):
        return np.exp(log_pref) * h


# ---------------------------------------------------------------------------
# Random streams and samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Seed pair naming an independent random stream.

    The same ``(seed, stream)`` always yields the same draws, whatever the
    process or thread layout.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF,
                                    spawn_key=(int(self.stream) & 0xFFFFFFFFFFFFFFFF,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        """Derive a sub-stream; distinct keys give independent streams."""
        h = int(self.stream)
        for k in keys:
            h = (h * 0x100000001B3 + int(k) + 1) & 0xFFFFFFFFFFFFFFFF
        return RngStream(self.seed, h)


RngLike = Union[RngStream, np.random.Generator, int]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise InvalidInputError(f"unsupported rng type {type(rng).__name__}")


def sample_poisson(mean: float, rng: RngLike, size=None):
    if not mean >= 0:
        raise InvalidInputError("Poisson mean must be >= 0")
    gen = as_generator(rng)
    if mean == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    return gen.poisson(mean, size)


def sample_gamma(shape: float, rate: float, rng: RngLike, size=None):
    """Gamma draws with the given shape and rate (scale = 1/rate)."""
    if not (shape > 0 and rate > 0):
        raise InvalidInputError("Gamma shape and rate must be > 0")
    return as_generator(rng).gamma(shape, 1.0 / rate, size)


def sample_nakagami(m: float, omega: float, rng: RngLike, size=None):
    """Nakagami-m envelopes, ``sqrt(g)`` with ``g ~ Gamma(m, scale=omega/m)``."""
    if not (m > 0 and omega > 0):
        raise InvalidInputError("Nakagami m and omega must be > 0")
    return np.sqrt(as_generator(rng).gamma(m, omega / m, size))
