"""RIS phase-shift control: SVD-optimal, randomized-QB sub-optimal, quantized and random plans.

Conventions
-----------
``h`` is ``(N_b, L)`` (BS to RIS, one column per element) and ``g`` is
``(N_u, L)`` (RIS to user). The end-to-end matrix is
``sum_l exp(j theta_l) g[:, l] h[:, l]^T`` and its vectorization equals
``E @ w`` where ``E = khatri_rao(h, g)`` and ``w = exp(j theta)``. The control
objective is ``||E w||^2``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .numerics import InvalidInputError, RngLike, as_generator, eig_hermitian, randomized_qb, svd

TWO_PI = 2 * np.pi

# defaults for the randomized range finder
QB_BLOCK = 8
QB_TOL = 0.3
# rank budget of the range finder; keeps the sub-optimal cost linear in the element count
QB_MAX_RANK = 64


@dataclass
class PhasePlan:
    """Per-RIS phase vectors in [0, 2 pi) and the scheme that produced them."""

    phases: list
    scheme: str
    degenerate: bool = False
    fallback: bool = False
    tau: int = 0

    def __post_init__(self):
        self.phases = [np.mod(np.asarray(p, float), TWO_PI) for p in self.phases]
        for p in self.phases:
            p[p >= TWO_PI] = 0.0

    @property
    def coefficients(self) -> list:
        return [np.exp(1j * p) for p in self.phases]

    @property
    def stacked(self) -> np.ndarray:
        """Concatenated reflection coefficients of all RISs in the plan."""
        return np.concatenate(self.coefficients) if self.phases else np.zeros(0, complex)


@dataclass
class E2eChannel:
    matrix: np.ndarray
    contributing_ris_indices: list = field(default_factory=list)


_SCHEME_RE = re.compile(r"^(optimal|suboptimal|random|era|quantized:(\d+))$")


def parse_scheme(name: str):
    """Split a scheme string into ``(kind, bits)``; bits is None unless quantized."""
    m = _SCHEME_RE.match(name.strip())
    if not m:
        raise InvalidInputError(
            f"unknown scheme {name!r}; expected optimal, suboptimal, quantized:<bits>, random or era")
    if m.group(2) is not None:
        bits = int(m.group(2))
        if bits < 1:
            raise InvalidInputError("quantization needs at least 1 bit")
        return "quantized", bits
    return m.group(1), None


def khatri_rao(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product, column ``l`` = ``kron(h[:, l], g[:, l])``.

    Works on stacks: leading dimensions of ``h`` and ``g`` broadcast.
    """
    h = np.asarray(h)
    g = np.asarray(g)
    if h.shape[-1] != g.shape[-1]:
        raise InvalidInputError("h and g need the same number of columns")
    out = h[..., :, None, :] * g[..., None, :, :]
    return out.reshape(out.shape[:-3] + (h.shape[-2] * g.shape[-2], h.shape[-1]))


def _check_pairs(h_list, g_list):
    if len(h_list) == 0 or len(h_list) != len(g_list):
        raise InvalidInputError("need a non-empty, paired h_list / g_list")
    n_b = h_list[0].shape[0]
    n_u = g_list[0].shape[0]
    for h, g in zip(h_list, g_list):
        if h.ndim != 2 or g.ndim != 2 or h.shape[0] != n_b or g.shape[0] != n_u or h.shape[1] != g.shape[1]:
            raise InvalidInputError("channel dimensions are inconsistent")


def stacked_cascade(h_list, g_list, weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Side-by-side Khatri-Rao blocks, optionally scaled by per-RIS amplitude weights."""
    _check_pairs(h_list, g_list)
    blocks = []
    for i, (h, g) in enumerate(zip(h_list, g_list)):
        e = khatri_rao(h, g)
        if weights is not None:
            e = e * float(weights[i])
        blocks.append(e)
    return np.hstack(blocks)


def _split(vec: np.ndarray, sizes: Sequence[int]) -> list:
    return np.split(vec, np.cumsum(sizes)[:-1])


def e2e_channel(h_list, g_list, plan: PhasePlan, h_d: Optional[np.ndarray] = None,
                weights: Optional[Sequence[float]] = None, check: bool = True) -> E2eChannel:
    """Effective ``(N_u, N_b)`` channel of the listed RISs under ``plan`` (plus ``h_d``).

    The direct double sum is cross-checked against the Khatri-Rao route.
    """
    _check_pairs(h_list, g_list)
    if len(plan.phases) != len(h_list):
        raise InvalidInputError("plan must cover every listed RIS")
    n_b = h_list[0].shape[0]
    n_u = g_list[0].shape[0]
    out = np.zeros((n_u, n_b), complex)
    for i, (h, g, w) in enumerate(zip(h_list, g_list, plan.coefficients)):
        if len(w) != h.shape[1]:
            raise InvalidInputError("phase vector length must equal the element count")
        scale = 1.0 if weights is None else float(weights[i])
        out += scale * (g * w) @ h.T
    if check:
        vec = stacked_cascade(h_list, g_list, weights) @ plan.stacked
        # vec stacks kron(h_l, g_l): index b * N_u + u, i.e. column-major (N_u, N_b)
        alt = vec.reshape(n_b, n_u).T
        if not np.allclose(out, alt, rtol=1e-9, atol=1e-12 * max(1.0, float(np.max(np.abs(out))))):
            raise AssertionError("Khatri-Rao identity violated")
    if h_d is not None:
        hd = np.asarray(h_d)
        if hd.shape != (n_u, n_b):
            raise InvalidInputError("h_d must be (N_u, N_b)")
        out = out + hd
    return E2eChannel(out, list(range(len(h_list))))


def objective(h_list, g_list, plan: PhasePlan, weights=None) -> float:
    """``||E w||^2``: squared Frobenius norm of the reflected end-to-end channel."""
    e = stacked_cascade(h_list, g_list, weights)
    return float(np.linalg.norm(e @ plan.stacked) ** 2)


def _phases_from_vector(v: np.ndarray) -> np.ndarray:
    return np.mod(np.angle(v), TWO_PI)


def optimal_phases_multi(h_list, g_list, weights: Optional[Sequence[float]] = None) -> PhasePlan:
    """Joint block-diagonal plan: unit-modulus projection of the top right singular vector
    of the stacked cascade."""
    _check_pairs(h_list, g_list)
    e = stacked_cascade(h_list, g_list, weights)
    sizes = [h.shape[1] for h in h_list]
    if not np.any(e):
        return PhasePlan([np.zeros(s) for s in sizes], "optimal", degenerate=True)
    res = svd(e)
    v1 = res.vh[0].conj()
    return PhasePlan(_split(_phases_from_vector(v1), sizes), "optimal")


def optimal_phases(h: np.ndarray, g: np.ndarray) -> PhasePlan:
    """Single-RIS plan from the SVD of ``khatri_rao(h, g)``."""
    return optimal_phases_multi([h], [g])


def suboptimal_coefficients(e: np.ndarray, block: int = QB_BLOCK, tol: float = QB_TOL, rng: RngLike = 0,
                            max_rank: Optional[int] = QB_MAX_RANK):
    """Unit-modulus coefficients from the randomized-QB pipeline on an assembled cascade.

    ``E ~= Q B`` from :func:`randomized_qb`; the top eigenpair ``(u, lam)`` of
    ``C = B B^H`` gives the leading right singular vector
    ``v = B^H u / sqrt(lam)``. Returns ``(w, tau, fallback)``; ``fallback`` is
    set when an uncapped range finder saturated without reaching ``tol`` and
    the exact SVD was used instead.
    """
    qb = randomized_qb(e, block, tol, rng, max_rank=max_rank)
    if qb.saturated and max_rank is None:
        v1 = svd(e).vh[0].conj()
        return np.exp(1j * np.angle(v1)), qb.tau, True
    c = qb.b @ qb.b.conj().T
    vecs, vals = eig_hermitian(0.5 * (c + c.conj().T))
    v1 = qb.b.conj().T @ vecs[:, 0] / np.sqrt(vals[0])
    return np.exp(1j * np.angle(v1)), qb.tau, False


def suboptimal_phases(h_list, g_list, block: int = QB_BLOCK, tol: float = QB_TOL, rng: RngLike = 0,
                      weights: Optional[Sequence[float]] = None,
                      max_rank: Optional[int] = QB_MAX_RANK) -> PhasePlan:
    """Randomized-QB plan for the listed RISs; see :func:`suboptimal_coefficients`.

    The range finder stops at ``tol`` relative residual or at ``max_rank``
    directions, whichever comes first (``None`` removes the cap).
    """
    _check_pairs(h_list, g_list)
    e = stacked_cascade(h_list, g_list, weights)
    sizes = [h.shape[1] for h in h_list]
    if not np.any(e):
        return PhasePlan([np.zeros(s) for s in sizes], "suboptimal", degenerate=True)
    w, tau, fallback = suboptimal_coefficients(e, block, tol, rng, max_rank)
    return PhasePlan(_split(_phases_from_vector(w), sizes), "suboptimal", fallback=fallback, tau=tau)


def quantize_phases(plan: PhasePlan, bits: int) -> PhasePlan:
    """Snap every phase to the nearest point of the ``2**bits`` uniform grid."""
    if bits < 1:
        raise InvalidInputError("bits must be >= 1")
    q = 2 ** int(bits)
    step = TWO_PI / q
    snapped = [np.mod(np.round(p / step), q) * step for p in plan.phases]
    return PhasePlan(snapped, f"quantized:{int(bits)}", degenerate=plan.degenerate)


def random_phases(l_per_ris: Sequence[int], rng: RngLike) -> PhasePlan:
    gen = as_generator(rng)
    return PhasePlan([gen.random(int(n)) * TWO_PI for n in l_per_ris], "random")


def mrt_beamformer(e2e) -> np.ndarray:
    """Unit-Frobenius-norm transmit matrix proportional to the effective channel."""
    mat = e2e.matrix if isinstance(e2e, E2eChannel) else np.asarray(e2e)
    nrm = float(np.linalg.norm(mat))
    if nrm == 0.0:
        raise InvalidInputError("zero effective channel")
    return mat / nrm


def beamformed_power(channel: np.ndarray, w: np.ndarray) -> float:
    """``|<W, channel>|^2`` with the Frobenius inner product."""
    return float(abs(np.vdot(w, channel)) ** 2)


# ---------------------------------------------------------------------------
# Batched kernels used by the simulator
# ---------------------------------------------------------------------------


def _top_eigvecs(gram: np.ndarray) -> np.ndarray:
    """Eigenvector of the largest eigenvalue for each Hermitian matrix in a stack."""
    n = gram.shape[-1]
    flat = gram.reshape((-1, n, n))
    out = np.empty((flat.shape[0], n), dtype=np.result_type(gram.dtype, np.complex128))
    for i, g in enumerate(flat):
        # one eigenpair via MRRR is much cheaper than the full decomposition
        _, vec = scipy.linalg.eigh(g, subset_by_index=[n - 1, n - 1], driver="evr", check_finite=False)
        out[i] = vec[:, 0]
    return out.reshape(gram.shape[:-1])


def top_right_vectors(e: np.ndarray) -> np.ndarray:
    """Leading right singular vector of each matrix in a ``(..., M, L)`` stack.

    Uses the smaller Gram matrix: ``E^H E`` when ``L <= M``, else
    ``E E^H`` followed by ``v = E^H u``. The global phase is arbitrary; the
    norm is not normalized in the second branch.
    """
    m, l = e.shape[-2:]
    if m == 1:
        return e[..., 0, :].conj()
    if l <= m:
        return _top_eigvecs(np.swapaxes(e.conj(), -1, -2) @ e)
    u = _top_eigvecs(e @ np.swapaxes(e.conj(), -1, -2))
    return np.einsum("...ml,...m->...l", e.conj(), u)


def cascade_gram(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``E^H E`` of ``E = khatri_rao(h, g)`` without forming ``E``.

    Entry ``(l, k)`` is ``(h_l^H h_k)(g_l^H g_k)``; stacks broadcast.
    """
    hh = np.swapaxes(h.conj(), -1, -2) @ h
    gg = np.swapaxes(g.conj(), -1, -2) @ g
    return hh * gg


def top_vectors_from_gram(gram: np.ndarray) -> np.ndarray:
    """Leading right singular vectors of cascades given their Gram matrices ``E^H E``."""
    return _top_eigvecs(gram)


def objective_from_gram(gram: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``||E w||^2 = w^H (E^H E) w`` for stacks."""
    return np.real(np.einsum("...l,...lk,...k->...", w.conj(), gram, w))


def optimal_coefficients_batch(e: np.ndarray) -> np.ndarray:
    """Unit-modulus coefficients ``exp(j angle(v1))`` for a stack of cascades."""
    v = top_right_vectors(e)
    return np.exp(1j * np.angle(v))


def objective_batch(e: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``||E w||^2`` for stacks ``e`` (..., M, L) and ``w`` (..., L)."""
    return np.sum(np.abs(np.einsum("...ml,...l->...m", e, w)) ** 2, axis=-1)
