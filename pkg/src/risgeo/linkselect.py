"""Direct and reflected SINR, best-RIS and K-subset association."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelRealization, SystemConfig, pathloss_omega
from .numerics import InvalidInputError, RngLike, RngStream, as_generator
from .phasectl import (PhasePlan, objective, optimal_phases_multi, parse_scheme, quantize_phases,
                       random_phases, suboptimal_phases, QB_BLOCK, QB_MAX_RANK, QB_TOL)

# exhaustive subset enumeration is abandoned above this many subsets
EXHAUSTIVE_LIMIT = 10_000


@dataclass
class SinrBreakdown:
    """Linear SINR components for one user.

    ``total`` is ``direct + reflective``. ``weighted`` and ``realized`` are
    filled by the simulator: the probability-weighted combination and the
    SINR of the link the user is actually associated with.
    """

    direct: float
    reflective: float
    selected_ris: list = field(default_factory=list)
    noise_power: float = 0.0
    interference_power: float = 0.0
    weighted: float = float("nan")
    realized: float = float("nan")

    def __post_init__(self):
        if self.direct < 0 or self.reflective < 0:
            raise InvalidInputError("SINR components must be >= 0")

    @property
    def total(self) -> float:
        return self.direct + self.reflective


@dataclass
class LinkGeometry:
    """Distances (m) and interference (W) seen by one user.

    ``r_sr[n]`` / ``r_rd[n]`` are indexed like the channel realization's RIS
    lists. ``alive_interference[n]`` is the extra interference arriving
    through RIS ``n`` when it serves this user.
    """

    r_sd: float
    r_sr: np.ndarray
    r_rd: np.ndarray
    interference: float = 0.0
    alive_interference: Optional[np.ndarray] = None

    def __post_init__(self):
        self.r_sr = np.atleast_1d(np.asarray(self.r_sr, float))
        self.r_rd = np.atleast_1d(np.asarray(self.r_rd, float))

    def alive(self, idx: Sequence[int]) -> float:
        if self.alive_interference is None:
            return 0.0
        return float(np.sum(np.asarray(self.alive_interference)[list(idx)]))


def direct_scale(cfg: SystemConfig, r_sd) -> np.ndarray:
    """Received power per unit normalized fading on the direct link (W)."""
    return cfg.aligned_gain * cfg.tx_power_w * pathloss_omega(r_sd, cfg, (cfg.gain_source_dbi, cfg.gain_dest_dbi))


def reflective_scale(cfg: SystemConfig, r_sr, r_rd) -> np.ndarray:
    """Received power per unit normalized cascade objective through one RIS (W)."""
    d0 = cfg.reference_distance_m
    prod = np.maximum(np.asarray(r_sr, float), d0) * np.maximum(np.asarray(r_rd, float), d0)
    return (cfg.aligned_gain * cfg.tx_power_w * cfg.zeta ** 2 * cfg.reflective_gain_product
            * prod ** (-cfg.path_loss_exponent))


def sinr_direct(h_d, cfg: SystemConfig, r_sd: float, interference: float = 0.0) -> float:
    """Direct-link SINR.

    The fading aggregate ``||H_d||_F^2 / (N_u N_b)`` has unit mean; the array
    gain enters through the aligned sectored gain ``M_t M_r``.
    """
    if r_sd < 0:
        raise InvalidInputError("r_sd must be >= 0")
    hd = np.atleast_2d(np.asarray(h_d))
    agg = float(np.linalg.norm(hd) ** 2) / hd.size
    return agg * float(direct_scale(cfg, r_sd)) / (cfg.noise_power_w + interference)


def _amplitude_weights(r_sr, r_rd, alpha: float, d0: float) -> np.ndarray:
    prod = np.maximum(np.asarray(r_sr, float), d0) * np.maximum(np.asarray(r_rd, float), d0)
    w = prod ** (-alpha / 2)
    return w / np.max(w)


def sinr_reflective(h_list, g_list, plan: PhasePlan, cfg: SystemConfig, r_sr, r_rd,
                    interference: float = 0.0) -> float:
    """Reflected-link SINR of one RIS or a jointly controlled set.

    Contributions add coherently with amplitude weights
    ``(r_sr r_rd)^(-alpha/2)``; for a single RIS this is
    ``||E w||^2 / (N_u N_b) * M_t M_r P zeta^2 G (r_sr r_rd)^-alpha / (noise + I)``.
    """
    r_sr = np.atleast_1d(np.asarray(r_sr, float))
    r_rd = np.atleast_1d(np.asarray(r_rd, float))
    if len(r_sr) != len(h_list) or len(r_rd) != len(h_list):
        raise InvalidInputError("one distance pair per RIS is required")
    w = _amplitude_weights(r_sr, r_rd, cfg.path_loss_exponent, cfg.reference_distance_m)
    ref = int(np.argmax(w))
    obj = objective(h_list, g_list, plan, weights=w)
    size = h_list[0].shape[0] * g_list[0].shape[0]
    signal = obj / size * float(reflective_scale(cfg, r_sr[ref], r_rd[ref]))
    return signal / (cfg.noise_power_w + interference)


def plan_for_scheme(h_list, g_list, scheme: str, rng: RngLike = None, weights=None,
                    qb_block: int = QB_BLOCK, qb_tol: float = QB_TOL,
                    qb_max_rank: Optional[int] = QB_MAX_RANK) -> PhasePlan:
    """Phase plan of the named scheme for the listed RISs."""
    kind, bits = parse_scheme(scheme)
    if kind in ("optimal", "era"):
        return optimal_phases_multi(h_list, g_list, weights)
    if kind == "suboptimal":
        return suboptimal_phases(h_list, g_list, qb_block, qb_tol, rng if rng is not None else 0, weights,
                                 qb_max_rank)
    if kind == "quantized":
        return quantize_phases(optimal_phases_multi(h_list, g_list, weights), bits)
    return random_phases([h.shape[1] for h in h_list], rng if rng is not None else 0)


def _sub_realization(real: ChannelRealization, idx: Sequence[int]):
    return [real.h_list[i] for i in idx], [real.g_list[i] for i in idx]


def evaluate_subset(idx: Sequence[int], real: ChannelRealization, cfg: SystemConfig, geom: LinkGeometry,
                    scheme: str = "optimal", rng: RngLike = None):
    """Jointly controlled SINR of the RIS subset ``idx``; returns ``(sinr, plan)``."""
    idx = list(idx)
    hs, gs = _sub_realization(real, idx)
    w = _amplitude_weights(geom.r_sr[idx], geom.r_rd[idx], cfg.path_loss_exponent, cfg.reference_distance_m)
    plan = plan_for_scheme(hs, gs, scheme, rng, weights=w)
    sinr = sinr_reflective(hs, gs, plan, cfg, geom.r_sr[idx], geom.r_rd[idx],
                           geom.interference + geom.alive(idx))
    return sinr, plan


def _stream(rng: RngLike, key: int):
    if isinstance(rng, RngStream):
        return rng.child(key)
    return rng


def select_best_ris(candidates: Sequence[int], real: ChannelRealization, cfg: SystemConfig,
                    geom: LinkGeometry, scheme: str = "optimal", rng: RngLike = None):
    """Candidate with the highest ``gamma_D + gamma_I``.

    Ties go to the smaller distance product, then the smaller index. With no
    candidate the result is ``(None, direct-only breakdown)``.
    """
    gamma_d = sinr_direct(real.h_d, cfg, geom.r_sd, geom.interference)
    noise = cfg.noise_power_w
    if len(candidates) == 0:
        return None, SinrBreakdown(gamma_d, 0.0, [], noise, geom.interference)
    best = None
    for n in candidates:
        g_i, _ = evaluate_subset([n], real, cfg, geom, scheme, _stream(rng, n))
        key = (-(gamma_d + g_i), float(geom.r_sr[n] * geom.r_rd[n]), int(n))
        if best is None or key < best[0]:
            best = (key, n, g_i)
    _, n, g_i = best
    return int(n), SinrBreakdown(gamma_d, g_i, [int(n)], noise, geom.interference + geom.alive([n]))


def select_ris_subset(candidates: Sequence[int], k: int, real: ChannelRealization, cfg: SystemConfig,
                      geom: LinkGeometry, mode: str = "auto", scheme: str = "optimal", rng: RngLike = None):
    """Best ``k``-subset of ``candidates`` under joint phase control.

    ``exhaustive`` scores every subset; ``greedy`` grows the set one RIS at a
    time by largest SINR. ``auto`` picks exhaustive unless there are more
    than ``EXHAUSTIVE_LIMIT`` subsets.
    """
    cand = [int(c) for c in candidates]
    if not 1 <= k <= len(cand):
        raise InvalidInputError(f"need 1 <= K <= {len(cand)}, got {k}")
    if mode not in ("auto", "exhaustive", "greedy"):
        raise InvalidInputError(f"unknown subset mode {mode!r}")
    gamma_d = sinr_direct(real.h_d, cfg, geom.r_sd, geom.interference)
    noise = cfg.noise_power_w

    def score(sub):
        return evaluate_subset(sub, real, cfg, geom, scheme, _stream(rng, hash(tuple(sub)) & 0xFFFFFFFF))[0]

    if k == len(cand):
        chosen = cand
    elif mode == "exhaustive" or (mode == "auto" and math.comb(len(cand), k) <= EXHAUSTIVE_LIMIT):
        best = None
        for sub in itertools.combinations(cand, k):
            s = score(list(sub))
            if best is None or s > best[0]:
                best = (s, list(sub))
        chosen = best[1]
    else:
        chosen = []
        for _ in range(k):
            best = None
            for c in cand:
                if c in chosen:
                    continue
                s = score(chosen + [c])
                if best is None or s > best[0]:
                    best = (s, c)
            chosen.append(best[1])
    g_i = score(chosen)
    return chosen, SinrBreakdown(gamma_d, g_i, list(chosen), noise, geom.interference + geom.alive(chosen))


def weighted_sinr(gamma_d, gamma_i, p_los, p_reflect):
    """``p_los * gamma_d + (1 - p_los) * p_reflect * gamma_i``."""
    p_los = np.asarray(p_los, float)
    p_reflect = np.asarray(p_reflect, float)
    if np.any((p_los < 0) | (p_los > 1) | (p_reflect < 0) | (p_reflect > 1)):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    out = p_los * np.asarray(gamma_d, float) + (1 - p_los) * p_reflect * np.asarray(gamma_i, float)
    return float(out) if out.ndim == 0 else out
