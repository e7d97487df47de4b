"""Monte Carlo engine: per-trial pipeline, coverage curves, rates and scheme comparisons.

Every random quantity of a trial is drawn from a sub-stream of
``RngStream(base_seed, trial_index)`` keyed by what it describes (RIS index,
user index, ...). Channels therefore do not depend on the phase-control
scheme, the candidate shortlist or the worker layout, which gives common
random numbers across schemes and thread-count independent output.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelRealization, SystemConfig, draw_interference, cascade_power_random
from .geometry import (Deployment, PcpParams, los_probability, sample_disk_uniform, sample_fixed_count_disk,
                       sample_pcp_disk, sample_ppp_disk)
from .linkselect import (LinkGeometry, SinrBreakdown, direct_scale, reflective_scale, select_ris_subset,
                         weighted_sinr)
from .numerics import InvalidInputError, NumericFailureError, RngStream
from .phasectl import (QB_BLOCK, QB_MAX_RANK, QB_TOL, TWO_PI, khatri_rao, objective_batch, objective_from_gram,
                       parse_scheme, suboptimal_coefficients, top_right_vectors, top_vectors_from_gram)

DEPLOYMENT_MODELS = ("ppp", "pcp", "fixed-count")
SINR_METRICS = ("association", "weighted", "total")
# the random benchmark draws every phase from this many bits of resolution
RANDOM_PHASE_BITS = 4

# sub-stream keys
_K_GEOMETRY, _K_LOS, _K_BS_RIS, _K_DIRECT, _K_INTERF, _K_RIS_USER, _K_ALIVE, _K_RANDOM, _K_QB = range(9)


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment.

    ``sinr_metric`` picks the per-user SINR that coverage and rate use:
    ``association`` is the SINR of the link the user is served by (direct
    when the direct path is LoS, else the best LoS RIS, else zero);
    ``weighted`` is the probability-weighted combination; ``total`` is
    ``gamma_D + gamma_I``. ``candidate_limit`` keeps the LoS RISs with the
    smallest path-length product before the SINR argmax (None keeps all).
    ``user_distance`` places user 0 at that distance from the BS and reports
    statistics for user 0 only. Under the association metric the reflected
    SINR of users with a LoS direct path is not needed and is left as NaN
    unless ``full_breakdown`` is set.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    ris_density: float = 1e-3
    deployment_model: str = "ppp"
    pcp_mean_per_cluster: float = 3.0
    pcp_scatter_std: Optional[float] = None
    scheme: str = "optimal"
    k_ris: int = 1
    subset_mode: str = "auto"
    thresholds_db: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    n_trials: int = 1000
    base_seed: int = 2024
    interference: bool = True
    sinr_metric: str = "association"
    candidate_limit: Optional[int] = 8
    user_distance: Optional[float] = None
    rate_cap_db: float = -3.0
    qb_block: int = QB_BLOCK
    qb_tol: float = QB_TOL
    qb_max_rank: Optional[int] = QB_MAX_RANK
    full_breakdown: bool = False

    def __post_init__(self):
        if self.n_trials < 1:
            raise InvalidInputError("n_trials must be >= 1")
        if self.ris_density < 0:
            raise InvalidInputError("ris_density must be >= 0")
        if self.deployment_model not in DEPLOYMENT_MODELS:
            raise InvalidInputError(f"deployment_model must be one of {DEPLOYMENT_MODELS}")
        if self.sinr_metric not in SINR_METRICS:
            raise InvalidInputError(f"sinr_metric must be one of {SINR_METRICS}")
        parse_scheme(self.scheme)
        if self.k_ris < 1:
            raise InvalidInputError("k_ris must be >= 1")
        object.__setattr__(self, "thresholds_db", tuple(float(t) for t in self.thresholds_db))
        if not all(math.isfinite(t) for t in self.thresholds_db):
            raise InvalidInputError("thresholds must be finite")
        if self.candidate_limit is not None and self.candidate_limit < 1:
            raise InvalidInputError("candidate_limit must be >= 1 or None")
        if self.user_distance is not None and not (0 <= self.user_distance <= self.system.cell_radius_m):
            raise InvalidInputError("user_distance must lie inside the cell")

    def with_updates(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def snapshot(self) -> dict:
        return asdict(self)


@dataclass
class CoverageCurve:
    threshold_db: list
    coverage: list
    ci_halfwidth: list
    n_samples: int = 0


@dataclass
class RateSummary:
    per_user_rate: np.ndarray
    sum_rate: float
    cap_db: float
    trial_rates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.per_user_rate)) if len(self.per_user_rate) else 0.0


@dataclass
class TrialResult:
    """Per-user outputs of one trial plus a few diagnostics."""

    breakdowns: list
    metric: np.ndarray
    direct_los: np.ndarray
    n_ris: int


# ---------------------------------------------------------------------------
# Per-trial pipeline
# ---------------------------------------------------------------------------


def _sample_ris(cfg: ExperimentConfig, gen) -> np.ndarray:
    radius = cfg.system.cell_radius_m
    if cfg.ris_density == 0:
        return np.zeros((0, 2))
    if cfg.deployment_model == "ppp":
        return sample_ppp_disk(cfg.ris_density, radius, gen)
    if cfg.deployment_model == "fixed-count":
        return sample_fixed_count_disk(cfg.ris_density, radius, gen)
    std = 0.25 * radius if cfg.pcp_scatter_std is None else cfg.pcp_scatter_std
    params = PcpParams.matched(cfg.ris_density, cfg.pcp_mean_per_cluster, std)
    return sample_pcp_disk(params, radius, gen)


def sample_deployment(cfg: ExperimentConfig, trial_index: int) -> Deployment:
    """RIS and user positions of a trial, with per-user LoS marks."""
    root = RngStream(cfg.base_seed, trial_index)
    gen = root.child(_K_GEOMETRY).generator()
    sys = cfg.system
    ris = _sample_ris(cfg, gen)
    users = sample_disk_uniform(sys.n_users, sys.cell_radius_m, gen)
    if cfg.user_distance is not None:
        phi = gen.random() * TWO_PI
        users[0] = cfg.user_distance * np.array([math.cos(phi), math.sin(phi)])
    dep = Deployment(sys.cell_radius_m, ris, users)
    gen_los = root.child(_K_LOS).generator()
    if dep.n_ris:
        p = los_probability(dep.user_ris_distance(), sys.h_ut_m)
        dep.los_marks = gen_los.random(p.shape) < p
    return dep


def _nakagami_matrix(gen, m: float, shape) -> np.ndarray:
    amp = np.sqrt(gen.gamma(m, 1.0 / m, shape))
    return amp * np.exp(1j * TWO_PI * gen.random(shape))


class _TrialChannels:
    """Lazily drawn unit-power channels keyed by (RIS) or (user, RIS)."""

    def __init__(self, cfg: ExperimentConfig, root: RngStream):
        self.sys = cfg.system
        self.root = root
        self._h = {}
        self._hh = {}

    def bs_ris(self, n: int) -> np.ndarray:
        if n not in self._h:
            gen = self.root.child(_K_BS_RIS, n).generator()
            self._h[n] = _nakagami_matrix(gen, self.sys.nakagami_m_los, (self.sys.n_bs_antennas, self.sys.ris_elements))
        return self._h[n]

    def bs_ris_gram(self, n: int) -> np.ndarray:
        if n not in self._hh:
            h = self.bs_ris(n)
            self._hh[n] = h.conj().T @ h
        return self._hh[n]

    def ris_user(self, u: int, n: int) -> np.ndarray:
        gen = self.root.child(_K_RIS_USER, u, n).generator()
        return _nakagami_matrix(gen, self.sys.nakagami_m_los, (self.sys.n_ue_antennas, self.sys.ris_elements))

    def direct(self, u: int, los: bool) -> np.ndarray:
        gen = self.root.child(_K_DIRECT, u).generator()
        m = self.sys.nakagami_m_los if los else self.sys.nakagami_m_nlos
        return _nakagami_matrix(gen, m, (self.sys.n_ue_antennas, self.sys.n_bs_antennas))


def _alive_interference(cfg: ExperimentConfig, dep: Deployment, u: int, cand: np.ndarray, root: RngStream):
    """Interference reaching user ``u`` from the other users through each candidate RIS."""
    sys = cfg.system
    others = np.array([k for k in range(dep.n_users) if k != u], dtype=int)
    if len(others) == 0 or len(cand) == 0:
        return np.zeros(len(cand))
    gen = root.child(_K_ALIVE, u).generator()
    ris = dep.ris_points[cand]
    d1 = np.hypot(ris[:, None, 0] - dep.user_points[None, others, 0], ris[:, None, 1] - dep.user_points[None, others, 1])
    d2 = np.hypot(ris[:, 0] - dep.user_points[u, 0], ris[:, 1] - dep.user_points[u, 1])
    shape = (len(cand), len(others))
    casc = cascade_power_random(sys.nakagami_m_nlos, sys.nakagami_m_los, sys.ris_elements, gen, shape)
    u_rho = gen.random((2,) + shape)
    bs, ue = sys.bs_pattern, sys.ue_pattern
    rho = (np.where(u_rho[0] < bs.main_prob, bs.main_gain, bs.side_gain)
           * np.where(u_rho[1] < ue.main_prob, ue.main_gain, ue.side_gain))
    # per-RIS scale already contains M_t M_r; replace it by the misaligned draw
    scale = reflective_scale(sys, d1, d2[:, None]) / sys.aligned_gain
    p_ratio = sys.interferer_power_w / sys.tx_power_w
    return np.sum(casc * rho * scale * p_ratio, axis=1)


def _reflected_objectives(cfg: ExperimentConfig, hs, gs, hh, u: int, cand: np.ndarray, root: RngStream):
    """``||E w||^2`` per candidate under the configured scheme.

    ``hh`` holds the cached ``H^H H`` of each candidate. When the element
    count does not exceed the cascade height the Gram route
    ``E^H E = (H^H H) * (G^H G)`` avoids forming ``E``.
    """
    kind, bits = parse_scheme(cfg.scheme)
    h_stack, g_stack = np.stack(hs), np.stack(gs)
    n_rows = h_stack.shape[1] * g_stack.shape[1]
    if kind == "suboptimal":
        e = khatri_rao(h_stack, g_stack)
        out = np.empty(len(cand))
        for i, n in enumerate(cand):
            if not np.any(e[i]):
                out[i] = 0.0
                continue
            w, _, _ = suboptimal_coefficients(e[i], cfg.qb_block, cfg.qb_tol, root.child(_K_QB, u, int(n)),
                                              cfg.qb_max_rank)
            out[i] = float(np.linalg.norm(e[i] @ w) ** 2)
        return out
    if cfg.system.ris_elements <= n_rows:
        gram = np.stack(hh) * (np.swapaxes(g_stack.conj(), -1, -2) @ g_stack)
        v = top_vectors_from_gram(gram)
    else:
        e = khatri_rao(h_stack, g_stack)
        gram = None
        v = top_right_vectors(e)
    if kind == "quantized":
        step = TWO_PI / 2 ** bits
        w = np.exp(1j * step * np.round(np.mod(np.angle(v), TWO_PI) / step))
    else:
        w = np.exp(1j * np.angle(v))
    return objective_from_gram(gram, w) if gram is not None else objective_batch(e, w)


def _random_reflection(cfg: ExperimentConfig, hs, gs, r_sr, r_rd, stream: RngStream) -> float:
    """Received power (W) when every listed RIS reflects with random grid phases."""
    sys = cfg.system
    gen = stream.generator()
    levels = 2 ** RANDOM_PHASE_BITS
    e = khatri_rao(np.stack(hs), np.stack(gs))
    w = np.exp(1j * TWO_PI / levels * gen.integers(0, levels, (len(hs), sys.ris_elements)))
    prod = np.maximum(r_sr, sys.reference_distance_m) * np.maximum(r_rd, sys.reference_distance_m)
    amp = prod ** (-sys.path_loss_exponent / 2)
    ref = int(np.argmax(amp))
    y = np.einsum("c,cml,cl->m", amp / amp[ref], e, w)
    size = sys.n_bs_antennas * sys.n_ue_antennas
    return float(np.sum(np.abs(y) ** 2)) / size * float(reflective_scale(sys, r_sr[ref], r_rd[ref]))


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialResult:
    """Simulate one deployment and return the per-user SINR breakdowns."""
    try:
        return _run_trial(config, trial_index)
    except NumericFailureError as exc:
        raise NumericFailureError(f"trial {trial_index}: {exc}", exc.best_estimate) from exc


def _run_trial(config: ExperimentConfig, trial_index: int) -> TrialResult:
    sys = config.system
    root = RngStream(config.base_seed, trial_index)
    dep = sample_deployment(config, trial_index)
    chans = _TrialChannels(config, root)
    xi = dep.bs_user_distance()
    s = dep.bs_ris_distance()
    d_ur = dep.user_ris_distance() if dep.n_ris else np.zeros((dep.n_users, 0))
    gen_los = root.child(_K_LOS, 1).generator()
    p_direct = los_probability(xi, sys.h_ut_m)
    direct_los = gen_los.random(dep.n_users) < p_direct
    noise = sys.noise_power_w
    size = sys.n_bs_antennas * sys.n_ue_antennas
    kind, _ = parse_scheme(config.scheme)
    targets = [0] if config.user_distance is not None else range(dep.n_users)

    breakdowns = []
    metric = np.zeros(len(targets))
    for t, u in enumerate(targets):
        hd = chans.direct(u, bool(direct_los[u]))
        if config.interference:
            i_base = draw_interference(sys, dep, root.child(_K_INTERF, u), target=u).total
        else:
            i_base = 0.0
        gamma_d = float(np.linalg.norm(hd) ** 2) / size * float(direct_scale(sys, xi[u])) / (noise + i_base)

        cand = np.flatnonzero(dep.los_marks[u]) if dep.n_ris else np.zeros(0, int)
        prod = s[cand] * d_ur[u, cand]
        order = np.lexsort((cand, prod))
        cand = cand[order]
        if kind not in ("era", "random") and config.candidate_limit is not None:
            cand = cand[: config.candidate_limit]

        gamma_i = 0.0
        selected: list = []
        alive_sel = 0.0
        skip = config.sinr_metric == "association" and direct_los[u] and not config.full_breakdown
        if skip:
            gamma_i = float("nan")
        elif len(cand):
            alive = _alive_interference(config, dep, u, cand, root) if config.interference else np.zeros(len(cand))
            hs = [chans.bs_ris(int(n)) for n in cand]
            gs = [chans.ris_user(u, int(n)) for n in cand]
            if kind == "random":
                gamma_i = _random_reflection(config, hs, gs, s[cand], d_ur[u, cand], root.child(_K_RANDOM, u))
                gamma_i /= noise + i_base + float(np.sum(alive))
                selected = [int(n) for n in cand]
                alive_sel = float(np.sum(alive))
            elif kind == "era" or config.k_ris > 1:
                real = ChannelRealization(hs, gs, hd)
                geom = LinkGeometry(xi[u], s[cand], d_ur[u, cand], i_base, alive)
                k = len(cand) if kind == "era" else min(config.k_ris, len(cand))
                sub_scheme = "optimal" if kind == "era" else config.scheme
                idx, bd = select_ris_subset(list(range(len(cand))), k, real, sys, geom, config.subset_mode,
                                            sub_scheme, root.child(_K_QB, u))
                gamma_i = bd.reflective
                selected = [int(cand[i]) for i in idx]
                alive_sel = float(np.sum(alive[idx]))
            else:
                hh = [chans.bs_ris_gram(int(n)) for n in cand]
                obj = _reflected_objectives(config, hs, gs, hh, u, cand, root)
                sig = obj / size * reflective_scale(sys, s[cand], d_ur[u, cand])
                g_all = sig / (noise + i_base + alive)
                # argmax with ties to the smaller distance product (cand is already in that order)
                best = int(np.argmax(g_all))
                gamma_i = float(g_all[best])
                selected = [int(cand[best])]
                alive_sel = float(alive[best])

        bd = SinrBreakdown(gamma_d, gamma_i, selected, noise, i_base + alive_sel)
        if direct_los[u]:
            bd.realized = gamma_d
        else:
            bd.realized = gamma_i if selected else 0.0
        if config.sinr_metric == "weighted":
            p_rs = reflect_probability_table(config.ris_density, sys.cell_radius_m, sys.h_ut_m)(xi[u])
            bd.weighted = weighted_sinr(gamma_d, gamma_i, float(p_direct[u]), float(p_rs))
        breakdowns.append(bd)
        metric[t] = {"association": bd.realized, "weighted": bd.weighted, "total": bd.total}[config.sinr_metric]
    return TrialResult(breakdowns, metric, direct_los[list(targets)], dep.n_ris)


@lru_cache(maxsize=64)
def reflect_probability_table(density: float, radius: float, h_ut: float):
    """Interpolant of the probability of at least one LoS RIS versus user distance."""
    from .analytics import AnalyticsParams, prob_reflective

    params = AnalyticsParams(ris_density=density, cell_radius=radius, h_ut=h_ut)
    grid = np.linspace(0.0, radius, 101)
    vals = np.array([prob_reflective(x, params) for x in grid])
    return lambda x: np.interp(x, grid, vals)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _run_chunk(config: ExperimentConfig, start: int, stop: int) -> np.ndarray:
    return np.stack([run_trial(config, i).metric for i in range(start, stop)])


def collect_metric(config: ExperimentConfig, threads: int = 1) -> np.ndarray:
    """Per-trial, per-user SINR metric with shape ``(n_trials, n_reported_users)``.

    Trials are split into contiguous chunks across ``threads`` worker
    processes and reassembled in trial order.
    """
    n = config.n_trials
    if threads <= 1 or n < 2:
        return _run_chunk(config, 0, n)
    threads = min(threads, n, os.cpu_count() or 1) if threads > 0 else 1
    if threads <= 1:
        return _run_chunk(config, 0, n)
    edges = np.linspace(0, n, threads * 4 + 1).astype(int)
    spans = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, [config] * len(spans), [a for a, _ in spans], [b for _, b in spans]))
    return np.concatenate(parts, axis=0)


def coverage_from_samples(samples: np.ndarray, thresholds_db: Sequence[float]) -> CoverageCurve:
    """Coverage ``P(sinr > T)`` with a 95% normal-approximation half-width.

    The half-width treats trials as independent clusters of users, so
    correlation between users of the same deployment is accounted for.
    """
    samples = np.atleast_2d(samples)
    n_trials = samples.shape[0]
    cov, ci = [], []
    for t_db in thresholds_db:
        hit = samples > 10.0 ** (t_db / 10.0)
        per_trial = hit.mean(axis=1)
        p = float(hit.mean())
        sd = float(np.std(per_trial, ddof=1)) if n_trials > 1 else 0.0
        cov.append(p)
        ci.append(1.959963984540054 * sd / math.sqrt(n_trials))
    return CoverageCurve(list(map(float, thresholds_db)), cov, ci, int(samples.size))


def coverage_curve(config: ExperimentConfig, threads: int = 1) -> CoverageCurve:
    return coverage_from_samples(collect_metric(config, threads), config.thresholds_db)


def rate_from_samples(samples: np.ndarray, bandwidth_hz: float, cap_db: float) -> RateSummary:
    cap = 10.0 ** (cap_db / 10.0)
    rates = bandwidth_hz * np.log2(1.0 + np.minimum(np.atleast_2d(samples), cap))
    per_user = rates.mean(axis=0)
    return RateSummary(per_user, float(np.sum(per_user)), cap_db, rates.mean(axis=1))


def rate_summary(config: ExperimentConfig, threads: int = 1) -> RateSummary:
    """Monte Carlo mean of ``BW log2(1 + min(sinr, T))`` per user index and their sum."""
    return rate_from_samples(collect_metric(config, threads), config.system.bandwidth_hz, config.rate_cap_db)


@dataclass
class SchemeResult:
    scheme: str
    coverage: CoverageCurve
    rate: RateSummary
    samples: np.ndarray


def compare_schemes(config: ExperimentConfig, schemes: Sequence[str], threads: int = 1) -> dict:
    """Run the same trials under each scheme (common random numbers)."""
    if len(schemes) < 2:
        raise InvalidInputError("compare_schemes needs at least two schemes")
    out = {}
    for sch in schemes:
        cfg = config.with_updates(scheme=sch)
        samples = collect_metric(cfg, threads)
        out[sch] = SchemeResult(sch, coverage_from_samples(samples, cfg.thresholds_db),
                                rate_from_samples(samples, cfg.system.bandwidth_hz, cfg.rate_cap_db), samples)
    return out


def paired_one_sided_p(a: np.ndarray, b: np.ndarray) -> float:
    """p-value of a paired t-test for ``mean(a - b) > 0``."""
    from scipy import stats

    diff = np.asarray(a, float) - np.asarray(b, float)
    if np.all(diff == 0):
        return 1.0
    res = stats.ttest_1samp(diff, 0.0, alternative="greater")
    return float(res.pvalue)


def paired_wilcoxon_p(a: np.ndarray, b: np.ndarray) -> float:
    """p-value of a one-sided Wilcoxon signed-rank test for ``a - b`` shifted above 0."""
    from scipy import stats

    diff = np.asarray(a, float) - np.asarray(b, float)
    if np.all(diff == 0):
        return 1.0
    return float(stats.wilcoxon(diff, alternative="greater").pvalue)
