"""Link budget, Nakagami channel draws, sectored gains and interference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .geometry import Deployment, los_probability
from .numerics import InvalidInputError, RngLike, as_generator

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, float) / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class AntennaPattern:
    """Two-level sectored pattern: main-lobe gain inside the beamwidth, side-lobe gain outside.

    Gains are linear, ``width`` is in radians.
    """

    main_gain: float
    side_gain: float
    width: float

    def __post_init__(self):
        if not (self.main_gain >= self.side_gain > 0):
            raise InvalidInputError("pattern needs main_gain >= side_gain > 0")
        if not (0 < self.width <= 2 * math.pi + 1e-12):
            raise InvalidInputError("beamwidth must be in (0, 2*pi]")

    @property
    def main_prob(self) -> float:
        """Probability that a uniformly random direction falls in the main lobe."""
        return min(self.width / (2 * math.pi), 1.0)

    @classmethod
    def from_db(cls, main_db: float, side_db: float, width_deg: float) -> "AntennaPattern":
        return cls(float(db_to_linear(main_db)), float(db_to_linear(side_db)), math.radians(width_deg))

    @classmethod
    def for_array(cls, n: int) -> "AntennaPattern":
        """Sectored approximation of an ``n``-element uniform array.

        Main lobe ``n`` with width ``2*pi/sqrt(n)``; side lobe
        ``1/sin^2(3*pi/(2*sqrt(n)))``, capped at the main-lobe gain.
        """
        if n < 1:
            raise InvalidInputError("array size must be >= 1")
        root = math.sqrt(n)
        side = 1.0 / math.sin(3 * math.pi / (2 * root)) ** 2
        return cls(float(n), min(side, float(n)), min(2 * math.pi / root, 2 * math.pi))


@dataclass(frozen=True)
class SystemConfig:
    """Physical constants of the cell, in the units named by each field.

    dB-valued inputs are converted once through the linear properties below;
    everything downstream works in linear units (W, linear gains, meters).
    ``bs_pattern_db`` / ``ue_pattern_db`` are ``(main_db, side_db, width_deg)``
    overrides; when absent the patterns follow from the array sizes.
    """

    carrier_ghz: float = 28.0
    bandwidth_mhz: float = 200.0
    tx_power_dbm: float = 8.0
    noise_figure_db: float = 10.0
    n_bs_antennas: int = 64
    n_ue_antennas: int = 4
    cell_radius_m: float = 100.0
    path_loss_exponent: float = 2.0
    gain_source_dbi: float = 10.0
    gain_ris_dbi: float = 10.0
    gain_dest_dbi: float = 5.0
    nakagami_m_los: float = 2.5
    nakagami_m_nlos: float = 1.5
    ris_elements: int = 64
    n_users: int = 10
    h_ut_m: float = 1.5
    reference_distance_m: float = 1.0
    bs_pattern_db: Optional[tuple] = None
    ue_pattern_db: Optional[tuple] = None
    interferer_power_dbm: Optional[float] = None

    def __post_init__(self):
        if self.path_loss_exponent < 2:
            raise InvalidInputError("path_loss_exponent must be >= 2")
        for name in ("n_bs_antennas", "n_ue_antennas", "ris_elements", "n_users"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        for name in ("carrier_ghz", "bandwidth_mhz", "cell_radius_m", "reference_distance_m",
                     "nakagami_m_los", "nakagami_m_nlos"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be > 0")
        for name in ("tx_power_dbm", "noise_figure_db", "gain_source_dbi", "gain_ris_dbi", "gain_dest_dbi"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")
        if self.h_ut_m > 23.0:
            raise InvalidInputError("h_ut_m must be <= 23 m")
        for name in ("bs_pattern_db", "ue_pattern_db"):
            val = getattr(self, name)
            if val is not None:
                if len(val) != 3:
                    raise InvalidInputError(f"{name} needs (main_db, side_db, width_deg)")
                object.__setattr__(self, name, tuple(float(v) for v in val))

    def with_updates(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]

    @cached_property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)

    @cached_property
    def zeta(self) -> float:
        """Free-space path loss at 1 m, ``(wavelength / 4 pi)^2``."""
        return (self.wavelength_m / (4 * math.pi)) ** 2

    @cached_property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6

    @cached_property
    def tx_power_w(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @cached_property
    def interferer_power_w(self) -> float:
        dbm = self.tx_power_dbm if self.interferer_power_dbm is None else self.interferer_power_dbm
        return dbm_to_watt(dbm)

    @cached_property
    def noise_power_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10 * math.log10(self.bandwidth_hz) + self.noise_figure_db

    @cached_property
    def noise_power_w(self) -> float:
        return dbm_to_watt(self.noise_power_dbm)

    @cached_property
    def gain_source(self) -> float:
        return float(db_to_linear(self.gain_source_dbi))

    @cached_property
    def gain_ris(self) -> float:
        return float(db_to_linear(self.gain_ris_dbi))

    @cached_property
    def gain_dest(self) -> float:
        return float(db_to_linear(self.gain_dest_dbi))

    @cached_property
    def bs_pattern(self) -> AntennaPattern:
        if self.bs_pattern_db is not None:
            return AntennaPattern.from_db(*self.bs_pattern_db)
        return AntennaPattern.for_array(self.n_bs_antennas)

    @cached_property
    def ue_pattern(self) -> AntennaPattern:
        if self.ue_pattern_db is not None:
            return AntennaPattern.from_db(*self.ue_pattern_db)
        return AntennaPattern.for_array(self.n_ue_antennas)

    @cached_property
    def aligned_gain(self) -> float:
        """``M_t * M_r`` for a serving beam pair."""
        return self.bs_pattern.main_gain * self.ue_pattern.main_gain

    @cached_property
    def direct_gain_product(self) -> float:
        return self.gain_source * self.gain_dest

    @cached_property
    def reflective_gain_product(self) -> float:
        return self.gain_source * self.gain_ris ** 2 * self.gain_dest

    def __getstate__(self):
        # cached properties are recomputed after unpickling
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)


@dataclass(frozen=True)
class FadingLink:
    """Nakagami link: shape ``m``, mean power ``omega``, length ``distance`` (m)."""

    m: float
    omega: float
    distance: float = float("nan")

    def __post_init__(self):
        if not (self.m > 0 and self.omega > 0):
            raise InvalidInputError("FadingLink needs m > 0 and omega > 0")


def pathloss_omega(distance, cfg: SystemConfig, link_gains_dbi: Sequence[float] = (0.0, 0.0),
                   return_clamped: bool = False):
    """Mean received power gain ``zeta * d^-alpha * G_1 * G_2 ...``.

    Distances below the reference distance are clamped to it; with
    ``return_clamped`` the clamp mask is returned alongside.
    """
    d = np.asarray(distance, dtype=float)
    clamped = d < cfg.reference_distance_m
    d_eff = np.maximum(d, cfg.reference_distance_m)
    gain = float(np.prod(db_to_linear(np.asarray(link_gains_dbi, float)))) if len(link_gains_dbi) else 1.0
    omega = cfg.zeta * d_eff ** (-cfg.path_loss_exponent) * gain
    omega = float(omega) if omega.ndim == 0 else omega
    if return_clamped:
        return omega, (bool(clamped) if clamped.ndim == 0 else clamped)
    return omega


def sectored_gain(tx: AntennaPattern, rx: AntennaPattern, aligned: bool, rng: RngLike = None, size=None):
    """Beam-pair gain. Aligned pairs get ``M_t M_r``; otherwise each side
    independently lands in its main lobe with probability ``width / 2 pi``."""
    if aligned:
        g = tx.main_gain * rx.main_gain
        return g if size is None else np.full(size, g)
    gen = as_generator(rng)
    u = gen.random((2,) if size is None else (2,) + tuple(np.atleast_1d(size)))
    gt = np.where(u[0] < tx.main_prob, tx.main_gain, tx.side_gain)
    gr = np.where(u[1] < rx.main_prob, rx.main_gain, rx.side_gain)
    out = gt * gr
    return float(out) if size is None else out


def mean_sectored_gain(tx: AntennaPattern, rx: AntennaPattern) -> float:
    """Exact expectation of the misaligned gain over its four outcomes."""
    pt, pr = tx.main_prob, rx.main_prob
    return ((pt * tx.main_gain + (1 - pt) * tx.side_gain)
            * (pr * rx.main_gain + (1 - pr) * rx.side_gain))


def sample_channel_matrix(rows: int, cols: int, link: FadingLink, rng: RngLike, batch=()) -> np.ndarray:
    """I.i.d. entries ``a * exp(j phi)``, ``a`` Nakagami(m, omega), ``phi`` uniform.

    ``batch`` prepends leading dimensions.
    """
    gen = as_generator(rng)
    shape = tuple(np.atleast_1d(batch).astype(int)) + (rows, cols) if batch != () else (rows, cols)
    amp = np.sqrt(gen.gamma(link.m, link.omega / link.m, shape))
    phase = gen.random(shape) * (2 * np.pi)
    return amp * np.exp(1j * phase)


def cascade_power_random(m_first: float, m_second: float, n_elements: int, gen: np.random.Generator,
                         size) -> np.ndarray:
    """``|sum_l h_l g_l e^{j theta_l}|^2`` for unit-power Nakagami hops and uniform phases."""
    shape = tuple(np.atleast_1d(size).astype(int)) + (n_elements,)
    amp = np.sqrt(gen.gamma(m_first, 1.0 / m_first, shape) * gen.gamma(m_second, 1.0 / m_second, shape))
    phase = gen.random(shape) * (2 * np.pi)
    return np.abs(np.sum(amp * np.exp(1j * phase), axis=-1)) ** 2


@dataclass
class ChannelRealization:
    """Small-scale channels for one user.

    ``h_list[n]`` is ``(N_b, L)`` from the BS to RIS ``n``; ``g_list[n]`` is
    ``(N_u, L)`` from RIS ``n`` to the user; ``h_d`` is ``(N_u, N_b)``. Entries
    have unit mean power; large-scale gains live in the SINR formulas.
    """

    h_list: list
    g_list: list
    h_d: np.ndarray
    interference_power: float = 0.0
    ris_indices: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.h_list) != len(self.g_list):
            raise InvalidInputError("h_list and g_list must pair up")
        n_u, n_b = np.shape(self.h_d)
        for h, g in zip(self.h_list, self.g_list):
            if h.shape[0] != n_b or g.shape[0] != n_u or h.shape[1] != g.shape[1]:
                raise InvalidInputError("channel dimensions are inconsistent")
        if not self.ris_indices:
            self.ris_indices = list(range(len(self.h_list)))


@dataclass
class InterferenceDraw:
    """Per-interferer received powers (W) for one target user.

    ``reflected`` flags interferers that reached the target through an idle RIS.
    """

    powers: np.ndarray
    reflected: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.powers))


def draw_interference(cfg: SystemConfig, deployment: Deployment, rng: RngLike, target: int = 0,
                      idle_ris: Optional[np.ndarray] = None, los_prob=None) -> InterferenceDraw:
    """Interference at user ``target`` from every other user.

    Each interferer ``k`` at distance ``xi_k`` from the target reaches it over
    the direct law with probability ``Pr_LoS(xi_k)``. Otherwise its signal is
    reflected by an idle RIS, drawn uniformly from ``idle_ris`` (by default
    the RISs not in LoS of the target), with random phases. With no idle RIS
    available the interferer falls back to an NLoS direct path. The beam-pair
    gain is a misaligned sectored draw.
    """
    gen = as_generator(rng)
    n_users = deployment.n_users
    others = np.array([k for k in range(n_users) if k != target], dtype=int)
    if len(others) == 0:
        return InterferenceDraw(np.zeros(0), np.zeros(0, bool))
    pts = deployment.user_points
    xi = np.hypot(*(pts[others] - pts[target]).T)
    pfun = (lambda d: los_probability(d, cfg.h_ut_m)) if los_prob is None else los_prob
    p_los = np.broadcast_to(np.asarray(pfun(xi), float), xi.shape)
    if idle_ris is None:
        if deployment.los_marks.shape[0] > target and deployment.n_ris:
            idle_ris = np.flatnonzero(~deployment.los_marks[target])
        else:
            idle_ris = np.arange(deployment.n_ris)
    idle_ris = np.asarray(idle_ris, dtype=int)

    k = len(others)
    u_branch = gen.random(k)
    u_pick = gen.random(k)
    rho = sectored_gain(cfg.bs_pattern, cfg.ue_pattern, False, gen, size=k)
    fade_los = gen.gamma(cfg.nakagami_m_los, 1.0 / cfg.nakagami_m_los, k)
    fade_nlos = gen.gamma(cfg.nakagami_m_nlos, 1.0 / cfg.nakagami_m_nlos, k)
    casc = cascade_power_random(cfg.nakagami_m_nlos, cfg.nakagami_m_nlos, cfg.ris_elements, gen, k)

    direct = u_branch < p_los
    power_w = cfg.interferer_power_w
    omega_d = pathloss_omega(xi, cfg) * cfg.direct_gain_product
    powers = np.where(direct, fade_los, fade_nlos) * omega_d
    reflected = np.zeros(k, bool)
    if len(idle_ris):
        pick = idle_ris[np.minimum((u_pick * len(idle_ris)).astype(int), len(idle_ris) - 1)]
        ris = deployment.ris_points[pick]
        d1 = np.hypot(*(ris - pts[others]).T)
        d2 = np.hypot(*(ris - pts[target]).T)
        refl_gain = (cfg.zeta ** 2 * cfg.reflective_gain_product
                     * (np.maximum(d1, cfg.reference_distance_m) * np.maximum(d2, cfg.reference_distance_m))
                     ** (-cfg.path_loss_exponent))
        reflected = ~direct
        powers = np.where(reflected, casc * refl_gain, powers)
    return InterferenceDraw(powers=powers * rho * power_w, reflected=reflected)


def sample_interference(cfg: SystemConfig, deployment: Deployment, rng: RngLike, target: int = 0,
                        idle_ris: Optional[np.ndarray] = None, los_prob=None) -> float:
    """Total interference power (W) at user ``target``; see :func:`draw_interference`."""
    return draw_interference(cfg, deployment, rng, target, idle_ris, los_prob).total
