"""Closed-form and quadrature coverage analysis for a single cell with a RIS point process.

Conventions match the simulator: fading powers have unit mean, the aligned
sectored gain and the antenna gains multiply every received power, and
thresholds are linear. Interference is neglected (noise-limited analysis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np

from .channel import SystemConfig
from .geometry import los_probability
from .linkselect import direct_scale
from .numerics import (InvalidInputError, NumericFailureError, gauss_legendre, integrate, log_gamma,
                       lower_incomplete_gamma_regularized)

# distance below which the LoS model returns 1; used as a quadrature breakpoint
_LOS_KINK = 18.0


@dataclass(frozen=True)
class AnalyticsParams:
    """Inputs of the analytical model.

    ``user_density`` is a constant (per m^2) or a callable of the BS distance.
    ``c_los`` / ``c_nlos`` and ``alpha_los`` / ``alpha_nlos`` are the
    path-loss intercepts and exponents of the LoS / NLoS association rule;
    only the intercept ratio matters and ``None`` means equal intercepts.
    ``los_prob`` replaces the default LoS probability (distance -> prob).
    """

    ris_density: float = 6e-4
    user_density: Union[float, Callable] = 1e-3
    cell_radius: float = 100.0
    h_ut: float = 1.5
    c_los: Optional[float] = None
    c_nlos: Optional[float] = None
    alpha_los: float = 2.0
    alpha_nlos: float = 4.0
    tol: float = 1e-8
    los_prob: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.ris_density < 0:
            raise InvalidInputError("ris_density must be >= 0")
        if not callable(self.user_density) and self.user_density < 0:
            raise InvalidInputError("user_density must be >= 0")
        if self.alpha_los < 2 or self.alpha_nlos < 2:
            raise InvalidInputError("path-loss exponents must be >= 2")
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")
        if not self.cell_radius > 0:
            raise InvalidInputError("cell_radius must be > 0")

    def p_los(self, d):
        if self.los_prob is None:
            return los_probability(d, self.h_ut)
        d = np.asarray(d, float)
        return np.broadcast_to(np.asarray(self.los_prob(d), float), d.shape) * 1.0

    def intercept_ratio(self) -> float:
        if self.c_los is None or self.c_nlos is None:
            return 1.0
        return self.c_nlos / self.c_los

    def psi_los(self, x):
        """NLoS distance giving the same path loss as a LoS link at ``x``."""
        return self.intercept_ratio() ** (1.0 / self.alpha_nlos) * np.asarray(x, float) ** (self.alpha_los / self.alpha_nlos)


# ---------------------------------------------------------------------------
# Radial LoS mass Phi(rho) = int_0^rho Pr_LoS(r) r dr
# ---------------------------------------------------------------------------


class _RadialMass:
    """Tabulated ``Phi(rho)`` with panel-wise Gauss-Legendre refinement."""

    _NODES = 10

    def __init__(self, p_los: Callable, r_max: float, panel: float = 1.0):
        edges = np.arange(0.0, r_max + panel, panel)
        if _LOS_KINK < r_max and not np.any(np.isclose(edges, _LOS_KINK)):
            edges = np.sort(np.append(edges, _LOS_KINK))
        self.edges = edges
        self.p_los = p_los
        x, w = np.polynomial.legendre.leggauss(self._NODES)
        self._x, self._w = x, w
        a, b = edges[:-1, None], edges[1:, None]
        pts = 0.5 * (b - a) * x + 0.5 * (a + b)
        vals = p_los(pts) * pts
        panel_int = 0.5 * (b[:, 0] - a[:, 0]) * (vals @ w)
        self.cum = np.concatenate([[0.0], np.cumsum(panel_int)])

    def __call__(self, rho):
        rho = np.asarray(rho, float)
        if np.any(rho > self.edges[-1] * (1 + 1e-12)):
            raise InvalidInputError("radius beyond the tabulated range")
        idx = np.clip(np.searchsorted(self.edges, rho, side="right") - 1, 0, len(self.edges) - 2)
        a = self.edges[idx]
        half = 0.5 * (rho - a)
        pts = half[..., None] * (self._x + 1.0) + a[..., None]
        extra = half * np.sum(self.p_los(pts) * pts * self._w, axis=-1)
        return self.cum[idx] + extra


def _radial_mass(params: AnalyticsParams) -> _RadialMass:
    if params.los_prob is None:
        return _cached_radial_mass(params.h_ut, params.cell_radius)
    return _RadialMass(params.p_los, 2.0 * params.cell_radius)


@lru_cache(maxsize=32)
def _cached_radial_mass(h_ut: float, radius: float) -> _RadialMass:
    return _RadialMass(lambda d: los_probability(d, h_ut), 2.0 * radius)


def los_mass(rho, params: AnalyticsParams):
    """``int_0^rho Pr_LoS(r) r dr`` (m^2)."""
    return _radial_mass(params)(rho)


def nlos_mass(rho, params: AnalyticsParams):
    """``int_0^rho (1 - Pr_LoS(r)) r dr`` (m^2)."""
    rho = np.asarray(rho, float)
    return 0.5 * rho ** 2 - los_mass(rho, params)


# ---------------------------------------------------------------------------
# Nearest LoS RIS, association, serving distance
# ---------------------------------------------------------------------------


def _nearest_los_unnormalized(x, params: AnalyticsParams):
    x = np.asarray(x, float)
    lam = params.ris_density
    inside = (x > 0) & (x <= params.cell_radius)
    xc = np.clip(x, 0.0, params.cell_radius)
    val = 2 * np.pi * lam * xc * params.p_los(xc) * np.exp(-2 * np.pi * lam * los_mass(xc, params))
    return np.where(inside, val, 0.0)


def nearest_los_normalizer(params: AnalyticsParams) -> float:
    """Probability that a LoS RIS lies within the user-centred disk of radius R.

    This is the normalizing constant of the nearest-LoS-RIS density and
    equals ``1 - exp(-2 pi lambda_R Phi(R))``.
    """
    return float(-np.expm1(-2 * np.pi * params.ris_density * los_mass(params.cell_radius, params)))


def nearest_los_pdf(x, params: AnalyticsParams):
    """Density of the distance to the nearest LoS RIS within the user-centred disk of radius R."""
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise InvalidInputError("x must be >= 0")
    b = nearest_los_normalizer(params)
    if b <= 0:
        raise NumericFailureError("no LoS RIS mass: nearest-LoS density undefined")
    out = _nearest_los_unnormalized(x, params) / b
    return float(out) if out.ndim == 0 else out


def _breaks(params: AnalyticsParams, hi: float):
    return tuple(b for b in (_LOS_KINK,) if 0 < b < hi)


def _nlos_void(x, params: AnalyticsParams):
    """Probability of no NLoS RIS closer (in path loss) than a LoS link at ``x``."""
    psi = np.minimum(params.psi_los(x), 2.0 * params.cell_radius)
    return np.exp(-2 * np.pi * params.ris_density * nlos_mass(psi, params))


def los_assoc_prob(params: AnalyticsParams) -> float:
    """Probability that the user associates with a LoS RIS."""
    b = nearest_los_normalizer(params)
    if b <= 0:
        return 0.0
    r = params.cell_radius
    val = integrate(lambda x: _nlos_void(x, params) * _nearest_los_unnormalized(x, params),
                    0.0, r, tol=params.tol, breakpoints=_breaks(params, r))
    return float(min(max(val, 0.0), 1.0))


def serving_dist_pdf(x, params: AnalyticsParams):
    """Density of the serving (LoS) RIS distance given LoS association."""
    a = los_assoc_prob(params)
    if a <= 0:
        raise NumericFailureError("LoS association probability is zero")
    x = np.asarray(x, float)
    out = _nearest_los_unnormalized(x, params) * _nlos_void(x, params) / a
    return float(out) if out.ndim == 0 else out


def expected_serving_distance(params: AnalyticsParams) -> float:
    a = los_assoc_prob(params)
    if a <= 0:
        raise NumericFailureError("LoS association probability is zero")
    r = params.cell_radius
    return integrate(lambda x: x * _nearest_los_unnormalized(x, params) * _nlos_void(x, params) / a,
                     0.0, r, tol=params.tol, breakpoints=_breaks(params, r))


# ---------------------------------------------------------------------------
# At least one LoS RIS, association probabilities
# ---------------------------------------------------------------------------


def _boundary_radius(xi: float, psi, radius: float):
    """Distance from a point at ``xi`` from the centre to the circle edge along direction ``psi``."""
    s = np.sin(psi)
    # clamp rounding below zero when the point sits on the circle
    return np.maximum(np.sqrt(np.maximum(radius ** 2 - (xi * s) ** 2, 0.0)) - xi * np.cos(psi), 0.0)


def mean_los_ris_count(xi: float, params: AnalyticsParams) -> float:
    """Expected number of RISs in the cell that are LoS to a user at distance ``xi``."""
    r = params.cell_radius
    if not 0 <= xi <= r * (1 + 1e-12):
        raise InvalidInputError("xi must lie in [0, R]")
    if params.ris_density == 0:
        return 0.0
    xi = min(xi, r)
    if xi == 0:
        return float(2 * np.pi * params.ris_density * los_mass(r, params))
    # integrand is even in psi; the boundary radius varies fastest near psi = pi
    f = lambda p: los_mass(_boundary_radius(xi, p, r), params)
    return float(2 * params.ris_density * integrate(f, 0.0, np.pi, tol=params.tol))


def prob_reflective(xi: float, params: AnalyticsParams) -> float:
    """Probability that at least one RIS is in LoS of a user at distance ``xi``."""
    return float(-np.expm1(-mean_los_ris_count(xi, params)))


def assoc_probs(xi: float, params: AnalyticsParams):
    """``(P_direct, P_reflect)``: direct LoS association, else reflected via a LoS RIS."""
    p_d = float(params.p_los(xi))
    return p_d, (1.0 - p_d) * prob_reflective(xi, params)


# ---------------------------------------------------------------------------
# Cascade amplitude law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CascadeGammaParams:
    """Moment-matched Gamma law of ``R = sum_l |h_l||g_l|`` over ``n_elements`` terms."""

    alpha_u: float
    beta_u: float
    n_elements: int
    mu1: float
    mu2: float
    eta_bar: float

    def __post_init__(self):
        if not (self.alpha_u > 0 and self.beta_u > 0):
            raise InvalidInputError("Gamma parameters must be positive")

    @property
    def shape(self) -> float:
        return self.n_elements * self.alpha_u

    @property
    def mean(self) -> float:
        return self.shape / self.beta_u

    def cdf(self, z):
        z = np.maximum(np.asarray(z, float), 0.0)
        return lower_incomplete_gamma_regularized(self.shape, self.beta_u * z)

    def pdf(self, z):
        z = np.asarray(z, float)
        k, b = self.shape, self.beta_u
        zz = np.where(z > 0, z, 1.0)
        logp = k * math.log(b) + (k - 1) * np.log(zz) - b * zz - float(log_gamma(k))
        return np.where(z > 0, np.exp(logp), 0.0)

    def pdf_squared(self, x):
        """Density of ``R^2`` (change of variable with its Jacobian)."""
        x = np.asarray(x, float)
        r = np.sqrt(np.maximum(x, 0.0))
        rr = np.where(r > 0, r, 1.0)
        return np.where(r > 0, self.pdf(rr) / (2.0 * rr), 0.0)


def cascade_moment(m: float, m_h: float, omega_h: float, m_g: float, omega_g: float, element_gain: float = 1.0):
    """``E[(|h||g|)^m]`` for independent Nakagami amplitudes scaled by ``element_gain``."""
    eta = math.sqrt((1.0 / element_gain ** 2) * (m_h / omega_h) * (m_g / omega_g))
    lg = (float(log_gamma(m_h + m / 2)) + float(log_gamma(m_g + m / 2))
          - float(log_gamma(m_h)) - float(log_gamma(m_g)))
    return eta ** (-m) * math.exp(lg), eta


def cascade_gamma_approx(m_h: float, omega_h: float, m_g: float, omega_g: float, element_gain: float,
                         n_elements: int) -> CascadeGammaParams:
    """Gamma law matching the first two moments of the co-phased cascade amplitude."""
    if min(m_h, omega_h, m_g, omega_g, element_gain) <= 0 or n_elements < 1:
        raise InvalidInputError("cascade parameters must be positive")
    mu1, eta = cascade_moment(1, m_h, omega_h, m_g, omega_g, element_gain)
    mu2, _ = cascade_moment(2, m_h, omega_h, m_g, omega_g, element_gain)
    var = mu2 - mu1 ** 2
    if not var > 1e-14 * mu2:
        raise NumericFailureError("degenerate cascade variance")
    return CascadeGammaParams(mu1 ** 2 / var, mu1 / var, int(n_elements), mu1, mu2, eta)


# ---------------------------------------------------------------------------
# Minimum path-length product
# ---------------------------------------------------------------------------


def _theta_max(s, xi: float, x: float):
    """Half-width of the angular sector where a RIS at BS distance ``s`` has ``s * d < x``."""
    s = np.asarray(s, float)
    if xi == 0:
        return np.where(s * s < x, np.pi, 0.0)
    ss = np.where(s > 0, s, 1.0)
    arg = (ss ** 4 + ss ** 2 * xi ** 2 - x ** 2) / (2 * ss ** 3 * xi)
    return np.where(s > 0, np.arccos(np.clip(arg, -1.0, 1.0)), np.pi)


def _sector_los(s, theta, xi: float, params: AnalyticsParams, nodes: int = 48):
    """``int_0^theta Pr_LoS(d(s, t)) dt`` for arrays ``s``, ``theta``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    s = np.asarray(s, float)[..., None]
    th = np.asarray(theta, float)[..., None]
    t = 0.5 * th * (x + 1.0)
    d = np.sqrt(np.maximum(s ** 2 + xi ** 2 - 2 * s * xi * np.cos(t), 0.0))
    return 0.5 * th[..., 0] * np.sum(params.p_los(d) * w, axis=-1)


def product_mean_measure(x: float, xi: float, params: AnalyticsParams, unit_density: bool = False) -> float:
    """Expected number of LoS RISs with ``s * d < x`` for a user at distance ``xi``.

    The sector ``|theta| < theta_max`` is symmetric about the user direction,
    which gives the factor 2.
    """
    if x <= 0:
        return 0.0
    r = params.cell_radius
    f = lambda s: s * _sector_los(s, _theta_max(s, xi, x), xi, params)
    val = 2.0 * integrate(f, 0.0, r, tol=params.tol)
    return val if unit_density else params.ris_density * val


def cond_cdf_eta(x: float, xi: float, floor: float, params: AnalyticsParams) -> float:
    """CDF of the minimum path-length product over LoS RISs (m^2) for a user at ``xi``.

    Not conditioned on the existence of a LoS RIS: the limit is
    ``prob_reflective(xi)``. ``floor`` is a product below which the CDF is 0.
    """
    if x < 0:
        raise InvalidInputError("x must be >= 0")
    if x <= floor:
        return 0.0
    return float(-np.expm1(-product_mean_measure(x, xi, params)))


class _ProductTable:
    """Unit-density mean measure of ``s * d < y`` on a log grid in ``y``.

    Built from a cumulative-in-angle table so one build serves every ``y``.
    """

    def __init__(self, xi: float, params: AnalyticsParams, n_s_panels: int = 96, n_theta: int = 1025,
                 n_y: int = 260):
        r = params.cell_radius
        xs, ws = _composite_gl(0.0, r, n_s_panels, 8, breaks=(xi,) if 0 < xi < r else ())
        th = np.linspace(0.0, np.pi, n_theta)
        d = np.sqrt(np.maximum(xs[:, None] ** 2 + xi ** 2 - 2 * xs[:, None] * xi * np.cos(th[None, :]), 0.0))
        p = params.p_los(d)
        h = th[1] - th[0]
        cum = np.concatenate([np.zeros((len(xs), 1)), np.cumsum(0.5 * h * (p[:, 1:] + p[:, :-1]), axis=1)], axis=1)
        y_max = r * (r + xi)
        self.log_y = np.linspace(math.log(1e-3), math.log(y_max), n_y)
        y = np.exp(self.log_y)
        vals = np.empty(n_y)
        for i, yy in enumerate(y):
            tm = _theta_max(xs, xi, yy)
            pos = tm / h
            j = np.minimum(pos.astype(int), n_theta - 2)
            frac = pos - j
            c = cum[np.arange(len(xs)), j] * (1 - frac) + cum[np.arange(len(xs)), j + 1] * frac
            vals[i] = 2.0 * np.sum(ws * xs * c)
        self.vals = np.maximum.accumulate(np.maximum(vals, 0.0))
        self.y_max = y_max

    def __call__(self, y):
        y = np.asarray(y, float)
        out = np.interp(np.log(np.clip(y, 1e-3, self.y_max)), self.log_y, self.vals)
        small = y < 1e-3
        if np.any(small):
            out = np.where(small, self.vals[0] * (np.maximum(y, 0.0) / 1e-3) ** 2, out)
        return out


def _composite_gl(lo: float, hi: float, panels: int, nodes: int, breaks=()):
    edges = np.unique(np.concatenate([np.linspace(lo, hi, panels + 1), np.asarray(breaks, float)]))
    x, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    return (0.5 * (b - a) * x + 0.5 * (a + b)).ravel(), (0.5 * (b - a) * w).ravel()


@lru_cache(maxsize=512)
def _cached_product_table(xi: float, radius: float, h_ut: float) -> _ProductTable:
    return _ProductTable(xi, AnalyticsParams(cell_radius=radius, h_ut=h_ut))


def _product_table(xi: float, params: AnalyticsParams) -> _ProductTable:
    if params.los_prob is None:
        return _cached_product_table(float(xi), params.cell_radius, params.h_ut)
    return _ProductTable(xi, params)


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


def nakagami_cdf(a, m: float, omega: float = 1.0):
    """CDF of a Nakagami-m amplitude."""
    a = np.maximum(np.asarray(a, float), 0.0)
    return lower_incomplete_gamma_regularized(m, m * a ** 2 / omega)


def cov_direct(xi: float, threshold: float, cfg: SystemConfig) -> float:
    """Noise-limited coverage of the direct LoS link at distance ``xi`` (linear threshold)."""
    if threshold < 0:
        raise InvalidInputError("threshold must be >= 0")
    amp = math.sqrt(cfg.noise_power_w * threshold / float(direct_scale(cfg, xi)))
    return float(1.0 - nakagami_cdf(amp, cfg.nakagami_m_los))


def _reflective_constant(cfg: SystemConfig) -> float:
    return cfg.aligned_gain * cfg.tx_power_w * cfg.zeta ** 2 * cfg.reflective_gain_product


def cascade_law(cfg: SystemConfig) -> CascadeGammaParams:
    m = cfg.nakagami_m_los
    return cascade_gamma_approx(m, 1.0, m, 1.0, 1.0, cfg.ris_elements)


def cov_reflective(xi: float, threshold: float, cfg: SystemConfig, params: AnalyticsParams,
                   conditional: bool = True) -> float:
    """Noise-limited coverage through the LoS RIS with the smallest path-length product.

    The SNR is ``K R^2 eta^-alpha / noise``, so coverage is
    ``E_R[F_eta((K R^2 / (noise T))^(1/alpha))]``. The expectation is taken
    in the amplitude variable ``R``, which is the squared-variable integral
    after substitution. With ``conditional`` the result is conditioned on
    the existence of a LoS RIS.
    """
    if threshold <= 0:
        raise InvalidInputError("threshold must be > 0")
    lam = params.ris_density
    if lam == 0:
        return 0.0
    p_exist = prob_reflective(xi, params)
    if p_exist <= 0:
        return 0.0
    table = _product_table(xi, params)
    law = cascade_law(cfg)
    k = _reflective_constant(cfg) / (cfg.noise_power_w * threshold)
    alpha = cfg.path_loss_exponent

    def f(r):
        y = (k * r * r) ** (1.0 / alpha)
        return -np.expm1(-lam * table(y)) * law.pdf(r)

    sd = math.sqrt(law.shape) / law.beta_u
    hi = law.mean + 40 * sd
    val = integrate(f, 0.0, hi, tol=max(params.tol, 1e-12), breakpoints=(law.mean,))
    val = min(max(val, 0.0), p_exist)
    return val / p_exist if conditional else val


def cond_coverage(xi: float, threshold: float, cfg: SystemConfig, params: AnalyticsParams) -> float:
    """``P_direct cov_direct + P_reflect cov_reflective`` for a user at distance ``xi``."""
    p_d, p_i = assoc_probs(xi, params)
    cov = p_d * cov_direct(xi, threshold, cfg) if p_d > 0 else 0.0
    if p_i > 0:
        cov += p_i * cov_reflective(xi, threshold, cfg, params)
    return float(min(max(cov, 0.0), 1.0))


def _user_density(params: AnalyticsParams):
    lu = params.user_density
    return lu if callable(lu) else (lambda x: np.full_like(np.asarray(x, float), float(lu)))


def _radial_quadrature(params: AnalyticsParams, nodes: int = 24):
    r = params.cell_radius
    pieces = [(0.0, min(_LOS_KINK, r))] + ([(_LOS_KINK, r)] if r > _LOS_KINK else [])
    xs, ws = [], []
    for a, b in pieces:
        x, w = gauss_legendre(nodes, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def ergodic_coverage(threshold: float, cfg: SystemConfig, params: AnalyticsParams, nodes: int = 24) -> float:
    """Cell-average coverage weighting the conditional coverage by the user intensity.

    Gauss-Legendre on ``[0, 18]`` and ``[18, R]``, the pieces where the LoS
    probability is smooth.
    """
    lam_u = _user_density(params)
    x, w = _radial_quadrature(params, nodes)
    weight = np.asarray(lam_u(x), float) * 2 * np.pi * x
    if np.any(weight < 0):
        raise InvalidInputError("invalid user density: negative values")
    mass = float(np.sum(w * weight))
    if not mass > 0:
        raise InvalidInputError("invalid user density: zero user mass in the cell")
    cov = np.array([cond_coverage(float(xi), threshold, cfg, params) for xi in x])
    return float(np.sum(w * weight * cov) / mass)


def campbell_average(threshold: float, cfg: SystemConfig, params: AnalyticsParams, rtol: float = 1e-4) -> float:
    """``(2 / R^2) int_0^R xi P(xi) dxi`` by adaptive quadrature (uniform users).

    ``rtol`` is relative to the disk area; each integrand call builds a
    product table, so the subdivision budget is kept small.
    """
    r = params.cell_radius
    f = lambda xs: np.array([xi * cond_coverage(float(xi), threshold, cfg, params) for xi in np.atleast_1d(xs)])
    return 2.0 / r ** 2 * integrate(f, 0.0, r, tol=rtol * 0.5 * r ** 2, max_intervals=40,
                                    breakpoints=_breaks(params, r))


def ergodic_rate(xi: float, cap: float, cfg: SystemConfig, params: AnalyticsParams, nodes: int = 48) -> float:
    """``BW E[log2(1 + min(sinr, cap))]`` from the coverage curve at distance ``xi`` (bit/s)."""
    if cap <= 0:
        raise InvalidInputError("cap must be > 0")
    bw = cfg.bandwidth_hz
    t_hi = bw * math.log2(1.0 + cap)
    t, w = gauss_legendre(nodes, 0.0, t_hi)
    cov = np.array([cond_coverage(xi, float(2.0 ** (tt / bw) - 1.0), cfg, params) for tt in t])
    return float(np.sum(w * cov))


def sum_rate(distances, cap: float, cfg: SystemConfig, params: AnalyticsParams) -> float:
    return float(sum(ergodic_rate(float(d), cap, cfg, params) for d in np.atleast_1d(distances)))
