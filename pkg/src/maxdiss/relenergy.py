"""Relative energy, relative dissipation, regularity weights and residuals.

The quantities here make up both sides of the Gronwall-weighted relative
energy inequality: R measures the squared L2 distance to a test
trajectory, W the viscous dissipation of the difference, K the Serrin-type
(or, for Euler, negative-strain) regularity weight entering the Gronwall
factor, and A the PDE residual of the test trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from .fields import (
    Grid,
    SpectralField,
    gradient_tensor,
    inner,
    l2_norm,
    laplacian,
    leray_project,
    lp_norm,
    pad_to,
    random_field,
)
from .solver import SystemSpec, TestTrajectory, convection

#: Gagliardo-Nirenberg constant for ||w||_L4 <= C ||w||_L2^{1/2} ||grad w||_L2^{1/2}
#: on mean-free torus fields.  Frozen from calibrate_gn_constant(trials=20000,
#: n=64, seed=0), i.e. the empirical maximum of the ratio over random
#: band-limited fields times a 1.1 safety factor.
DEFAULT_GN_CONSTANT = 0.5444330952113287


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightSpec:
    """Configuration of the regularity weight K."""

    kind: str = "serrin"  # "serrin" | "euler_negsym"
    p: float = 4.0
    constant_c: object = "auto"
    d: int = 2
    gn_constant: float = DEFAULT_GN_CONSTANT
    kappa: float = 2.0  # prefactor of the Euler negative-strain weight

    def __post_init__(self):
        if self.kind not in ("serrin", "euler_negsym"):
            raise WeightError(f"unknown weight kind {self.kind!r}")
        if self.kind == "serrin":
            if self.p <= 2:
                raise WeightError(f"Serrin weight needs p > 2, got p={self.p}")
            if self.d > 2 * self.p / (self.p - 2):
                raise WeightError(f"dimension d={self.d} violates d <= 2p/(p-2)")

    @property
    def alpha(self) -> float:
        return self.d * (self.p - 2) / (2 * self.p)

    @property
    def lp_exponent(self) -> float:
        # r = 2p/(p-2); together with s = 2/(1-alpha) this attains 2/s + d/r <= 1
        return 2 * self.p / (self.p - 2)

    @property
    def time_exponent(self) -> float:
        return 2.0 / (1.0 - self.alpha)

    def constant(self, nu: float) -> float:
        """The Young-closure constant c in K = c ||v||_r^{2/(1-a)}."""
        if self.constant_c != "auto":
            return float(self.constant_c)
        if nu <= 0:
            raise WeightError("Serrin weight with auto constant requires nu > 0")
        a = self.alpha
        return (0.5 * (1 - a)) * self.gn_constant ** (2 / (1 - a)) \
            * ((1 + a) / nu) ** ((1 + a) / (1 - a))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": self.p, "c": self.constant_c,
                "gn_constant": self.gn_constant, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSpec":
        return cls(kind=d.get("kind", "serrin"), p=d.get("p", 4.0),
                   constant_c=d.get("c", "auto"),
                   gn_constant=d.get("gn_constant", DEFAULT_GN_CONSTANT),
                   kappa=d.get("kappa", 2.0))


@dataclass(frozen=True)
class ResidualOptions:
    """How the test-trajectory residual A is evaluated."""

    projected: bool = True
    nonsolenoidal_correction: bool = False

    def to_dict(self) -> dict:
        return {"projected": self.projected,
                "nonsolenoidal_correction": self.nonsolenoidal_correction}

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualOptions":
        return cls(projected=d.get("projected", True),
                   nonsolenoidal_correction=d.get("nonsolenoidal_correction", False))


# -- quadratic functionals --------------------------------------------------

def rel_energy(u: SpectralField, v: SpectralField) -> float:
    """R(u|v) = 1/2 ||u - v||_L2^2."""
    d = u - v
    return 0.5 * inner(d, d)


def rel_dissipation(u: SpectralField, v: SpectralField, nu: float) -> float:
    """W(u|v) = nu/2 ||grad u - grad v||_L2^2; identically zero for Euler."""
    if nu == 0:
        return 0.0
    d = u - v
    kx, ky = d.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    val = np.sum(k2 * np.abs(d.coeffs) ** 2)
    return 0.5 * nu * (2 * np.pi) ** 2 * val


# -- regularity weights -----------------------------------------------------

def serrin_weight(v: SpectralField, w: WeightSpec, nu: float) -> float:
    """K(v) = c ||v||_{L^{2p/(p-2)}}^{2/(1-alpha)} from the Young closure."""
    if w.kind != "serrin":
        raise WeightError("serrin_weight called with non-Serrin spec")
    c = w.constant(nu)
    return c * lp_norm(v, w.lp_exponent) ** w.time_exponent


def euler_negsym_weight(v: SpectralField, kappa: float = 2.0) -> float:
    """kappa * sup_x of the largest negative normal strain, clipped at 0.

    Uses the diagonal (normal-strain) part diag(dx v1, dy v2) of the
    velocity gradient, so shear-free rotational fields such as
    (-sin y, sin x) carry zero weight while compressive strain fields
    like eps*(sin x, -sin y) yield kappa*eps.
    """
    fine = pad_to(v, 2 * v.grid.n)
    m = fine.grid.n
    g = np.fft.ifft2(gradient_tensor(fine) * m * m, axes=(-2, -1)).real
    # normal strains: eigenvalues of -diag(a, c) are (-a, -c)
    a = g[0, 0]
    c = g[1, 1]
    lam_max_neg = max(np.max(-a), np.max(-c))
    return kappa * max(lam_max_neg, 0.0)


def weight_value(v: SpectralField, w: WeightSpec, nu: float) -> float:
    if w.kind == "serrin":
        return serrin_weight(v, w, nu)
    return euler_negsym_weight(v, w.kappa)


# -- residual and trilinear form --------------------------------------------

def residual_A(vt: TestTrajectory, t: float, spec: SystemSpec,
               opts: ResidualOptions = ResidualOptions()) -> SpectralField:
    """A(vt) = d/dt vt + (vt.grad)vt - nu Lap vt - f, Leray-projected by default."""
    v = vt.value(t)
    res = vt.deriv(t) + convection(v, dealias=True)
    if spec.nu > 0:
        res = res - spec.nu * laplacian(v)
    if not spec.forcing.is_zero():
        res = res - spec.forcing(t, spec.grid)
    if opts.projected:
        res = leray_project(res)
    return res


def trilinear(a: SpectralField, b: SpectralField, c: SpectralField) -> float:
    """Integral of (a.grad)b . c, exact via 2x-oversampled collocation.

    Skew-symmetric in (b, c) when a is solenoidal; no solenoidality is
    assumed, so the same quadrature serves the divergence corrections.
    """
    n = a.grid.n
    m = 2 * n
    af = pad_to(a, m).physical()
    cf = pad_to(c, m).physical()
    gb = np.fft.ifft2(gradient_tensor(pad_to(b, m)) * m * m, axes=(-2, -1)).real
    # (a.grad)b_i = a_x d_x b_i + a_y d_y b_i
    integrand = np.sum((af[0] * gb[:, 0] + af[1] * gb[:, 1]) * cf, axis=0)
    h = 2 * np.pi / m
    return float(np.sum(integrand) * h * h)


def nonsolenoidal_correction(vt: TestTrajectory, t: float, u: SpectralField) -> float:
    """Divergence correction term; vanishes when vt is solenoidal."""
    v = vt.value(t)
    pv = leray_project(v)
    q = v - pv
    d = u - pv
    return trilinear(q, v, d) + trilinear(pv, q, d)


# -- Gronwall machinery -----------------------------------------------------

def weight_series(vt: TestTrajectory, w: WeightSpec, nu: float,
                  times: np.ndarray) -> np.ndarray:
    """K(vt(t)) sampled on a time grid."""
    return np.array([weight_value(vt.value(t), w, nu) for t in times])


def cumulative_weight_integral(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """I(t_k) = int_0^{t_k} K ds by composite Simpson; I(0) = 0."""
    times = np.asarray(times, dtype=float)
    if times.size == 1:
        return np.zeros(1)
    return cumulative_simpson(np.asarray(values, dtype=float), x=times, initial=0.0)


def gronwall_factor(vt: TestTrajectory, w: WeightSpec, s: float, t: float,
                    nu: float, times: np.ndarray) -> float:
    """exp(int_s^t K(vt) dtau) on the sample grid; multiplicative over intervals."""
    if s > t:
        raise WeightError(f"gronwall_factor needs s <= t, got s={s}, t={t}")
    times = np.asarray(times, dtype=float)
    cum = cumulative_weight_integral(weight_series(vt, w, nu, times), times)
    def at(x):
        i = int(np.argmin(np.abs(times - x)))
        if abs(times[i] - x) > 1e-10 * max(1.0, abs(x)):
            raise WeightError(f"time {x:g} not on the sample grid")
        return cum[i]
    return float(np.exp(at(t) - at(s)))


# -- Gagliardo-Nirenberg calibration ----------------------------------------

def gn_ratio(v: SpectralField) -> float:
    """||v||_L4 / (||v||_L2^{1/2} ||grad v||_L2^{1/2}) for a mean-free field."""
    l2 = l2_norm(v)
    kx, ky = v.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    h1 = 2 * np.pi * np.sqrt(np.sum(k2 * np.abs(v.coeffs) ** 2))
    if l2 == 0 or h1 == 0:
        return 0.0
    return lp_norm(v, 4) / np.sqrt(l2 * h1)


def calibrate_gn_constant(trials: int = 2000, n: int = 64, seed: int = 0,
                          safety: float = 1.1) -> float:
    """Brute-force maximization of the GN ratio over random band-limited fields."""
    rng = np.random.default_rng(seed)
    grid = Grid(n)
    best = 0.0
    kmaxes = [1, 2, 3, 5, 8, 13, 21]
    for i in range(trials):
        kmax = kmaxes[i % len(kmaxes)]
        comps = 2 if i % 2 == 0 else 1
        v = random_field(grid, rng, kmax=min(kmax, n // 3), components=comps,
                         solenoidal=(comps == 2))
        best = max(best, gn_ratio(v))
    return best * safety
