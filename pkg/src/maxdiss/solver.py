"""Galerkin time integration of incompressible Navier-Stokes / Euler flows.

The spatial discretization is Fourier-Galerkin on the periodic torus, so
the divergence-free truncation spaces are spanned by solenoidal Fourier
modes and the Galerkin projection is spectral truncation.  Time stepping
is an integrating-factor RK4: the Stokes part is integrated exactly via
exp(-nu |k|^2 dt), the convection explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .fields import (
    FieldError,
    Grid,
    SpectralField,
    from_function,
    gradient_tensor,
    inner,
    l2_norm,
    leray_project,
    load_field,
    pad_to,
    restrict_to,
    save_field,
    zero_field,
)


class BlowUpError(RuntimeError):
    """Raised when the time stepper produces NaN/Inf or runaway energy."""


class SolverError(ValueError):
    pass


# -- forcing ----------------------------------------------------------------

def _forcing_gradient_potential(t, grid, params):
    a = params.get("amplitude", 1.0)
    return from_function(grid,
                         lambda X, Y: a * np.cos(X) * np.sin(Y),
                         lambda X, Y: a * np.sin(X) * np.cos(Y))


def _forcing_kolmogorov(t, grid, params):
    a = params.get("amplitude", 1.0)
    k = params.get("wavenumber", 1)
    return from_function(grid,
                         lambda X, Y: a * np.sin(k * Y),
                         lambda X, Y: np.zeros_like(X))


ANALYTIC_FORCINGS = {
    "gradient_potential": _forcing_gradient_potential,  # grad(sin x sin y)
    "kolmogorov": _forcing_kolmogorov,
}


@dataclass(frozen=True)
class Forcing:
    """Right-hand side descriptor: zero, analytic registry entry, file, or static field."""

    kind: str = "zero"
    name: str = ""
    params: dict = field(default_factory=dict)
    path: str = ""
    static: SpectralField | None = None

    def __call__(self, t: float, grid: Grid) -> SpectralField:
        if self.kind == "zero":
            return zero_field(grid, 2, solenoidal=False)
        if self.kind == "analytic":
            try:
                fn = ANALYTIC_FORCINGS[self.name]
            except KeyError:
                raise SolverError(f"unknown analytic forcing {self.name!r}") from None
            return fn(t, grid, self.params)
        if self.kind == "file":
            f = load_field(self.path)
            return _fit_to_grid(f, grid)
        if self.kind == "static":
            return _fit_to_grid(self.static, grid)
        raise SolverError(f"unknown forcing kind {self.kind!r}")

    def is_zero(self) -> bool:
        return self.kind == "zero"

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "analytic":
            d["name"] = self.name
            d["params"] = dict(self.params)
        elif self.kind == "file":
            d["path"] = str(self.path)
        elif self.kind == "static":
            d["note"] = "in-memory field"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Forcing":
        return cls(kind=d.get("kind", "zero"), name=d.get("name", ""),
                   params=d.get("params", {}), path=d.get("path", ""))

    @classmethod
    def static_field(cls, u: SpectralField) -> "Forcing":
        return cls(kind="static", static=u)


def _fit_to_grid(u: SpectralField, grid: Grid) -> SpectralField:
    if u.grid.n == grid.n:
        return u
    return pad_to(u, grid.n) if u.grid.n < grid.n else restrict_to(u, grid.n)


# -- system specification ---------------------------------------------------

@dataclass(frozen=True)
class SystemSpec:
    """Viscosity, forcing, horizon, step and resolution of one flow problem."""

    nu: float
    grid: Grid
    t_end: float
    dt: float
    forcing: Forcing = Forcing()
    dealias: bool = True

    def __post_init__(self):
        if self.nu < 0:
            raise SolverError(f"viscosity must be >= 0, got {self.nu}")
        if not (0 < self.dt <= self.t_end):
            raise SolverError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")

    def to_dict(self) -> dict:
        return {"nu": self.nu, "n": self.grid.n, "t_end": self.t_end,
                "dt": self.dt, "forcing": self.forcing.to_dict(),
                "dealias": self.dealias}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(nu=d["nu"], grid=Grid(d["n"]), t_end=d["t_end"], dt=d["dt"],
                   forcing=Forcing.from_dict(d.get("forcing", {"kind": "zero"})),
                   dealias=d.get("dealias", True))


# -- right-hand side --------------------------------------------------------

def _dealias_mask(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    cut = n // 3
    return (np.abs(kx) <= cut) & (np.abs(ky) <= cut)


def convection(v: SpectralField, dealias: bool = True) -> SpectralField:
    """Pseudospectral (v.grad)v with optional 2/3-rule dealiasing."""
    n = v.grid.n
    coeffs = v.coeffs
    if dealias:
        coeffs = coeffs * _dealias_mask(n)
    vv = np.fft.ifft2(coeffs * n * n, axes=(-2, -1)).real
    grads = np.fft.ifft2(gradient_tensor(SpectralField(v.grid, coeffs)) * n * n,
                         axes=(-2, -1)).real
    # (v.grad)v_i = v_x d_x v_i + v_y d_y v_i
    conv = vv[0] * grads[:, 0] + vv[1] * grads[:, 1]
    chat = np.fft.fft2(conv, axes=(-2, -1)) / (n * n)
    if dealias:
        chat = chat * _dealias_mask(n)
    return SpectralField(v.grid, chat)


def nse_rhs(v: SpectralField, spec: SystemSpec, t: float) -> SpectralField:
    """P[-(v.grad)v + f(t)] + nu*Lap v; solenoidal output."""
    if not v.solenoidal:
        raise SolverError("nse_rhs expects a solenoidal velocity field")
    rhs = -1.0 * convection(v, spec.dealias)
    f = spec.forcing(t, spec.grid)
    rhs = leray_project(rhs + f)
    if spec.nu > 0:
        kx, ky = spec.grid.wavenumbers()
        visc = -spec.nu * (kx * kx + ky * ky) * v.coeffs
        rhs = SpectralField(spec.grid, rhs.coeffs + visc, solenoidal=True)
    return rhs


def _nonlinear(coeffs: np.ndarray, spec: SystemSpec, t: float) -> np.ndarray:
    v = SpectralField(spec.grid, coeffs)
    rhs = -1.0 * convection(v, spec.dealias)
    if not spec.forcing.is_zero():
        rhs = rhs + spec.forcing(t, spec.grid)
    return leray_project(rhs).coeffs


def advance(v: SpectralField, spec: SystemSpec, t: float, dt: float | None = None) -> SpectralField:
    """One integrating-factor RK4 step; diffusion exact, convection explicit."""
    if dt is None:
        dt = spec.dt
    kx, ky = spec.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    e_full = np.exp(-spec.nu * k2 * dt)
    e_half = np.exp(-spec.nu * k2 * (dt / 2))

    u = v.coeffs
    a = _nonlinear(u, spec, t)
    b = _nonlinear(e_half * (u + 0.5 * dt * a), spec, t + 0.5 * dt)
    c = _nonlinear(e_half * u + 0.5 * dt * b, spec, t + 0.5 * dt)
    d = _nonlinear(e_full * u + dt * e_half * c, spec, t + dt)
    new = e_full * u + (dt / 6.0) * (e_full * a + 2.0 * e_half * (b + c) + d)

    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite coefficients after step at t={t:g}")
    return SpectralField(spec.grid, new, solenoidal=True)


# -- trajectories -----------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Time-sampled solenoidal states of one Galerkin run."""

    spec: SystemSpec
    times: np.ndarray
    states: tuple
    provenance: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.size == 0:
            raise SolverError("trajectory needs at least one sample time")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise SolverError("sample times must start at 0 and increase strictly")
        if len(self.states) != t.size:
            raise SolverError("times/states length mismatch")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def grid(self) -> Grid:
        return self.spec.grid

    def energies(self) -> np.ndarray:
        return np.array([0.5 * inner(s, s) for s in self.states])

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-10 * max(1.0, abs(t)):
            raise SolverError(f"time {t:g} is not a sample time")
        return i

    def state_at(self, t: float) -> SpectralField:
        return self.states[self.index_of(t)]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "spec": self.spec.to_dict(),
            "times": self.times.tolist(),
            "provenance": self.provenance,
            "fields": [f"field_{i:06d}.fld" for i in range(len(self.states))],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        for name, state in zip(manifest["fields"], self.states):
            save_field(state, out / name)

    @classmethod
    def load(cls, in_dir) -> "Trajectory":
        src = Path(in_dir)
        manifest = json.loads((src / "manifest.json").read_text())
        spec = SystemSpec.from_dict(manifest["spec"])
        states = []
        for name in manifest["fields"]:
            f = load_field(src / name)
            states.append(leray_project(f))
        return cls(spec=spec, times=np.array(manifest["times"]), states=states,
                   provenance=manifest.get("provenance", ""))


def solve(spec: SystemSpec, v0: SpectralField, sample_stride: int = 1,
          provenance: str = "") -> Trajectory:
    """Integrate from P_n v0 to t_end, sampling every `sample_stride` steps."""
    if sample_stride < 1:
        raise SolverError("sample_stride must be >= 1")
    v = leray_project(_fit_to_grid(v0, spec.grid))
    n_steps = int(round(spec.t_end / spec.dt))
    if abs(n_steps * spec.dt - spec.t_end) > 1e-9 * spec.t_end:
        raise SolverError("t_end must be an integer multiple of dt")

    e0 = 0.5 * inner(v, v)
    times = [0.0]
    states = [v]
    for step in range(n_steps):
        t = step * spec.dt
        v = advance(v, spec, t)
        e = 0.5 * inner(v, v)
        if e > 1e8 * max(e0, 1.0):
            raise BlowUpError(f"energy blow-up at t={t + spec.dt:g}")
        if (step + 1) % sample_stride == 0 or step == n_steps - 1:
            times.append((step + 1) * spec.dt)
            states.append(v)
    return Trajectory(spec=spec, times=np.array(times), states=states,
                      provenance=provenance or f"ifrk4 n={spec.grid.n} dt={spec.dt}")


# -- Galerkin truncation ----------------------------------------------------

def canonical_modes(grid: Grid) -> list[tuple[int, int]]:
    """All retained wavevectors sorted by |k|^2, then lexicographically."""
    half = grid.n // 2
    ks = [(kx, ky) for kx in range(-half + 1, half) for ky in range(-half + 1, half)]
    ks.sort(key=lambda k: (k[0] * k[0] + k[1] * k[1], k))
    return ks


def truncate_modes(u: SpectralField, n_keep: int) -> SpectralField:
    """Zero all modes beyond the first n_keep in canonical order.

    The kept set is closed under k -> -k so the projection is real-valued,
    self-adjoint, and idempotent.
    """
    modes = canonical_modes(u.grid)
    if n_keep >= len(modes):
        return u
    kept = set(modes[:n_keep])
    kept |= {(-kx, -ky) for kx, ky in kept}
    n = u.grid.n
    mask = np.zeros((n, n), dtype=bool)
    for kx, ky in kept:
        mask[kx % n, ky % n] = True
    return SpectralField(u.grid, u.coeffs * mask, solenoidal=u.solenoidal)


# -- exact Taylor-Green oracle ----------------------------------------------

def taylor_green(t: float, nu: float, grid: Grid, amplitude: float = 1.0) -> SpectralField:
    """v = A e^{-2 nu t} (sin x cos y, -cos x sin y); exact NSE solution for f=0."""
    a = amplitude * np.exp(-2.0 * nu * t)
    return from_function(grid,
                         lambda X, Y: a * np.sin(X) * np.cos(Y),
                         lambda X, Y: -a * np.cos(X) * np.sin(Y),
                         solenoidal=True)


def taylor_green_pressure(t: float, nu: float, grid: Grid, amplitude: float = 1.0) -> SpectralField:
    """p = (A^2/4) e^{-4 nu t} (cos 2x + cos 2y).

    The sign pairs with the (sin x cos y, -cos x sin y) orientation of
    taylor_green: (v.grad)v = -grad p there, so the momentum residual
    of (v, p) vanishes identically.
    """
    a = 0.25 * amplitude ** 2 * np.exp(-4.0 * nu * t)
    return from_function(grid, lambda X, Y: a * (np.cos(2 * X) + np.cos(2 * Y)))


def recover_pressure(v: SpectralField, f: SpectralField | None = None) -> SpectralField:
    """Pressure from -Lap p = div div (v x v) - div f, zero-mean normalization."""
    if not v.is_vector:
        raise SolverError("pressure recovery needs a velocity field")
    n = v.grid.n
    fine = pad_to(v, 2 * n)
    phys = fine.physical()
    m = fine.grid.n
    tensor = np.stack([phys[0] * phys[0], phys[0] * phys[1], phys[1] * phys[1]])
    that = np.fft.fft2(tensor, axes=(-2, -1)) / (m * m)
    kx, ky = fine.grid.wavenumbers()
    k2 = kx * kx + ky * ky
    rhs = -(kx * kx * that[0] + 2 * kx * ky * that[1] + ky * ky * that[2])
    if f is not None:
        ff = pad_to(_fit_to_grid(f, v.grid), m)
        rhs = rhs - 1j * (kx * ff.coeffs[0] + ky * ff.coeffs[1])
    phat = np.where(k2 == 0, 0.0, rhs / np.where(k2 == 0, 1.0, k2))
    p_fine = SpectralField(fine.grid, phat[None])
    return restrict_to(p_fine, n)


# -- test trajectories ------------------------------------------------------

class TestTrajectory:
    """C^1-in-time trajectory used as a test function for certification.

    Either analytic (closed-form value and time derivative) or a cubic
    spline through the samples of a Trajectory (not-a-knot ends).
    """

    __test__ = False  # not a pytest test class

    def __init__(self, kind: str, value_fn, deriv_fn, grid: Grid,
                 solenoidal: bool = True, label: str = ""):
        self.kind = kind
        self._value = value_fn
        self._deriv = deriv_fn
        self.grid = grid
        self.solenoidal = solenoidal
        self.label = label or kind

    def value(self, t: float) -> SpectralField:
        return self._value(t)

    def deriv(self, t: float) -> SpectralField:
        return self._deriv(t)

    @classmethod
    def analytic(cls, value_fn, deriv_fn, grid: Grid, solenoidal: bool = True,
                 label: str = "analytic") -> "TestTrajectory":
        return cls("analytic", value_fn, deriv_fn, grid, solenoidal, label)

    @classmethod
    def taylor_green(cls, nu: float, grid: Grid, amplitude: float = 1.0,
                     label: str = "") -> "TestTrajectory":
        def val(t):
            return taylor_green(t, nu, grid, amplitude)

        def der(t):
            return -2.0 * nu * taylor_green(t, nu, grid, amplitude)

        return cls("analytic", val, der, grid, True,
                   label or f"taylor_green(nu={nu:g}, a={amplitude:g})")

    @classmethod
    def zero(cls, grid: Grid, label: str = "zero") -> "TestTrajectory":
        z = zero_field(grid)
        return cls("analytic", lambda t: z, lambda t: z, grid, True, label)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, label: str = "") -> "TestTrajectory":
        if len(traj.states) < 4:
            raise SolverError("spline test trajectory needs >= 4 samples")
        data = np.stack([s.coeffs for s in traj.states])
        spline = CubicSpline(traj.times, data, axis=0, bc_type="not-a-knot")
        dspline = spline.derivative()
        grid = traj.grid

        def val(t):
            return SpectralField(grid, spline(t), solenoidal=True)

        def der(t):
            return SpectralField(grid, dspline(t))

        return cls("spline", val, der, grid, True, label or "spline")

    @classmethod
    def perturbed(cls, base: "TestTrajectory", r: SpectralField, alpha: float,
                  label: str = "") -> "TestTrajectory":
        """base + alpha * r with r constant in time."""
        def val(t):
            return base.value(t) + alpha * r

        def der(t):
            return base.deriv(t)

        sol = base.solenoidal and r.solenoidal
        return cls(base.kind, val, der, base.grid, sol, label or f"{base.label}+{alpha:g}r")
