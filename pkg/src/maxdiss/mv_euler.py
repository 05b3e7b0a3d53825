"""Measure-valued machinery for the incompressible Euler equations.

A defect field is a grid-sampled, symmetric, positive-semidefinite matrix
density absorbing the gap between the quadratic term of a resolved
reference and that of a coarse candidate.  The continuum measure is stood
in for by the trigonometric interpolant of the samples, produced through a
declared spectral low-pass whose scale is always recorded.  The key
algebraic facts are preserved exactly at the sample level: the trace
integral matches the kinetic-energy gap, and convex combinations of
velocity/defect pairs keep v (x) v + m affine, so equation residuals
combine linearly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .fields import (Grid, SpectralField, inner, l2_norm, load_samples,
                     pad_to, restrict_to, save_samples)
from .solver import TestTrajectory, Trajectory

DEFECT_COMPONENTS = ("m11", "m12", "m22")


class MVError(ValueError):
    pass


def psd_clip(density: np.ndarray):
    """Project 2x2-symmetric samples (..., 3, n, n) onto PSD matrices.

    Returns (clipped, magnitude) where magnitude is the largest negative
    eigenvalue removed, as an absolute number in velocity^2 units.
    """
    a = density[..., 0, :, :]
    b = density[..., 1, :, :]
    c = density[..., 2, :, :]
    mean = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    lam1 = mean + rad
    lam2 = mean - rad
    magnitude = float(max(np.max(-lam2, initial=0.0), np.max(-lam1, initial=0.0), 0.0))
    if magnitude == 0.0:
        return density.copy(), 0.0
    l1 = np.maximum(lam1, 0.0)
    l2 = np.maximum(lam2, 0.0)
    # eigenvector for lam1: (b, lam1 - a), falling back to an axis when the
    # matrix is (numerically) already diagonal
    vx = b.copy()
    vy = lam1 - a
    nrm = np.hypot(vx, vy)
    tiny = nrm <= 1e-300
    vx = np.where(tiny, np.where(a >= c, 1.0, 0.0), vx)
    vy = np.where(tiny, np.where(a >= c, 0.0, 1.0), vy)
    nrm = np.hypot(vx, vy)
    vx /= nrm
    vy /= nrm
    out = np.empty_like(density)
    out[..., 0, :, :] = l1 * vx * vx + l2 * vy * vy
    out[..., 1, :, :] = (l1 - l2) * vx * vy
    out[..., 2, :, :] = l1 * vy * vy + l2 * vx * vx
    return out, magnitude


def min_eigenvalue(density: np.ndarray) -> float:
    a = density[..., 0, :, :]
    b = density[..., 1, :, :]
    c = density[..., 2, :, :]
    mean = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    return float(np.min(mean - rad))


@dataclass(frozen=True)
class DefectField:
    """Time-sampled symmetric PSD matrix density (m11, m12, m22) on a grid."""

    grid: Grid
    times: np.ndarray
    density: np.ndarray       # (T, 3, n, n) physical samples
    mollifier_kmax: int       # spectral low-pass scale used in construction
    clip_magnitude: float = 0.0  # largest eigenvalue removed by PSD projection
    provenance: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        d = np.asarray(self.density, dtype=float)
        n = self.grid.n
        if d.shape != (t.size, 3, n, n):
            raise MVError(f"density shape {d.shape} != ({t.size}, 3, {n}, {n})")
        t.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "density", d)

    @classmethod
    def zero(cls, grid: Grid, times, provenance: str = "zero") -> "DefectField":
        times = np.asarray(times, dtype=float)
        return cls(grid=grid, times=times,
                   density=np.zeros((times.size, 3, grid.n, grid.n)),
                   mollifier_kmax=grid.n // 2, provenance=provenance)

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-10 * max(1.0, abs(t)):
            raise MVError(f"time {t:g} is not a defect sample time")
        return i

    def trace_integral(self, t: float) -> float:
        """<m(t), I> = integral of tr m over the torus."""
        k = self.index_of(t)
        h = 2 * np.pi / self.grid.n
        return float(np.sum(self.density[k, 0] + self.density[k, 2]) * h * h)

    def trace_integrals(self) -> np.ndarray:
        h = 2 * np.pi / self.grid.n
        return np.sum(self.density[:, 0] + self.density[:, 2],
                      axis=(-2, -1)) * h * h

    def min_eigenvalue(self) -> float:
        return min_eigenvalue(self.density)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, t in enumerate(self.times):
            save_samples(out / f"defect_{k:06d}.fld", self.density[k],
                         extra={"kind": "defect", "t": float(t),
                                "components_order": list(DEFECT_COMPONENTS)})
        manifest = {"format": "maxdiss-defect", "n": self.grid.n,
                    "times": self.times.tolist(),
                    "mollifier_kmax": self.mollifier_kmax,
                    "clip_magnitude": self.clip_magnitude,
                    "provenance": self.provenance}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, in_dir) -> "DefectField":
        src = Path(in_dir)
        manifest = json.loads((src / "manifest.json").read_text())
        if manifest.get("format") != "maxdiss-defect":
            raise MVError(f"{in_dir} is not a defect directory")
        times = np.asarray(manifest["times"], dtype=float)
        n = manifest["n"]
        density = np.empty((times.size, 3, n, n))
        for k in range(times.size):
            samples, header = load_samples(src / f"defect_{k:06d}.fld")
            if header["components"] != 3 or header["n"] != n:
                raise MVError(f"bad defect sample {k}")
            density[k] = samples
        return cls(grid=Grid(n), times=times, density=density,
                   mollifier_kmax=manifest["mollifier_kmax"],
                   clip_magnitude=manifest.get("clip_magnitude", 0.0),
                   provenance=manifest.get("provenance", ""))


# -- construction from a resolution gap -------------------------------------

def _velocity_tensor(v: SpectralField, m: int) -> np.ndarray:
    """(v (x) v) sampled on an m x m grid, components (11, 12, 22)."""
    p = pad_to(v, m).physical()
    return np.stack([p[0] * p[0], p[0] * p[1], p[1] * p[1]])


def _lowpass_restrict(samples: np.ndarray, m: int, n: int, kmax: int) -> np.ndarray:
    """Gaussian spectral low-pass at scale kmax, restricted to n samples.

    The Gaussian multiplier exp(-2 |k/kmax|^2) is a positive convolution
    kernel, so pointwise positive semidefiniteness of the smoothed tensor
    is preserved (a sharp cutoff is not and rings negative); the k = 0
    mode, hence the trace integral, passes through unchanged.
    """
    hat = np.fft.fft2(samples, axes=(-2, -1)) / (m * m)
    k = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    k2 = (k * k)[:, None] + (k * k)[None, :]
    hat = hat * np.exp(-2.0 * k2 / (kmax * kmax))
    idx = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    out = hat[..., idx[:, None], idx[None, :]]
    return np.fft.ifft2(out * (n * n), axes=(-2, -1)).real


def defect_from_pair(fine: Trajectory, coarse: Trajectory,
                     mollifier_kmax: int | None = None,
                     clip_fail_ratio: float = 0.5) -> DefectField:
    """Defect density m = low-pass(v_f (x) v_f - v_c (x) v_c), PSD-projected.

    The low-pass stands in for the weak-* limit; its scale is recorded on
    the result.  The PSD projection magnitude is recorded too, and the
    construction fails if the clip exceeds ``clip_fail_ratio`` times the
    mean trace scale.
    """
    if fine.times.size != coarse.times.size or not np.allclose(
            fine.times, coarse.times, atol=1e-12):
        raise MVError("fine/coarse sample times differ")
    if fine.spec.forcing.to_dict() != coarse.spec.forcing.to_dict():
        raise MVError("fine/coarse trajectories do not share forcing")
    n = fine.grid.n
    if coarse.grid.n > n:
        raise MVError("coarse resolution exceeds fine resolution")
    if mollifier_kmax is None:
        mollifier_kmax = max(coarse.grid.n // 3, 1)
    # shared data means agreement below the mollifier scale: the coarse
    # member is allowed to miss exactly the content the defect absorbs
    kx, ky = fine.grid.wavenumbers()
    low = (np.abs(kx) <= mollifier_kmax) & (np.abs(ky) <= mollifier_kmax)
    cpad = pad_to(coarse.states[0], n)
    gap0 = np.sqrt(np.sum(np.abs((fine.states[0].coeffs - cpad.coeffs)
                                 * low) ** 2))
    scale = max(np.sqrt(np.sum(np.abs(fine.states[0].coeffs) ** 2)), 1.0)
    if gap0 > 1e-8 * scale:
        raise MVError(f"fine/coarse initial data differ ({gap0:g}) "
                      f"below the mollifier scale")
    m2 = 2 * n
    T = fine.times.size
    density = np.empty((T, 3, n, n))
    for k in range(T):
        raw = _velocity_tensor(fine.states[k], m2) \
            - _velocity_tensor(coarse.states[k], m2)
        density[k] = _lowpass_restrict(raw, m2, n, mollifier_kmax)
    clipped, magnitude = psd_clip(density)
    trace_scale = float(np.mean(np.abs(clipped[:, 0] + clipped[:, 2])))
    # roundoff floor: a vanishing defect produces eigenvalues at machine
    # precision relative to the velocity energy density, not the trace scale
    energy_density = max(inner(s, s) for s in fine.states) / (2 * np.pi) ** 2
    floor = 1e-12 * max(energy_density, 1.0)
    if magnitude > max(clip_fail_ratio * trace_scale, floor):
        raise MVError(f"PSD projection too large: clip {magnitude:g} "
                      f"vs trace scale {trace_scale:g}")
    return DefectField(grid=fine.grid, times=fine.times, density=clipped,
                       mollifier_kmax=int(mollifier_kmax),
                       clip_magnitude=magnitude,
                       provenance=f"pair n_f={n} n_c={coarse.grid.n} "
                                  f"kmax={mollifier_kmax}")


def trace_energy_gap(m: DefectField, fine: Trajectory,
                     coarse: Trajectory) -> np.ndarray:
    """Per-time |(1/2)<m,I> - (E_fine - E_coarse)|, the low-pass leakage."""
    gap = fine.energies() - coarse.energies()
    return np.abs(0.5 * m.trace_integrals() - gap)


def trace_leakage_bound(m: DefectField) -> float:
    """Bound on the trace/energy-gap mismatch.

    The mollifier passes the k = 0 mode unchanged, so before PSD
    projection the trace integral equals the energy gap exactly; the
    projection shifts each eigenvalue by at most the recorded clip
    magnitude, hence the trace integral by at most 2 (2 pi)^2 clip.
    """
    return 2.0 * (2 * np.pi) ** 2 * m.clip_magnitude


# -- measure-valued equation and energy inequality --------------------------

def _check_phi(phi: TestTrajectory, times: np.ndarray) -> None:
    if not phi.solenoidal:
        raise MVError(f"test function {phi.label!r} must be solenoidal")
    end = phi.value(float(times[-1]))
    scale = max(l2_norm(phi.value(0.0)), 1.0)
    if l2_norm(end) > 1e-10 * scale:
        raise MVError(f"test function {phi.label!r} must vanish at t=T")


def _density_on(m_k: np.ndarray, n_src: int, n_dst: int) -> np.ndarray:
    """Trigonometric interpolation of defect samples onto a finer grid."""
    if n_dst == n_src:
        return m_k
    hat = np.fft.fft2(m_k, axes=(-2, -1)) / (n_src * n_src)
    big = np.zeros(m_k.shape[:-2] + (n_dst, n_dst), dtype=complex)
    idx = np.fft.fftfreq(n_src, d=1.0 / n_src).astype(int)
    big[..., idx[:, None], idx[None, :]] = hat
    return np.fft.ifft2(big * (n_dst * n_dst), axes=(-2, -1)).real


def _grad_samples(u: SpectralField, m: int) -> np.ndarray:
    """Gradient (d_j u_i) sampled on an m x m grid, shape (2, 2, m, m)."""
    from .fields import gradient_tensor
    g = gradient_tensor(pad_to(u, m))
    return np.fft.ifft2(g * (m * m), axes=(-2, -1)).real


def mv_equation_residual(v: Trajectory, m: DefectField | None, f,
                         phis) -> dict:
    """Per-test-function residual of the momentum balance with defect.

    res(phi) = -int <v, d_t phi> - int (v(x)v + m) : grad phi
               - (v0, phi(0)) - int (f, phi);
    zero for exact Euler solutions with m = 0, and small for
    defect-corrected coarse fields against fine references.
    """
    times = v.times
    if m is not None and (m.times.size != times.size or
                          not np.allclose(m.times, times, atol=1e-12)):
        raise MVError("defect sample times differ from trajectory times")
    n_q = 2 * max(v.grid.n, m.grid.n if m is not None else 0)
    h = 2 * np.pi / n_q
    results = {}
    for idx, phi in enumerate(phis if isinstance(phis, (list, tuple)) else [phis]):
        _check_phi(phi, times)
        label = phi.label or f"phi_{idx}"
        vals = np.empty(times.size)
        for k, t in enumerate(times):
            u = v.states[k]
            ph = phi.value(t)
            nc = max(u.grid.n, ph.grid.n)
            dval = inner(pad_to(u, nc), pad_to(phi.deriv(t), nc))
            vp = pad_to(u, n_q).physical()
            gphi = _grad_samples(ph, n_q)
            tens = np.stack([vp[0] * vp[0], vp[0] * vp[1], vp[1] * vp[1]])
            if m is not None:
                tens = tens + _density_on(m.density[k], m.grid.n, n_q)
            pairing = np.sum(tens[0] * gphi[0, 0] +
                             tens[1] * (gphi[0, 1] + gphi[1, 0]) +
                             tens[2] * gphi[1, 1]) * h * h
            fval = 0.0
            if f is not None and not f.is_zero():
                fval = inner(f(t, ph.grid), ph)
            vals[k] = -dval - pairing - fval
        integral = simpson(vals, x=times) if times.size > 1 else 0.0
        u0 = v.states[0]
        ph0 = phi.value(0.0)
        nc = max(u0.grid.n, ph0.grid.n)
        results[label] = float(integral - inner(pad_to(u0, nc), pad_to(ph0, nc)))
    return results


def mv_energy_margin(v: Trajectory, m: DefectField | None, f,
                     t: float | None = None):
    """Energy-inequality margin with the defect's trace carrying energy.

    margin(t) = 1/2 ||v0||^2 + int_0^t (f, v) - 1/2 ||v(t)||^2
                - 1/2 <m(t), I>;  nonnegative for admissible pairs.
    Returns the full series when t is None.
    """
    times = v.times
    energies = v.energies()
    if f is not None and not f.is_zero():
        fv = np.array([inner(f(tk, v.grid), v.states[k])
                       for k, tk in enumerate(times)])
        work = cumulative_simpson(fv, x=times, initial=0.0) \
            if times.size > 1 else np.zeros(1)
    else:
        work = np.zeros(times.size)
    traces = m.trace_integrals() if m is not None else np.zeros(times.size)
    margins = energies[0] + work - energies - 0.5 * traces
    if t is None:
        return margins
    return float(margins[v.index_of(t)])


# -- convexity ---------------------------------------------------------------

def mv_convex_combine(v1: Trajectory, m1: DefectField,
                      v2: Trajectory, m2: DefectField, lam: float):
    """Combine (v1, m1) and (v2, m2) so that v (x) v + m stays affine.

    v = lam v1 + (1-lam) v2;
    m = lam m1 + (1-lam) m2 + lam (1-lam) (v1-v2) (x) (v1-v2),
    which keeps the equation residual exactly affine in lam and the
    density PSD (sum of PSD terms).
    """
    if not 0.0 <= lam <= 1.0:
        raise MVError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return v1, m1
    if lam == 0.0:
        return v2, m2
    if v1.grid.n != v2.grid.n or m1.grid.n != m2.grid.n:
        raise MVError("combination requires matching resolutions")
    if not (np.allclose(v1.times, v2.times, atol=1e-12)
            and np.allclose(m1.times, m2.times, atol=1e-12)):
        raise MVError("combination requires aligned sample times")
    n_m = m1.grid.n
    states = []
    density = np.empty_like(m1.density)
    for k in range(v1.times.size):
        states.append(SpectralField(
            v1.grid, lam * v1.states[k].coeffs + (1 - lam) * v2.states[k].coeffs,
            solenoidal=True))
        d = v1.states[k] - v2.states[k]
        density[k] = lam * m1.density[k] + (1 - lam) * m2.density[k] \
            + lam * (1 - lam) * _velocity_tensor(d, n_m)
    v = Trajectory(spec=v1.spec, times=v1.times, states=states,
                   provenance=f"mv mixture lam={lam}")
    m = DefectField(grid=m1.grid, times=m1.times, density=density,
                    mollifier_kmax=min(m1.mollifier_kmax, m2.mollifier_kmax),
                    clip_magnitude=max(m1.clip_magnitude, m2.clip_magnitude),
                    provenance=f"mv mixture lam={lam}")
    return v, m


def mv_select(pairs, member_ids=None, kkt_tol: float = 1e-8):
    """Minimal time-integrated energy over simplex mixtures of (v, m) pairs.

    The objective depends on the velocities only; the defects are combined
    afterwards with the affine-preserving formula
    m = sum_i lam_i m_i + sum_i lam_i (v_i - v) (x) (v_i - v).
    Returns (SelectionResult, DefectField).
    """
    from .selector import assemble_family, select

    pairs = list(pairs)
    if not pairs:
        raise MVError("mv_select needs at least one pair")
    if len(pairs) == 1:
        v, m = pairs[0]
        fam = assemble_family([v], member_ids=member_ids)
        return select(fam, kkt_tol=kkt_tol), m
    defects = [m for _, m in pairs]
    n_m = defects[0].grid.n
    for m in defects[1:]:
        if m.grid.n != n_m or not np.allclose(m.times, defects[0].times,
                                              atol=1e-12):
            raise MVError("defects must share grid and sample times")
    fam = assemble_family([v for v, _ in pairs], member_ids=member_ids)
    result = select(fam, kkt_tol=kkt_tol)
    lam = result.weights.lam
    sel = result.trajectory
    density = np.zeros_like(defects[0].density)
    for k in range(sel.times.size):
        for i, (vi, mi) in enumerate(pairs):
            if lam[i] == 0.0:
                continue
            d = fam.states[i][k] - sel.states[k]
            density[k] += lam[i] * (mi.density[k] + _velocity_tensor(d, n_m))
    combined = DefectField(grid=defects[0].grid, times=defects[0].times,
                           density=density,
                           mollifier_kmax=min(m.mollifier_kmax for m in defects),
                           clip_magnitude=max(m.clip_magnitude for m in defects),
                           provenance="mv selection mixture")
    return result, combined
