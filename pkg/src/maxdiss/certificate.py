"""Evaluation of the Gronwall-weighted relative energy inequality.

A trajectory is certified against a finite family of C^1 test
trajectories: for each test function and sample time the two sides of the
inequality are computed by composite Simpson quadrature on the sample
grid, and the verdict compares the margin (rhs - lhs) against an explicit
tolerance budget.  Verdicts are always relative to the supplied family.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .fields import SpectralField, h_minus1_norm, inner, l2_norm, leray_project
from .relenergy import (
    ResidualOptions,
    WeightError,
    WeightSpec,
    cumulative_weight_integral,
    nonsolenoidal_correction,
    rel_dissipation,
    rel_energy,
    residual_A,
    weight_value,
)
from .solver import Forcing, TestTrajectory, Trajectory


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class ToleranceModel:
    """tau(t) = step_coeff * dt^4 * t + quadrature + gn_slack.

    The three components absorb, in order, the O(dt^4) defect of the time
    stepper's discrete energy identity, the Simpson quadrature error of the
    time integrals, and the conservatism of the calibrated
    Gagliardo-Nirenberg constant.  Calibrated on the Taylor-Green scenario.
    """

    step_coeff: float = 10.0
    quadrature: float = 1e-9
    gn_slack: float = 1e-9

    def tau(self, t: float, dt: float) -> float:
        return self.step_coeff * dt ** 4 * t + self.quadrature + self.gn_slack

    def to_dict(self) -> dict:
        return {"step_coeff": self.step_coeff, "quadrature": self.quadrature,
                "gn_slack": self.gn_slack}

    @classmethod
    def from_dict(cls, d: dict) -> "ToleranceModel":
        return cls(step_coeff=d.get("step_coeff", 10.0),
                   quadrature=d.get("quadrature", 1e-9),
                   gn_slack=d.get("gn_slack", 1e-9))


@dataclass(frozen=True)
class CertificateEntry:
    test_id: str
    t: float
    lhs: float
    rhs: float
    margin: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.margin >= -self.tol


@dataclass(frozen=True)
class CertificateReport:
    entries: tuple
    errors: dict
    weight: WeightSpec
    options: ResidualOptions
    tolerance: ToleranceModel
    stride: float

    @property
    def verdict(self) -> bool:
        return not self.errors and all(e.passed for e in self.entries)

    def worst_margin(self) -> float:
        return min((e.margin for e in self.entries), default=np.inf)

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.verdict else "fail",
            "entries": [{"test_id": e.test_id, "t": e.t, "lhs": e.lhs,
                         "rhs": e.rhs, "margin": e.margin, "tol": e.tol}
                        for e in self.entries],
            "errors": dict(self.errors),
            "config": {"weight": self.weight.to_dict(),
                       "residual": self.options.to_dict(),
                       "tolerance": self.tolerance.to_dict(),
                       "quadrature_stride": self.stride},
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["test_id", "t", "lhs", "rhs", "margin", "tol"])
            for e in self.entries:
                wr.writerow([e.test_id, f"{e.t:.12g}", f"{e.lhs:.17g}",
                             f"{e.rhs:.17g}", f"{e.margin:.17g}", f"{e.tol:.12g}"])


# -- margin computation -----------------------------------------------------

@dataclass(frozen=True)
class _MarginSeries:
    """Damped form of the relative energy inequality at every sample time.

    The raw inequality carries growth factors exp(int_s^t K) that overflow
    float64 for conservative auto constants, so both sides are scaled by
    exp(-int_0^t K) > 0.  The scaling preserves sign, so verdicts are
    unchanged; all Gronwall weights then lie in (0, 1].
    """

    times: np.ndarray
    rel_energies: np.ndarray     # R(u(t)|v(t)), unscaled
    weight_integral: np.ndarray  # I(t) = int_0^t K
    dissipation_term: np.ndarray  # C(t) = int_0^t (W + <A, u-v>) e^{-I(s)} ds
    correction_term: np.ndarray
    margins: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


def _projected_view(vt: TestTrajectory) -> TestTrajectory:
    return TestTrajectory(vt.kind,
                          lambda t: leray_project(vt.value(t)),
                          lambda t: leray_project(vt.deriv(t)),
                          vt.grid, solenoidal=True, label=vt.label + "|P")


def margin_series(u: Trajectory, vt: TestTrajectory, w: WeightSpec,
                  opts: ResidualOptions = ResidualOptions()) -> _MarginSeries:
    """Both sides of the relative energy inequality at every sample time."""
    if vt.grid.n != u.grid.n:
        raise CertificateError(
            f"grid mismatch: trajectory n={u.grid.n}, test n={vt.grid.n}")
    nu = u.spec.nu
    times = u.times
    use_correction = opts.nonsolenoidal_correction and not vt.solenoidal
    if not use_correction and not vt.solenoidal:
        raise CertificateError(
            f"test trajectory {vt.label!r} is not solenoidal; enable the "
            "divergence correction to certify against it")
    test = _projected_view(vt) if use_correction else vt

    values = [test.value(t) for t in times]
    K = np.array([weight_value(v, w, nu) for v in values])
    I = cumulative_weight_integral(K, times)

    R = np.array([rel_energy(s, v) for s, v in zip(u.states, values)])
    g = np.empty(times.size)
    corr = np.zeros(times.size)
    for i, t in enumerate(times):
        a = residual_A(test, t, u.spec, opts)
        diff = u.states[i] - values[i]
        g[i] = rel_dissipation(u.states[i], values[i], nu) + inner(a, diff)
        if use_correction:
            corr[i] = nonsolenoidal_correction(vt, t, u.states[i])

    damp = np.exp(-I)
    C = cumulative_simpson(g * damp, x=times, initial=0.0) if times.size > 1 \
        else np.zeros(1)
    Corr = cumulative_simpson(corr * damp, x=times, initial=0.0) if times.size > 1 \
        else np.zeros(1)

    lhs = damp * R + C
    rhs = R[0] + Corr
    return _MarginSeries(times=times, rel_energies=R, weight_integral=I,
                         dissipation_term=C, correction_term=Corr,
                         margins=rhs - lhs, lhs=lhs, rhs=rhs)


def margin(u: Trajectory, vt: TestTrajectory, t: float, w: WeightSpec,
           opts: ResidualOptions = ResidualOptions()) -> float:
    """rhs - lhs of the damped relative energy inequality at sample time t."""
    series = margin_series(u, vt, w, opts)
    return float(series.margins[u.index_of(t)])


def certify(u: Trajectory, family, w: WeightSpec,
            opts: ResidualOptions = ResidualOptions(),
            tol_model: ToleranceModel = ToleranceModel()) -> CertificateReport:
    """Certify a trajectory against a family of test trajectories.

    Failures of single family members are isolated: their error string is
    recorded and the remaining members are still evaluated (an errored
    member fails the overall verdict).
    """
    family = list(family)
    if not family:
        raise CertificateError("test family must not be empty")
    dt = u.spec.dt
    entries = []
    errors = {}
    for idx, vt in enumerate(family):
        test_id = vt.label or f"test_{idx}"
        try:
            series = margin_series(u, vt, w, opts)
        except Exception as exc:  # noqa: BLE001 - per-entry isolation
            errors[test_id] = f"{type(exc).__name__}: {exc}"
            continue
        for t, lhs, rhs, m in zip(series.times, series.lhs, series.rhs,
                                  series.margins):
            entries.append(CertificateEntry(test_id=test_id, t=float(t),
                                            lhs=float(lhs), rhs=float(rhs),
                                            margin=float(m),
                                            tol=tol_model.tau(float(t), dt)))
    stride = float(u.times[1] - u.times[0]) if u.times.size > 1 else 0.0
    return CertificateReport(entries=tuple(entries), errors=errors, weight=w,
                             options=opts, tolerance=tol_model, stride=stride)


# -- Lagrange-multiplier (phi) form -----------------------------------------

@dataclass(frozen=True)
class PhiWeight:
    """Admissible multiplier: phi >= 0, phi' <= 0, phi(0) = 1, phi(T) = 0."""

    value: object  # callable t -> phi(t)
    deriv: object  # callable t -> phi'(t)
    label: str = "phi"

    def validate(self, times: np.ndarray) -> None:
        p = np.array([self.value(t) for t in times])
        dp = np.array([self.deriv(t) for t in times])
        T = times[-1]
        if abs(self.value(0.0) - 1.0) > 1e-12:
            raise CertificateError(f"{self.label}: phi(0) != 1")
        if abs(self.value(T)) > 1e-12:
            raise CertificateError(f"{self.label}: phi(T) != 0")
        if p.min() < -1e-12 or dp.max() > 1e-10:
            raise CertificateError(f"{self.label}: phi must be >= 0 with phi' <= 0")


def mollified_indicator(t_star: float, width: float, label: str = "") -> PhiWeight:
    """C^1 cubic smoothstep approximation of the indicator of [0, t_star]."""
    if width <= 0:
        raise CertificateError("mollification width must be positive")

    def value(t):
        if t <= t_star:
            return 1.0
        if t >= t_star + width:
            return 0.0
        x = (t - t_star) / width
        return 1.0 - (3 * x * x - 2 * x ** 3)

    def deriv(t):
        if t <= t_star or t >= t_star + width:
            return 0.0
        x = (t - t_star) / width
        return -(6 * x - 6 * x * x) / width

    return PhiWeight(value, deriv, label or f"indicator[0,{t_star:g}]+{width:g}")


def linear_ramp(T: float) -> PhiWeight:
    return PhiWeight(lambda t: 1.0 - t / T, lambda t: -1.0 / T, f"ramp(T={T:g})")


def phi_form_value(u: Trajectory, vt: TestTrajectory, w: WeightSpec,
                   opts: ResidualOptions, phi: PhiWeight) -> float:
    """Value of the phi-weighted inequality form; <= 0 for dissipative u."""
    phi.validate(u.times)
    series = margin_series(u, vt, w, opts)
    times = series.times
    p = np.array([phi.value(t) for t in times])
    dp = np.array([phi.deriv(t) for t in times])
    damp = np.exp(-series.weight_integral)
    g_damped = _sampled_integrand(u, vt, w, opts, series)
    term1 = -simpson(dp * series.rel_energies * damp, x=times)
    term2 = -phi.value(0.0) * series.rel_energies[0]
    term3 = simpson(p * g_damped, x=times)
    corr = simpson(p * _sampled_correction(series, times), x=times)
    return float(term1 + term2 + term3 - corr)


def _sampled_integrand(u, vt, w, opts, series) -> np.ndarray:
    nu = u.spec.nu
    use_correction = opts.nonsolenoidal_correction and not vt.solenoidal
    test = _projected_view(vt) if use_correction else vt
    damp = np.exp(-series.weight_integral)
    g = np.empty(series.times.size)
    for i, t in enumerate(series.times):
        v = test.value(t)
        a = residual_A(test, t, u.spec, opts)
        diff = u.states[i] - v
        g[i] = rel_dissipation(u.states[i], v, nu) + inner(a, diff)
    return g * damp


def _sampled_correction(series, times) -> np.ndarray:
    # derivative of the cumulative correction integral is its damped integrand;
    # recover it from the stored cumulative values only when nonzero
    if not np.any(series.correction_term):
        return np.zeros_like(times)
    return np.gradient(series.correction_term, times)


def phi_form_check(u: Trajectory, vt: TestTrajectory, w: WeightSpec,
                   opts: ResidualOptions, phis) -> float:
    """Worst (largest) phi-form value over a list of admissible multipliers."""
    phis = list(phis)
    if not phis:
        raise CertificateError("need at least one multiplier")
    return max(phi_form_value(u, vt, w, opts, phi) for phi in phis)


# -- weak residual recovery -------------------------------------------------

@dataclass(frozen=True)
class ResidualRecovery:
    alphas: tuple
    margins: tuple
    linear_coefficient: float   # fitted d margin / d alpha at alpha = 0
    direct_pairing: float       # int_0^t <A(u), r> e^{int_s^t K} ds
    quadratic_coefficient: float


def recover_weak_residual(u: Trajectory, r: SpectralField, alphas,
                          w: WeightSpec,
                          opts: ResidualOptions = ResidualOptions(),
                          t: float | None = None) -> ResidualRecovery:
    """Extract the weighted residual pairing from finite-alpha margins.

    Splines u into its own test trajectory, perturbs it by alpha*r, and
    fits margin(alpha) = c1*alpha + c2*alpha^2; c1 estimates the
    Gronwall-weighted residual pairing, checked against direct quadrature.
    """
    alphas = np.asarray(list(alphas), dtype=float)
    if alphas.size < 2 or np.any(alphas == 0):
        raise CertificateError("need >= 2 nonzero perturbation amplitudes")
    if not r.solenoidal:
        raise CertificateError("perturbation field must be solenoidal")
    if t is None:
        t = float(u.times[-1])
    base = TestTrajectory.from_trajectory(u, label="self-spline")
    i_t = u.index_of(t)

    margins = []
    for a in alphas:
        vt = TestTrajectory.perturbed(base, r, a)
        series = margin_series(u, vt, w, opts)
        margins.append(float(series.margins[i_t]))
    margins = np.array(margins)

    # least-squares fit margin = c0 + c1 a + c2 a^2 (c0 absorbs spline noise)
    A = np.stack([np.ones_like(alphas), alphas, alphas ** 2], axis=1)
    sol, *_ = np.linalg.lstsq(A, margins, rcond=None)
    if not np.all(np.isfinite(sol)):
        raise CertificateError("degenerate least-squares fit")

    # direct quadrature of the same weighted pairing along the spline
    times = u.times[:i_t + 1]
    K = np.array([weight_value(base.value(s), w, u.spec.nu) for s in times])
    I = cumulative_weight_integral(K, times)
    pair = np.array([inner(residual_A(base, s, u.spec, opts), r) for s in times])
    direct = float(simpson(pair * np.exp(-I), x=times)) if times.size > 1 else 0.0

    return ResidualRecovery(alphas=tuple(alphas), margins=tuple(margins),
                            linear_coefficient=float(sol[1]),
                            direct_pairing=direct,
                            quadratic_coefficient=float(sol[2]))


# -- weak-strong stability bound --------------------------------------------

@dataclass(frozen=True)
class WeakStrongReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    variant: str
    tol: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + self.tol))


def weak_strong_gap(u1: Trajectory, v_strong: TestTrajectory, f1: Forcing,
                    f: Forcing, w: WeightSpec, tol: float = 1e-8) -> WeakStrongReport:
    """Stability bound of a dissipative trajectory against a strong solution.

    Navier-Stokes (nu > 0): R + 1/2 int W e^K <= R0 e^K + (1/nu) int
    ||f - f1||_{H^-1}^2 e^K.  Euler (nu = 0): weight K + 1 and an L2
    forcing difference with prefactor 1/2.
    """
    nu = u1.spec.nu
    times = u1.times
    grid = u1.grid
    values = [v_strong.value(t) for t in times]
    K = np.array([weight_value(v, w, nu) for v in values])
    if nu == 0:
        K = K + 1.0
        variant = "euler"
    else:
        variant = "navier-stokes"
    I = cumulative_weight_integral(K, times)
    R = np.array([rel_energy(s, v) for s, v in zip(u1.states, values)])

    df = [f(t, grid) - f1(t, grid) for t in times]
    if variant == "navier-stokes":
        if w.kind != "serrin":
            raise WeightError("Navier-Stokes weak-strong gap expects the Serrin weight")
        force = np.array([h_minus1_norm(d) ** 2 for d in df]) / nu
        W = np.array([rel_dissipation(s, v, nu)
                      for s, v in zip(u1.states, values)])
    else:
        force = 0.5 * np.array([l2_norm(d) ** 2 for d in df])
        W = np.zeros_like(times)

    # damped form, as in margin_series: both sides scaled by exp(-I(t))
    damp = np.exp(-I)
    diss = cumulative_simpson(W * damp, x=times, initial=0.0) \
        if times.size > 1 else np.zeros(1)
    inflow = cumulative_simpson(force * damp, x=times, initial=0.0) \
        if times.size > 1 else np.zeros(1)

    lhs = damp * R + 0.5 * diss
    rhs = R[0] + inflow
    return WeakStrongReport(times=times, lhs=lhs, rhs=rhs, variant=variant, tol=tol)
