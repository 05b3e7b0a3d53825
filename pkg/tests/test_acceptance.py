"""Acceptance gate: the eleven end-to-end properties of the toolkit.

Every test prints one PASS/FAIL line; all tolerances are stated inline.
"""

from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import simpson

from maxdiss.certificate import (
    ToleranceModel,
    certify,
    margin,
    mollified_indicator,
    phi_form_value,
    recover_weak_residual,
)
from maxdiss.fields import Grid, from_function, l2_norm, random_field, restrict_to
from maxdiss.mv_euler import (
    DefectField,
    defect_from_pair,
    mv_convex_combine,
    mv_equation_residual,
    trace_energy_gap,
    trace_leakage_bound,
    _velocity_tensor,
)
from maxdiss.relenergy import (
    ResidualOptions,
    WeightSpec,
    euler_negsym_weight,
    rel_dissipation,
    rel_energy,
    serrin_weight,
    trilinear,
)
from maxdiss.selector import assemble_family, continuous_dependence_study, objective, select
from maxdiss.solver import (
    Forcing,
    SystemSpec,
    TestTrajectory,
    Trajectory,
    recover_pressure,
    solve,
    taylor_green,
    taylor_green_pressure,
)

SERRIN = WeightSpec(kind="serrin", p=4.0)


def _emit(capsys, num, desc, ok):
    with capsys.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] acceptance {num}: {desc}")
    return ok


def test_acceptance_01_decaying_vortex_fidelity(tg_reference, capsys):
    traj, elapsed, err = tg_reference
    energies = traj.energies()
    exact = np.pi ** 2 * np.exp(-4 * 0.1 * traj.times)
    e_rel = float(np.abs(energies - exact).max() / exact.min())
    ok = err <= 1e-6 and e_rel <= 1e-6 and elapsed <= 60.0
    _emit(capsys, 1, "decaying-vortex run: max L2 error "
          f"{err:.2e} <= 1e-6, energy {e_rel:.2e} <= 1e-6 rel, "
          f"{elapsed:.1f}s <= 60s", ok)
    assert ok


def test_acceptance_02_weak_strong_certificate(tg_reference, capsys):
    traj, _, _ = tg_reference
    grid = traj.grid
    family = [TestTrajectory.taylor_green(0.1, grid, label="exact"),
              TestTrajectory.zero(grid),
              TestTrajectory.taylor_green(0.1, grid, amplitude=1.05,
                                          label="amplitude_1.05")]
    report = certify(traj, family, SERRIN)
    worst = report.worst_margin()
    ok = report.verdict and worst >= -1e-8
    _emit(capsys, 2, "certificate vs {exact, zero, amplitude-perturbed}: "
          f"worst margin {worst:.2e} >= -1e-8", ok)
    assert ok


def test_acceptance_03_weight_estimate_soundness(capsys):
    # |b(u-v, u-v, v)| <= W(u,v) + K(v) R(u,v), auto constant, d=2, p=4
    grid = Grid(32)
    nu = 0.1
    rng = np.random.default_rng(2024)
    violations = 0
    worst_ratio = 0.0
    for _ in range(1000):
        u = random_field(grid, rng, kmax=8)
        v = random_field(grid, rng, kmax=8)
        lhs = abs(trilinear(u - v, u - v, v))
        rhs = rel_dissipation(u, v, nu) + \
            serrin_weight(v, SERRIN, nu) * rel_energy(u, v)
        worst_ratio = max(worst_ratio, lhs / rhs)
        if lhs > rhs * (1 + 1e-12):
            violations += 1
    ok = violations == 0
    _emit(capsys, 3, "convection bound over 1000 random pairs: "
          f"0 required, {violations} violations (worst ratio "
          f"{worst_ratio:.3f})", ok)
    assert ok


def test_acceptance_04_convex_combinations_certify(tg_ladder, capsys):
    from maxdiss.selector import verify_convex_midpoint

    fam = assemble_family([tg_ladder[0], tg_ladder[2]])

    def certify_fn(traj, budget_scale):
        vt = TestTrajectory.taylor_green(0.05, traj.grid)
        tol = ToleranceModel(step_coeff=10.0 * budget_scale,
                             quadrature=budget_scale * 1e-9,
                             gn_slack=budget_scale * 1e-9)
        return certify(traj, [vt], SERRIN, tol_model=tol)

    rep = verify_convex_midpoint(fam, certify_fn,
                                 lambdas=list(np.linspace(0.0, 1.0, 11)))
    failures = sum(not v for v in rep.verdicts)
    ok = failures == 0
    _emit(capsys, 4, "11-point convex sweep of two certified members: "
          f"{failures} failures (worst margin {min(rep.worst_margins):.2e})",
          ok)
    assert ok


def test_acceptance_05_selection_well_posed(tg_ladder, capsys):
    fam = assemble_family(list(tg_ladder))
    res = select(fam)
    vertex_ok = all(
        res.objective <= objective(fam, np.eye(3)[i]) + 1e-12
        for i in range(3))
    rng = np.random.default_rng(11)
    sols = [select(fam, start=rng.dirichlet(np.ones(3))).trajectory
            for _ in range(2)]
    dist2 = [l2_norm(a - b) ** 2
             for a, b in zip(sols[0].states, sols[1].states)]
    dist = float(np.sqrt(simpson(np.array(dist2), x=fam.times)))
    ok = res.kkt_residual <= 1e-6 and vertex_ok and dist <= 1e-8
    _emit(capsys, 5, "3-member ladder selection: KKT "
          f"{res.kkt_residual:.2e} <= 1e-6, objective below vertices, "
          f"restart distance {dist:.2e} <= 1e-8", ok)
    assert ok


def test_acceptance_06_continuous_dependence(capsys):
    nu = 0.1
    n_max = 24
    rng = np.random.default_rng(3)
    pert = random_field(Grid(n_max), rng, kmax=4, components=2,
                        solenoidal=True)
    pert = (1.0 / l2_norm(pert)) * pert

    def builder(delta):
        v0 = taylor_green(0.0, nu, Grid(n_max)) + delta * pert
        members = []
        for n in (16, n_max):
            spec = SystemSpec(nu=nu, grid=Grid(n), t_end=0.25, dt=2.5e-3,
                              forcing=Forcing("zero"))
            members.append(solve(spec, restrict_to(v0, n) if n < n_max else v0,
                                 sample_stride=10))
        return assemble_family(members)

    rep = continuous_dependence_study(builder, [1e-1, 1e-2, 1e-3])
    # quadratic scaling: each delta-decade drops R by 100, within factor 2
    ratio_ok = all(0.005 <= r <= 0.02 for r in rep.ratios)
    ok = rep.monotone and ratio_ok
    _emit(capsys, 6, "perturbation decades 1e-1..1e-3: relative-energy "
          f"ratios {[f'{r:.4f}' for r in rep.ratios]} in [1/200, 1/50]", ok)
    assert ok


def test_acceptance_07_euler_invariants(capsys):
    grid = Grid(32)
    spec = SystemSpec(nu=0.0, grid=grid, t_end=1.0, dt=2.5e-3,
                      forcing=Forcing("zero"))
    traj = solve(spec, taylor_green(0.0, 0.0, grid), sample_stride=40)
    energies = traj.energies()
    drift = float(np.abs(energies - energies[0]).max())

    rot = from_function(grid, lambda x, y: -np.sin(y),
                        lambda x, y: np.sin(x), solenoidal=True)
    w_rot = euler_negsym_weight(rot)

    report = certify(traj, [TestTrajectory.taylor_green(0.0, grid,
                                                        label="steady")],
                     WeightSpec(kind="euler_negsym"))
    worst = report.worst_margin()
    ok = drift <= 1e-8 and w_rot <= 1e-12 and report.verdict \
        and worst >= -1e-8
    _emit(capsys, 7, f"inviscid invariants: energy drift {drift:.2e} <= 1e-8,"
          f" rotation-field weight {w_rot:.2e} <= 1e-12, steady certificate "
          f"margin {worst:.2e} >= -1e-8", ok)
    assert ok


def test_acceptance_08_residual_recovery(tg_reference, capsys):
    traj, _, _ = tg_reference
    # inject a forcing mismatch: the stored states solve the unforced system
    kol = Forcing("analytic", "kolmogorov",
                  {"amplitude": 0.3, "wavenumber": 2})
    mismatched = Trajectory(spec=replace(traj.spec, forcing=kol),
                            times=traj.times, states=traj.states,
                            provenance="forcing mismatch")
    rng = np.random.default_rng(0)
    r = random_field(traj.grid, rng, kmax=3, components=2, solenoidal=True)
    rec = recover_weak_residual(mismatched, r, [1e-3, 2e-3, -1e-3, -2e-3],
                                SERRIN)
    rel = abs(rec.linear_coefficient - rec.direct_pairing) \
        / abs(rec.direct_pairing)
    ok = rel <= 1e-4
    _emit(capsys, 8, "weighted residual pairing from finite-amplitude "
          f"margins: relative error {rel:.2e} <= 1e-4", ok)
    assert ok


def test_acceptance_09_measure_valued_identities(capsys):
    # (a) the convex-combination formula keeps the equation residual affine
    grid = Grid(16)
    times = np.linspace(0.0, 1.0, 5)
    spec = SystemSpec(nu=0.0, grid=grid, t_end=1.0, dt=0.1,
                      forcing=Forcing("zero"))
    rng = np.random.default_rng(9)
    w = random_field(grid, rng, kmax=3, components=2, solenoidal=True)
    v1 = Trajectory(spec=spec, times=times,
                    states=[taylor_green(0.0, 0.0, grid)] * 5)
    v2 = Trajectory(spec=spec, times=times, states=[w] * 5)
    z = DefectField.zero(grid, times)
    psi = taylor_green(0.0, 0.0, grid)
    phi = TestTrajectory.analytic(lambda t: (1 - t) * psi,
                                  lambda t: -1.0 * psi, grid,
                                  solenoidal=True, label="phi")
    lam = 0.35
    vc, mc = mv_convex_combine(v1, z, v2, z, lam)
    r1 = mv_equation_residual(v1, z, Forcing("zero"), [phi])["phi"]
    r2 = mv_equation_residual(v2, z, Forcing("zero"), [phi])["phi"]
    rc = mv_equation_residual(vc, mc, Forcing("zero"), [phi])["phi"]
    affine_err = abs(rc - (lam * r1 + (1 - lam) * r2))
    min_eig = mc.min_eigenvalue()

    # (b) viscosity-ladder pair: defect trace tracks the energy gap within
    # the reported low-pass leakage
    g32 = Grid(32)
    r0 = random_field(g32, rng, kmax=8, components=2, solenoidal=True)
    v0 = taylor_green(0.0, 1e-2, g32) + (0.5 / l2_norm(r0)) * r0
    runs = [solve(SystemSpec(nu=nu, grid=g32, t_end=0.5, dt=2.5e-3,
                             forcing=Forcing("zero")), v0, sample_stride=20)
            for nu in (1e-2, 5e-3)]
    m = defect_from_pair(runs[1], runs[0], clip_fail_ratio=2.0)
    gap = float(trace_energy_gap(m, runs[1], runs[0]).max())
    bound = trace_leakage_bound(m)

    ok = affine_err <= 1e-10 and min_eig >= -1e-12 and gap <= bound
    _emit(capsys, 9, f"defect identities: residual affinity {affine_err:.1e}"
          f" <= 1e-10, combined min eigenvalue {min_eig:.1e} >= -1e-12, "
          f"ladder trace gap {gap:.2e} <= reported leakage {bound:.2e}", ok)
    assert ok


def test_acceptance_10_pressure_recovery(capsys):
    nu, t = 0.1, 0.25
    grid = Grid(32)
    v = taylor_green(t, nu, grid)
    p = recover_pressure(v)
    err = l2_norm(p - taylor_green_pressure(t, nu, grid))
    mean = abs(p.coeffs[0, 0, 0])
    ok = err <= 1e-10 and mean <= 1e-14
    _emit(capsys, 10, f"pressure recovery: L2 error {err:.2e} <= 1e-10, "
          f"mean {mean:.2e} <= 1e-14", ok)
    assert ok


def test_acceptance_11_multiplier_form_convergence(tg_reference, capsys):
    traj, _, _ = tg_reference
    vt = TestTrajectory.zero(traj.grid)
    t_star = 0.5
    limit = -margin(traj, vt, t_star, SERRIN)
    gaps = [abs(phi_form_value(traj, vt, SERRIN, ResidualOptions(),
                               mollified_indicator(t_star, width)) - limit)
            for width in (0.2, 0.1)]
    ratio = gaps[0] / gaps[1]
    ok = 1.0 <= ratio <= 4.0
    _emit(capsys, 11, "mollified-indicator form: width halving shrinks the "
          f"gap by {ratio:.2f}x (required 2x +- factor 2)", ok)
    assert ok
