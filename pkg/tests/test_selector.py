"""Selection of the minimal time-integrated-energy convex combination."""

import numpy as np
import pytest
from scipy.integrate import simpson

from maxdiss.certificate import ToleranceModel, certify
from maxdiss.fields import Grid, from_function, l2_norm
from maxdiss.relenergy import WeightSpec
from maxdiss.selector import (
    SelectorError,
    SimplexWeights,
    assemble_family,
    continuous_dependence_study,
    kkt_residual,
    objective,
    select,
    simplex_project,
    verify_convex_midpoint,
)
from maxdiss.solver import (
    Forcing,
    SystemSpec,
    TestTrajectory,
    Trajectory,
    solve,
    taylor_green,
)

SERRIN = WeightSpec(kind="serrin", p=4.0)


# -- simplex geometry --------------------------------------------------------

def test_simplex_project_identity_on_feasible():
    lam = np.array([0.2, 0.3, 0.5])
    assert np.abs(simplex_project(lam) - lam).max() <= 1e-15


def test_simplex_project_known_points():
    assert np.abs(simplex_project(np.array([2.0, 0.0])) - [1.0, 0.0]).max() == 0.0
    out = simplex_project(np.array([0.6, 0.6]))
    assert np.abs(out - [0.5, 0.5]).max() <= 1e-15
    big = simplex_project(np.array([5.0, -3.0, 0.1]))
    assert big.min() >= 0.0
    assert big.sum() == pytest.approx(1.0, abs=1e-12)


def test_simplex_weights_validation():
    SimplexWeights(np.array([0.5, 0.5]))
    with pytest.raises(SelectorError):
        SimplexWeights(np.array([0.6, 0.6]))
    with pytest.raises(SelectorError):
        SimplexWeights(np.array([1.1, -0.1]))
    with pytest.raises(SelectorError):
        SimplexWeights(np.array([]))


# -- family assembly ---------------------------------------------------------

def test_single_member_family_gram_is_twice_energy(tg_ladder):
    fam = assemble_family([tg_ladder[0]])
    e = tg_ladder[0].energies()
    assert fam.size == 1
    assert np.abs(fam.gram[:, 0, 0] - 2 * e).max() <= 1e-12 * e[0]


def test_padded_members_near_identical_gram(tg_ladder):
    # decaying-vortex runs at n=16 and n=32 padded to a common grid: all four
    # Gram entries approximate twice the shared energy profile
    fam = assemble_family([tg_ladder[0], tg_ladder[2]])
    assert fam.spec.grid.n == 32
    e2 = 2 * tg_ladder[2].energies()
    for i in range(2):
        for j in range(2):
            assert np.abs(fam.gram[:, i, j] - e2).max() <= 1e-8 * e2[0]


def test_family_rejects_mismatched_viscosity(tg_ladder):
    grid = Grid(16)
    other = solve(SystemSpec(nu=0.1, grid=grid, t_end=0.5, dt=2.5e-3,
                             forcing=Forcing("zero")),
                  taylor_green(0.0, 0.1, grid), sample_stride=10)
    with pytest.raises(SelectorError):
        assemble_family([tg_ladder[0], other])


def test_family_rejects_mismatched_forcing(tg_ladder):
    grid = Grid(16)
    forced = solve(SystemSpec(nu=0.05, grid=grid, t_end=0.5, dt=2.5e-3,
                              forcing=Forcing("analytic", "kolmogorov",
                                              {"amplitude": 0.1,
                                               "wavenumber": 2})),
                   taylor_green(0.0, 0.05, grid), sample_stride=10)
    with pytest.raises(SelectorError):
        assemble_family([tg_ladder[0], forced])


def test_family_rejects_mismatched_initial_data(tg_ladder):
    grid = Grid(16)
    scaled = solve(SystemSpec(nu=0.05, grid=grid, t_end=0.5, dt=2.5e-3,
                              forcing=Forcing("zero")),
                   taylor_green(0.0, 0.05, grid, amplitude=1.2),
                   sample_stride=10)
    with pytest.raises(SelectorError):
        assemble_family([tg_ladder[0], scaled])
    # an explicit loose tolerance admits the pair
    fam = assemble_family([tg_ladder[0], scaled], data_rtol=0.5)
    assert fam.size == 2


def test_family_must_not_be_empty():
    with pytest.raises(SelectorError):
        assemble_family([])


def test_mix_weight_count_mismatch(tg_ladder):
    fam = assemble_family([tg_ladder[0]])
    with pytest.raises(SelectorError):
        fam.mix(SimplexWeights(np.array([0.5, 0.5])))


# -- selection ---------------------------------------------------------------

def test_select_duplicate_members(tg_ladder):
    fam = assemble_family([tg_ladder[2], tg_ladder[2]])
    single = assemble_family([tg_ladder[2]])
    res = select(fam)
    assert res.converged
    assert res.objective == pytest.approx(
        objective(single, np.array([1.0])), rel=1e-12)
    gap = max(l2_norm(a - b) for a, b in
              zip(res.trajectory.states, tg_ladder[2].states))
    assert gap <= 1e-10


def test_select_concentrates_on_lower_energy_member(tg_ladder):
    grid = Grid(16)
    inflated = solve(SystemSpec(nu=0.05, grid=grid, t_end=0.5, dt=2.5e-3,
                                forcing=Forcing("zero")),
                     taylor_green(0.0, 0.05, grid, amplitude=1.2),
                     sample_stride=10)
    fam = assemble_family([tg_ladder[0], inflated], data_rtol=0.5)
    res = select(fam)
    assert res.converged
    assert res.weights.lam[0] >= 0.99
    verts = [objective(fam, np.array([1.0, 0.0])),
             objective(fam, np.array([0.0, 1.0]))]
    assert res.objective <= min(verts) + 1e-12


def _orthogonal_fluctuation_family():
    """Two manufactured members b + w_i with <w_1, w_2> = <b, w_i> = 0."""
    grid = Grid(16)
    spec = SystemSpec(nu=0.1, grid=grid, t_end=1.0, dt=1e-2,
                      forcing=Forcing("zero"))
    b = taylor_green(0.0, 0.1, grid)
    w1 = from_function(grid, lambda x, y: 0.0 * x,
                       lambda x, y: 3 * np.sin(3 * x), solenoidal=True)
    w2 = from_function(grid, lambda x, y: -3 * np.sin(3 * y),
                       lambda x, y: 0.0 * x, solenoidal=True)
    times = np.linspace(0.0, 1.0, 5)
    t1 = Trajectory(spec=spec, times=times, states=[b + 0.5 * w1] * 5)
    t2 = Trajectory(spec=spec, times=times, states=[b + 1.0 * w2] * 5)
    return assemble_family([t1, t2], data_rtol=10.0)


def test_interior_optimum_matches_closed_form():
    fam = _orthogonal_fluctuation_family()
    H = fam.gram_time_integral()
    g11, g12, g22 = H[0, 0], H[0, 1], H[1, 1]
    lam_star = (g22 - g12) / (g11 - 2 * g12 + g22)
    assert 0.0 < lam_star < 1.0
    res = select(fam)
    assert res.converged
    assert res.weights.lam[0] == pytest.approx(lam_star, abs=1e-8)
    # the closed-form optimum is a KKT point to high accuracy
    assert kkt_residual(
        fam, SimplexWeights(np.array([lam_star, 1 - lam_star]))) <= 1e-10


def test_kkt_vertex_not_optimal():
    fam = _orthogonal_fluctuation_family()
    assert kkt_residual(fam, SimplexWeights(np.array([0.0, 1.0]))) > 1e-3


def test_kkt_single_member_always_zero(tg_ladder):
    fam = assemble_family([tg_ladder[0]])
    assert kkt_residual(fam, SimplexWeights(np.array([1.0]))) == 0.0


def test_objective_convex_in_lambda(tg_ladder, rng):
    fam = assemble_family(list(tg_ladder))
    for _ in range(20):
        lam = rng.dirichlet(np.ones(3))
        mu = rng.dirichlet(np.ones(3))
        s = rng.uniform()
        mixed = objective(fam, s * lam + (1 - s) * mu)
        assert mixed <= s * objective(fam, lam) \
            + (1 - s) * objective(fam, mu) + 1e-12


def test_selected_objective_below_vertices(tg_ladder):
    fam = assemble_family(list(tg_ladder))
    res = select(fam)
    assert res.converged and res.kkt_residual <= 1e-6
    for i in range(3):
        vert = np.zeros(3)
        vert[i] = 1.0
        assert res.objective <= objective(fam, vert) + 1e-12


def test_selected_trajectory_unique_across_restarts(tg_ladder, rng):
    fam = assemble_family(list(tg_ladder))
    sols = [select(fam, start=rng.dirichlet(np.ones(3))).trajectory
            for _ in range(2)]
    dist2 = [l2_norm(a - b) ** 2
             for a, b in zip(sols[0].states, sols[1].states)]
    dist = np.sqrt(simpson(np.array(dist2), x=fam.times))
    assert dist <= 1e-8


# -- convexity of the certified set ------------------------------------------

def _tg_certify_fn(nu):
    def fn(traj, budget_scale):
        vt = TestTrajectory.taylor_green(nu, traj.grid)
        tol = ToleranceModel(step_coeff=10.0 * budget_scale,
                             quadrature=budget_scale * 1e-9,
                             gn_slack=budget_scale * 1e-9)
        return certify(traj, [vt], SERRIN, tol_model=tol)
    return fn


def test_midpoint_of_identical_members(tg_ladder):
    fam = assemble_family([tg_ladder[2], tg_ladder[2]])
    fn = _tg_certify_fn(0.05)
    rep = verify_convex_midpoint(fam, fn)
    member = fn(tg_ladder[2], 2.0)
    assert rep.all_pass
    assert rep.worst_margins[0] == pytest.approx(member.worst_margin(),
                                                 rel=1e-10)


def test_midpoint_certifies_with_summed_budget(tg_ladder):
    fam = assemble_family([tg_ladder[0], tg_ladder[2]])
    rep = verify_convex_midpoint(fam, _tg_certify_fn(0.05),
                                 lambdas=[0.0, 0.25, 0.5, 0.75, 1.0])
    assert rep.all_pass
    assert len(rep.worst_margins) == 5


def test_midpoint_needs_two_members(tg_ladder):
    fam = assemble_family([tg_ladder[0]])
    with pytest.raises(SelectorError):
        verify_convex_midpoint(fam, _tg_certify_fn(0.05))


# -- continuous dependence ---------------------------------------------------

def test_continuous_dependence_quadratic_decay():
    nu = 0.1
    grid = Grid(16)
    w = from_function(grid, lambda x, y: np.sin(2 * x) * np.cos(2 * y),
                      lambda x, y: -np.cos(2 * x) * np.sin(2 * y),
                      solenoidal=True)

    def builder(delta):
        spec = SystemSpec(nu=nu, grid=grid, t_end=0.25, dt=2.5e-3,
                          forcing=Forcing("zero"))
        v0 = taylor_green(0.0, nu, grid) + delta * w
        return assemble_family([solve(spec, v0, sample_stride=10)])

    rep = continuous_dependence_study(builder, [1e-1, 5e-2])
    # R scales like delta^2: halving delta divides it by 4, within factor 2
    assert rep.monotone
    assert rep.ratios[0] == pytest.approx(0.25, abs=0.125)
    assert all(d > 0 for d in rep.lowpass_distances)

    rep0 = continuous_dependence_study(builder, [0.0])
    assert rep0.rel_energies[0] <= 1e-14
