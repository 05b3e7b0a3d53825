"""Scenario configuration, execution and report emission.

A scenario ties the flow solver, certifier, selector and the
measure-valued machinery into one reproducible experiment: given a JSON
config and a seed, ``run_scenario`` produces a deterministic artifact tree
(simulations, certificates, selection, optional defect fields) closed by a
manifest of content hashes.  ``report`` reads the stored artifacts only --
it never recomputes -- and emits flat CSV/JSON summaries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificate import CertificateReport, ToleranceModel, certify
from .fields import Grid, SpectralField, from_function, l2_norm, random_field, restrict_to
from .mv_euler import DefectField, defect_from_pair, trace_energy_gap
from .relenergy import ResidualOptions, WeightSpec
from .selector import assemble_family, select
from .solver import (BlowUpError, SystemSpec, TestTrajectory, Trajectory,
                     solve, taylor_green)

SCENARIO_IDS = ("taylor_green", "perturbed_tg", "two_vortex", "euler_tg",
                "mv_ladder")


class ConfigError(ValueError):
    """Schema violation; the message carries a JSON-pointer location."""


def _require(cfg: dict, pointer: str, key: str, types, default=None,
             required: bool = False):
    if key not in cfg:
        if required:
            raise ConfigError(f"{pointer}/{key}: missing required key")
        return default
    val = cfg[key]
    if not isinstance(val, types):
        raise ConfigError(f"{pointer}/{key}: expected {types}, got "
                          f"{type(val).__name__}")
    return val


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario description; see from_dict for the schema."""

    scenario: str
    system: SystemSpec
    weight: WeightSpec
    residual: ResidualOptions
    tolerance: ToleranceModel
    family: dict = field(default_factory=dict)
    tests: tuple = ("exact", "zero")
    selector: dict = field(default_factory=dict)
    mv: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int = 0

    @classmethod
    def from_dict(cls, cfg: dict, out_dir: str | None = None,
                  seed: int | None = None) -> "ScenarioConfig":
        if not isinstance(cfg, dict):
            raise ConfigError("/: config must be a JSON object")
        scenario = _require(cfg, "", "scenario", str, required=True)
        if scenario not in SCENARIO_IDS:
            raise ConfigError(f"/scenario: unknown id {scenario!r}, "
                              f"expected one of {SCENARIO_IDS}")
        system_d = _require(cfg, "", "system", dict, required=True)
        for key in ("nu", "t_end", "dt"):
            _require(system_d, "/system", key, (int, float), required=True)
        _require(system_d, "/system", "n", int, required=True)
        try:
            system = SystemSpec.from_dict(system_d)
        except Exception as exc:
            raise ConfigError(f"/system: {exc}") from exc
        try:
            weight = WeightSpec.from_dict(_require(cfg, "", "weight", dict,
                                                   default={}))
        except Exception as exc:
            raise ConfigError(f"/weight: {exc}") from exc
        residual = ResidualOptions.from_dict(
            _require(cfg, "", "residual", dict, default={}))
        tolerance = ToleranceModel.from_dict(
            _require(cfg, "", "tolerance", dict, default={}))
        family = _require(cfg, "", "family", dict, default={})
        resolutions = _require(family, "/family", "resolutions", list,
                               default=[system.grid.n])
        for i, r in enumerate(resolutions):
            if not isinstance(r, int) or r < 4 or r % 2:
                raise ConfigError(f"/family/resolutions/{i}: need even int "
                                  f">= 4, got {r!r}")
        tests = _require(cfg, "", "tests", list, default=["exact", "zero"])
        for i, t in enumerate(tests):
            if not isinstance(t, str):
                raise ConfigError(f"/tests/{i}: expected string")
        return cls(scenario=scenario, system=system, weight=weight,
                   residual=residual, tolerance=tolerance,
                   family=dict(family, resolutions=list(resolutions)),
                   tests=tuple(tests),
                   selector=_require(cfg, "", "selector", dict, default={}),
                   mv=_require(cfg, "", "mv", dict, default={}),
                   out_dir=out_dir or _require(cfg, "", "out_dir", str,
                                               default="out"),
                   seed=seed if seed is not None
                   else _require(cfg, "", "seed", int, default=0))

    @classmethod
    def from_file(cls, path, out_dir: str | None = None,
                  seed: int | None = None) -> "ScenarioConfig":
        try:
            cfg = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"/: malformed JSON at line {exc.lineno} "
                              f"column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(cfg, out_dir=out_dir, seed=seed)


# -- initial data -----------------------------------------------------------

def initial_condition(config: ScenarioConfig, grid: Grid) -> SpectralField:
    """Scenario initial state at the requested resolution (seeded noise)."""
    nu = config.system.nu
    sc = config.scenario
    if sc in ("taylor_green", "euler_tg", "mv_ladder"):
        return taylor_green(0.0, nu, grid,
                            amplitude=config.family.get("amplitude", 1.0))
    if sc == "perturbed_tg":
        rng = np.random.default_rng(config.seed)
        kmax = config.family.get("kmax", 4)
        delta = config.family.get("delta", 1e-2)
        pert = random_field(grid, rng, kmax=kmax, components=2,
                            solenoidal=True)
        pert = (1.0 / l2_norm(pert)) * pert
        return taylor_green(0.0, nu, grid) + delta * pert
    if sc == "two_vortex":
        # superposed vortex pairs from psi = sin x sin y + 1/2 sin 2x sin 2y
        return from_function(
            grid,
            lambda x, y: np.sin(x) * np.cos(y) + np.sin(2 * x) * np.cos(2 * y),
            lambda x, y: -np.cos(x) * np.sin(y) - np.cos(2 * x) * np.sin(2 * y),
            solenoidal=True)
    raise ConfigError(f"/scenario: unknown id {sc!r}")


def build_tests(config: ScenarioConfig, grid: Grid) -> list:
    """Certificate test family from the config's test id strings.

    Supported ids: "exact" (closed-form decaying vortex matching the
    scenario data where available), "zero", "amplitude:<a>" (rescaled
    vortex).
    """
    nu = config.system.nu
    tests = []
    for tid in config.tests:
        if tid == "zero":
            tests.append(TestTrajectory.zero(grid))
        elif tid == "exact":
            tests.append(TestTrajectory.taylor_green(nu, grid, label="exact"))
        elif tid.startswith("amplitude:"):
            a = float(tid.split(":", 1)[1])
            tests.append(TestTrajectory.taylor_green(
                nu, grid, amplitude=a, label=f"amplitude_{a:g}"))
        else:
            raise ConfigError(f"/tests: unknown test id {tid!r}")
    return tests


# -- stages ------------------------------------------------------------------

def _member_specs(config: ScenarioConfig):
    base = config.system
    if config.scenario == "mv_ladder":
        nus = config.mv.get("nus", [1e-2, 5e-3, 2.5e-3])
        return [(f"nu_{nu:g}",
                 SystemSpec(nu=nu, grid=base.grid, t_end=base.t_end,
                            dt=base.dt, forcing=base.forcing,
                            dealias=base.dealias))
                for nu in nus]
    specs = []
    for n in config.family["resolutions"]:
        dt = config.family.get("dt_by_resolution", {}).get(str(n), base.dt)
        specs.append((f"n_{n}",
                      SystemSpec(nu=base.nu, grid=Grid(n), t_end=base.t_end,
                                 dt=dt, forcing=base.forcing,
                                 dealias=base.dealias)))
    return specs


def stage_simulate(config: ScenarioConfig) -> dict:
    out = Path(config.out_dir) / "sim"
    stride = config.family.get("sample_stride", 1)
    n_max = max(config.family["resolutions"]) if config.scenario != "mv_ladder" \
        else config.system.grid.n
    v0_fine = initial_condition(config, Grid(n_max))
    members = {}
    for mid, spec in _member_specs(config):
        v0 = restrict_to(v0_fine, spec.grid.n) if spec.grid.n < n_max else v0_fine
        traj = solve(spec, v0, sample_stride=stride,
                     provenance=f"{config.scenario}/{mid} seed={config.seed}")
        mdir = out / mid
        traj.save(mdir)
        energies = traj.energies()
        lines = ["# t  energy"]
        lines += [f"{float(t)!r} {float(e)!r}"
                  for t, e in zip(traj.times, energies)]
        (mdir / "energies.csv").write_text("\n".join(lines) + "\n")
        members[mid] = str(mdir)
    return members


def stage_certify(config: ScenarioConfig, members: dict) -> bool:
    out = Path(config.out_dir) / "certificates"
    out.mkdir(parents=True, exist_ok=True)
    all_pass = True
    for mid, mdir in members.items():
        traj = Trajectory.load(mdir)
        tests = build_tests(config, traj.grid)
        report = certify(traj, tests, config.weight, config.residual,
                         config.tolerance)
        report.save_json(out / f"{mid}.json")
        report.save_csv(out / f"{mid}.csv")
        all_pass = all_pass and report.verdict
    return all_pass


def stage_select(config: ScenarioConfig, members: dict) -> dict:
    trajs = [Trajectory.load(d) for d in members.values()]
    fam = assemble_family(trajs, member_ids=tuple(members.keys()))
    result = select(fam,
                    max_iter=config.selector.get("max_iter", 10000),
                    kkt_tol=config.selector.get("kkt_tol", 1e-8))
    summary = result.to_dict(fam)
    out = Path(config.out_dir)
    result.trajectory.save(out / "selected")
    (out / "selection.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def stage_mv(config: ScenarioConfig, members: dict) -> dict:
    ids = list(members.keys())
    fine = Trajectory.load(members[ids[-1]])
    coarse = Trajectory.load(members[ids[0]])
    kmax = config.mv.get("mollifier_kmax")
    m = defect_from_pair(fine, coarse, mollifier_kmax=kmax,
                         clip_fail_ratio=config.mv.get("clip_fail_ratio", 2.0))
    out = Path(config.out_dir) / "defect"
    m.save(out)
    info = {"fine": ids[-1], "coarse": ids[0],
            "mollifier_kmax": m.mollifier_kmax,
            "clip_magnitude": m.clip_magnitude,
            "min_eigenvalue": m.min_eigenvalue(),
            "max_trace_gap": float(trace_energy_gap(m, fine, coarse).max())}
    (out / "summary.json").write_text(json.dumps(info, indent=2) + "\n")
    return info


def _hash_tree(root: Path) -> dict:
    hashes = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            hashes[str(p.relative_to(root))] = hashlib.sha256(
                p.read_bytes()).hexdigest()
    return hashes


def run_scenario(config: ScenarioConfig) -> int:
    """simulate -> certify -> select -> (mv); 0 pass, 2 certificate fail,
    3 blow-up.  Any stage failure halts with a stage-tagged diagnostic."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        members = stage_simulate(config)
    except BlowUpError as exc:
        raise BlowUpError(f"[simulate] {exc}") from exc
    certified = stage_certify(config, members)
    if config.scenario == "mv_ladder":
        # the viscosity-ladder members do not share nu, so the convex
        # selection does not apply; the deliverable is the defect pair
        if len(members) >= 2:
            stage_mv(config, members)
    else:
        stage_select(config, members)
    manifest = {"scenario": config.scenario, "seed": config.seed,
                "system": config.system.to_dict(),
                "weight": config.weight.to_dict(),
                "residual": config.residual.to_dict(),
                "tolerance": config.tolerance.to_dict(),
                "members": sorted(members.keys()),
                "certified": certified,
                "hashes": _hash_tree(out)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0 if certified else 2


# -- reporting ---------------------------------------------------------------

def report(run_dir) -> dict:
    """Emit flat summaries from a completed artifact tree.

    Writes margins.csv (test id, time, lhs, rhs, margin, tol per member),
    energy.csv (time, one column per member) and report.json; reads stored
    values only, and repeated invocations produce identical bytes.
    """
    root = Path(run_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{run_dir}: no manifest.json (incomplete tree)")
    manifest = json.loads(manifest_path.read_text())
    members = manifest["members"]

    energy_rows = {}
    for mid in members:
        path = root / "sim" / mid / "energies.csv"
        if not path.exists():
            raise ConfigError(f"{run_dir}: missing {path.relative_to(root)}")
        for line in path.read_text().splitlines():
            if line.startswith("#"):
                continue
            t, e = line.split()
            energy_rows.setdefault(t, {})[mid] = e
    lines = ["# t " + " ".join(members)]
    for t in sorted(energy_rows, key=float):
        row = energy_rows[t]
        lines.append(t + " " + " ".join(row.get(m, "nan") for m in members))
    (root / "energy.csv").write_text("\n".join(lines) + "\n")

    margin_lines = ["# member test_id t lhs rhs margin tol"]
    worst = None
    for mid in members:
        path = root / "certificates" / f"{mid}.csv"
        if not path.exists():
            raise ConfigError(f"{run_dir}: missing {path.relative_to(root)}")
        for line in path.read_text().splitlines()[1:]:
            parts = line.split(",")
            margin_lines.append(mid + " " + " ".join(parts))
            m = float(parts[4])
            worst = m if worst is None else min(worst, m)
    (root / "margins.csv").write_text("\n".join(margin_lines) + "\n")

    selection = None
    sel_path = root / "selection.json"
    if sel_path.exists():
        selection = json.loads(sel_path.read_text())
    summary = {"scenario": manifest["scenario"], "seed": manifest["seed"],
               "members": members, "certified": manifest["certified"],
               "worst_margin": worst, "selection": selection}
    (root / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
