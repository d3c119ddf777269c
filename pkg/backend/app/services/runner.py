"""
Scenario execution: compile, add noise, propagate, analyse and write tables.
"""
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import AdiabaticError, ScenarioError, UnknownParameterError
from app.core.monitoring import record_trajectories
from app.schemas.scenario import GapSpec, PathSpec, Scenario, StateSpec
from app.services.analysis import (
    DecompositionReport,
    decompose,
    dynamic_phases,
    perfect_transfer_phase,
    u_adia,
    u_adia_at_time,
)
from app.services.noise import EnsembleResult, apply_traces, monte_carlo, sample_trace
from app.services.paths import AdiabaticPath, general_geodesic, latitude_path, lz_path, xy_geodesic
from app.services.propagate import Trajectory, evolve_state, propagate
from app.services.qcore import PureState, basis_state, fidelity, mhz_2pi
from app.services.scenarios import get_scenario
from app.services.schedules import (
    Constant,
    Crossing,
    DriveTimeline,
    GapSchedule,
    Modulated,
    Vanishing,
    back_forth,
    compensate,
    compile_continuous,
    compile_hybrid,
    compile_idle,
    compile_jumping,
)

logger = logging.getLogger(__name__)

SWEEPABLES = ["T", "N", "r_jump", "rel_std", "a", "theta_g", "k"]
FLOAT_FORMAT = "%.17g"
GAP_COLUMNS = ["t_s", "lambda", "gap_rad_s"]

def scenario_hash(scenario: Scenario) -> str:
    canonical = json.dumps(scenario.dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

def parse_scenario(data: Dict[str, object]) -> Scenario:
    try:
        return Scenario.parse_obj(data)
    except ValidationError as e:
        raise ScenarioError(
            "Scenario failed validation",
            details={"errors": [
                {"loc": [str(part) for part in err["loc"]], "msg": err["msg"]} for err in e.errors()
            ]}
        )

def load_scenario(reference: Union[str, Path]) -> Scenario:
    """A builtin name or a path to a scenario JSON file."""
    candidate = Path(reference)
    if candidate.suffix == ".json" or candidate.is_file():
        try:
            data = json.loads(candidate.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ScenarioError(
                f"Cannot read scenario file {str(candidate)!r}",
                details={"file": str(candidate), "reason": str(e)}
            )
        if not isinstance(data, dict):
            raise ScenarioError("Scenario file must hold a JSON object", details={"file": str(candidate)})
        return parse_scenario(data)
    return get_scenario(str(reference))

def build_state(spec: StateSpec) -> PureState:
    if isinstance(spec, str):
        return basis_state(spec)
    return PureState.from_amplitudes([complex(re, im) for re, im in spec])

def state_label(spec: StateSpec, index: int) -> str:
    if isinstance(spec, str):
        return spec
    return f"state{index}"

def _file_label(label: str) -> str:
    return label.replace("-", "m")

def build_path(spec: PathSpec) -> AdiabaticPath:
    if spec.kind == "xy":
        return xy_geodesic(spec.theta_g)
    if spec.kind == "latitude":
        return latitude_path(spec.theta, spec.theta_g)
    if spec.kind == "lz":
        return lz_path(mhz_2pi(spec.delta_mhz), spec.theta_g)
    if spec.start is None or spec.end is None:
        raise ScenarioError("Geodesic paths need start and end states", details={"path": spec.kind})
    return general_geodesic(build_state(spec.start), build_state(spec.end))

def build_gap(spec: Optional[GapSpec]) -> Optional[GapSchedule]:
    if spec is None:
        return None
    omega0 = mhz_2pi(spec.omega0_mhz)
    if spec.kind == "constant":
        return Constant(omega0)
    if spec.kind == "modulated":
        return Modulated(omega0)
    if spec.kind == "crossing":
        return Crossing(omega0, spec.a)
    return Vanishing()

def _pass_time(scenario: Scenario) -> Optional[float]:
    proto = scenario.protocol
    if proto.T_us is not None:
        return proto.T_us * 1e-6
    if proto.phi is None and proto.k is None:
        return None
    gap = scenario.gap
    if gap is None or gap.kind != "constant":
        raise ScenarioError("phi and k need a constant gap", details={"scenario": scenario.name})
    phi = proto.phi if proto.k is None else perfect_transfer_phase(scenario.path.theta_g, proto.k)
    return phi / mhz_2pi(gap.omega0_mhz)

def compile_pass(scenario: Scenario, path: AdiabaticPath) -> DriveTimeline:
    """Timeline of one half path, before repeats and compensation."""
    proto = scenario.protocol
    gap = build_gap(scenario.gap)
    omega0 = mhz_2pi(scenario.gap.omega0_mhz) if scenario.gap is not None else None
    T = _pass_time(scenario)

    if proto.kind == "jumping":
        if T is not None:
            raise ScenarioError(
                "The jumping duration is fixed by N and Ω0",
                details={"scenario": scenario.name}
            )
        return compile_jumping(path, omega0, proto.N)
    if proto.kind == "hybrid":
        return compile_hybrid(path, omega0, proto.N, proto.r_jump, T)
    if T is None:
        raise ScenarioError(
            f"A {proto.kind} protocol needs T_us, phi or k",
            details={"scenario": scenario.name}
        )
    if proto.kind == "idle":
        return compile_idle(path, proto.idle_lambda, T)
    return compile_continuous(path, gap, T, proto.lambda_clip)

def _deterministic_noise(scenario: Scenario):
    return [m for m in scenario.noise if m.kind == "bias_amplitude"]

def _stochastic_noise(scenario: Scenario):
    return [m for m in scenario.noise if m.kind != "bias_amplitude"]

def single_pass(scenario: Scenario, path: AdiabaticPath) -> DriveTimeline:
    """One half path with the deterministic amplitude bias folded in."""
    single = compile_pass(scenario, path)
    bias = _deterministic_noise(scenario)
    if bias:
        single = apply_traces(
            single,
            [sample_trace(m, single.total_time, scenario.seed, k) for k, m in enumerate(bias)],
        )
    return single

def _assemble(scenario: Scenario, single: DriveTimeline) -> DriveTimeline:
    timeline = back_forth(single, scenario.protocol.repeats)
    if scenario.protocol.compensate:
        omega0 = mhz_2pi(scenario.gap.omega0_mhz) if scenario.gap is not None else None
        timeline = compensate(timeline, omega0)
    return timeline

def compile_scenario(scenario: Scenario, path: Optional[AdiabaticPath] = None) -> DriveTimeline:
    """Full noise-free timeline including repeats and compensation."""
    path = path or build_path(scenario.path)
    return _assemble(scenario, single_pass(scenario, path))

@dataclass
class StateResult:
    label: str
    psi0: PureState
    trajectory: pd.DataFrame
    final_fidelity: float
    target_fidelity: float
    eigenstate_fidelity: float
    pass_fidelities: List[float]
    ensemble: Optional[EnsembleResult] = None

    def summary(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "final_fidelity": self.final_fidelity,
            "target_fidelity": self.target_fidelity,
            "eigenstate_fidelity": self.eigenstate_fidelity,
            "pass_fidelities": self.pass_fidelities,
        }
        if self.ensemble is not None:
            out["ensemble"] = self.ensemble.summary()
        return out

@dataclass
class RunResult:
    scenario: Scenario
    timeline: DriveTimeline
    report: DecompositionReport
    states: List[StateResult]
    provenance: Dict[str, object] = field(default_factory=dict)

    @property
    def final_fidelity(self) -> float:
        return min(s.final_fidelity for s in self.states)

    def fidelity(self, label: str) -> float:
        for state in self.states:
            if state.label == label:
                return state.final_fidelity
        raise ScenarioError(f"No initial state {label!r} in this run", details={"states": [s.label for s in self.states]})

    def summary(self) -> Dict[str, object]:
        return {
            "scenario": self.scenario.name,
            "final_fidelity": self.final_fidelity,
            "epsilon_max": self.report.epsilon_max,
            "deviation_norm": self.report.deviation_norm,
            "ode_residual": self.report.ode_residual,
            "bound": {
                "lhs": self.report.bound_lhs,
                "rhs": self.report.bound_rhs,
                "holds": self.report.bound_holds,
            },
            "total_time_s": self.timeline.total_time,
            "states": {s.label: s.summary() for s in self.states},
            "provenance": self.provenance,
        }

def _pass_fidelities(single: DriveTimeline, repeats: int, psi0: PureState) -> List[float]:
    """Fidelity to the adiabatic target at the end of every half path."""
    path = single.path
    forward = propagate(single)
    backward = propagate(single.reversed()) if repeats > 1 else None
    state = psi0
    out = []
    for k in range(1, repeats + 1):
        state = state.evolve(forward if k % 2 else backward)
        prefix = back_forth(single, k)
        target = psi0.evolve(u_adia(path, dynamic_phases(prefix), 1.0))
        out.append(fidelity(state, target))
    return out

def _trajectory_frame(trajectory: Trajectory, timeline: DriveTimeline, psi0: PureState) -> pd.DataFrame:
    frame = trajectory.to_frame()
    frame["fid_target"] = [
        fidelity(s.state, psi0.evolve(u_adia_at_time(timeline, s.t))) for s in trajectory.samples
    ]
    return frame

def run(scenario: Union[Scenario, str], seed: Optional[int] = None) -> RunResult:
    """Execute one scenario; deterministic given its seed."""
    if isinstance(scenario, str):
        scenario = load_scenario(scenario)
    seed = scenario.seed if seed is None else seed
    if seed < 0:
        raise ScenarioError("Seeds must be non-negative", details={"seed": seed})
    if seed != scenario.seed:
        scenario = scenario.copy(update={"seed": seed})
    started = time.perf_counter()
    logger.info("Scenario run started", extra={"scenario": scenario.name, "seed": seed})

    try:
        path = build_path(scenario.path)
        single = single_pass(scenario, path)
        timeline = _assemble(scenario, single)
        U = propagate(timeline)
        report = decompose(timeline, U)
        stochastic = _stochastic_noise(scenario)
        final_lambda = timeline.final_lambda

        states = []
        for index, spec in enumerate(scenario.initial_states):
            psi0 = build_state(spec)
            label = state_label(spec, index)
            trajectory = evolve_state(psi0, timeline, scenario.n_samples)
            final_state = psi0.evolve(U)
            target = fidelity(final_state, psi0.evolve(report.U_adia))
            eig = fidelity(final_state, path.eigenstate(1, final_lambda))
            ensemble = None
            if stochastic:
                ensemble = monte_carlo(
                    timeline, stochastic, psi0, scenario.n_traj, seed, n_samples=scenario.n_samples
                )
                record_trajectories(scenario.name, ensemble.n_traj)
                final = ensemble.final_mean
            else:
                final = target if scenario.target == "adiabatic" else eig
            states.append(StateResult(
                label=label,
                psi0=psi0,
                trajectory=_trajectory_frame(trajectory, timeline, psi0),
                final_fidelity=final,
                target_fidelity=target,
                eigenstate_fidelity=eig,
                pass_fidelities=_pass_fidelities(single, scenario.protocol.repeats, psi0),
                ensemble=ensemble,
            ))
    except AdiabaticError as e:
        raise e.with_context(scenario=scenario.name)

    result = RunResult(
        scenario=scenario,
        timeline=timeline,
        report=report,
        states=states,
        provenance={
            "scenario_hash": scenario_hash(scenario),
            "seed": seed,
            "version": settings.VERSION,
            "integrator": settings.INTEGRATOR,
        },
    )
    logger.info(
        "Scenario run complete",
        extra={
            "scenario": scenario.name,
            "final_fidelity": result.final_fidelity,
            "segments": len(timeline.segments),
            "elapsed_s": time.perf_counter() - started,
        }
    )
    return result

def with_parameter(scenario: Scenario, parameter: str, value: float) -> Scenario:
    """Copy of `scenario` with one sweepable parameter replaced."""
    if parameter not in SWEEPABLES:
        raise UnknownParameterError(parameter, SWEEPABLES)
    data = scenario.dict()
    proto = data["protocol"]
    if parameter == "T":
        proto.update(T_us=float(value), phi=None, k=None)
    elif parameter == "k":
        proto.update(k=_as_int(parameter, value), T_us=None, phi=None)
    elif parameter == "N":
        proto["N"] = _as_int(parameter, value)
    elif parameter == "r_jump":
        proto["r_jump"] = float(value)
    elif parameter == "theta_g":
        data["path"]["theta_g"] = float(value)
    elif parameter == "a":
        if data["gap"] is None:
            raise ScenarioError("Scenario has no gap to sweep", details={"parameter": parameter})
        data["gap"]["a"] = float(value)
    elif parameter == "rel_std":
        noisy = [m for m in data["noise"] if "rel_std" in m]
        if not noisy:
            raise ScenarioError("Scenario has no noise with rel_std", details={"parameter": parameter})
        for model in noisy:
            model["rel_std"] = float(value)
    return parse_scenario(data)

def _as_int(parameter: str, value: float) -> int:
    if float(value) != int(value):
        raise ScenarioError(f"{parameter} takes integer values", details={"value": value})
    return int(value)

def sweep(scenario: Union[Scenario, str], parameter: str, values: Sequence[float], seed: Optional[int] = None) -> List[RunResult]:
    """One run per value, in the given order."""
    if isinstance(scenario, str):
        scenario = load_scenario(scenario)
    if parameter not in SWEEPABLES:
        raise UnknownParameterError(parameter, SWEEPABLES)
    results = []
    for value in values:
        variant = with_parameter(scenario, parameter, value)
        try:
            results.append(run(variant, seed))
        except AdiabaticError as e:
            raise e.with_context(parameter=parameter, value=value)
    logger.info("Sweep complete", extra={"scenario": scenario.name, "parameter": parameter, "points": len(results)})
    return results

def sweep_frame(results: Sequence[RunResult], parameter: str, values: Sequence[float]) -> pd.DataFrame:
    rows = []
    for value, result in zip(values, results):
        row: Dict[str, object] = {"value": float(value), "final_fidelity": result.final_fidelity}
        for state in result.states:
            row[f"fidelity_{state.label}"] = state.final_fidelity
        row["epsilon_max"] = result.report.epsilon_max
        row["deviation_norm"] = result.report.deviation_norm
        row["bound_holds"] = result.report.bound_holds
        rows.append(row)
    columns = ["value", "final_fidelity"]
    if results:
        columns += [f"fidelity_{s.label}" for s in results[0].states]
    columns += ["epsilon_max", "deviation_norm", "bound_holds"]
    return pd.DataFrame(rows, columns=columns)

def write_csv(frame: pd.DataFrame, target: Path, digest: str) -> Path:
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# scenario={digest}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return target

def to_jsonable(value):
    """numpy scalars to builtins, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value

def write_json(payload: Dict[str, object], target: Path) -> Path:
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True)
    target.write_text(text + "\n", encoding="utf-8")
    return target

def gap_profile(timeline: DriveTimeline, times: Sequence[float]) -> pd.DataFrame:
    """λ(t) and the applied gap Ω(λ(t)) on a time grid."""
    times = np.asarray(times, dtype=float)
    return pd.DataFrame({
        "t_s": times,
        "lambda": [timeline.lambda_of_t(float(t)) for t in times],
        "gap_rad_s": timeline.gap_of_t(times),
    }, columns=GAP_COLUMNS)

def write_run(result: RunResult, out_dir: Union[str, Path], fmt: str = "csv") -> List[Path]:
    """Trajectory, phase, gap and ensemble tables plus a summary; every file carries the scenario hash."""
    if fmt not in ("csv", "json"):
        raise ScenarioError(f"Unknown output format {fmt!r}", details={"formats": ["csv", "json"]})
    out = Path(out_dir)
    name = result.scenario.name
    digest = result.provenance["scenario_hash"]
    written: List[Path] = []
    profile = gap_profile(result.timeline, result.states[0].trajectory["t_s"])

    if fmt == "json":
        payload = {
            "summary": result.summary(),
            "decomposition": result.report.to_dict(),
            "timeline": result.timeline.to_records(),
            "gap_profile": profile.to_dict(orient="list"),
            "trajectories": {
                s.label: s.trajectory.to_dict(orient="list") for s in result.states
            },
            "ensembles": {
                s.label: s.ensemble.to_frame().to_dict(orient="list")
                for s in result.states if s.ensemble is not None
            },
        }
        written.append(write_json(payload, out / f"{name}.json"))
        return written

    for state in result.states:
        label = _file_label(state.label)
        written.append(write_csv(state.trajectory, out / f"{name}_trajectory_{label}.csv", digest))
        if state.ensemble is not None:
            written.append(write_csv(state.ensemble.to_frame(), out / f"{name}_ensemble_{label}.csv", digest))
    written.append(write_csv(result.report.phases.to_frame(), out / f"{name}_phases.csv", digest))
    written.append(write_csv(profile, out / f"{name}_gap.csv", digest))
    summary = pd.DataFrame([{
        "state": s.label,
        "final_fidelity": s.final_fidelity,
        "target_fidelity": s.target_fidelity,
        "eigenstate_fidelity": s.eigenstate_fidelity,
        "epsilon_max": result.report.epsilon_max,
        "deviation_norm": result.report.deviation_norm,
        "bound_holds": result.report.bound_holds,
    } for s in result.states])
    written.append(write_csv(summary, out / f"{name}_summary.csv", digest))
    written.append(write_json(result.summary(), out / f"{name}_summary.json"))
    return written

def write_sweep(
    results: Sequence[RunResult],
    scenario: Scenario,
    parameter: str,
    values: Sequence[float],
    out_dir: Union[str, Path],
) -> Path:
    frame = sweep_frame(results, parameter, values)
    return write_csv(frame, Path(out_dir) / f"{scenario.name}_sweep_{parameter}.csv", scenario_hash(scenario))
