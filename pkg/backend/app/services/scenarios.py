"""Builtin scenarios, one per reproduced figure."""
import math
from typing import Dict, List

from app.core.exceptions import ScenarioError
from app.schemas.noise import (
    BiasAmplitude,
    OUAmplitude,
    StaticGaussianDetuning,
    WhiteGaussianAmplitude,
)
from app.schemas.scenario import GapSpec, PathSpec, ProtocolSpec, Scenario

# dλ/dt = 0.12 MHz
FIG1_T_US = 1.0 / 0.12
FIG1_OMEGA_MHZ = 6.0
GEODESIC_OMEGA_MHZ = 5.0

def _fig1(name: str, gap: GapSpec, description: str, noise=()) -> Scenario:
    return Scenario(
        name=name,
        description=description,
        noise=list(noise),
        path=PathSpec(kind="xy", theta_g=2 * math.pi),
        gap=gap,
        protocol=ProtocolSpec(kind="continuous", T_us=FIG1_T_US),
        initial_states=["x"],
        n_samples=201,
    )

def _geodesic(name: str, description: str, protocol: ProtocolSpec, **kwargs) -> Scenario:
    options = {"initial_states": ["x", "y"]}
    options.update(kwargs)
    return Scenario(
        name=name,
        description=description,
        path=PathSpec(kind="xy", theta_g=math.pi),
        gap=GapSpec(kind="constant", omega0_mhz=GEODESIC_OMEGA_MHZ),
        protocol=protocol,
        **options,
    )

def _noisy_jumping(name: str, description: str, noise, N: int = 5) -> Scenario:
    return _geodesic(
        name,
        description,
        ProtocolSpec(kind="jumping", N=N),
        initial_states=["x"],
        noise=[noise],
        n_samples=51,
        n_traj=200,
    )

def _build() -> Dict[str, Scenario]:
    modulated = GapSpec(kind="modulated", omega0_mhz=FIG1_OMEGA_MHZ)
    scenarios: List[Scenario] = [
        _fig1("fig1d", GapSpec(kind="constant", omega0_mhz=FIG1_OMEGA_MHZ),
              "Constant gap along a full XY circle"),
        _fig1("fig1f", modulated, "Larger, modulated gap that is not adiabatic"),
        _fig1("fig1h", GapSpec(kind="crossing", omega0_mhz=FIG1_OMEGA_MHZ, a=2.34),
              "Gap with zeros and level crossings that stays adiabatic"),
        _fig1("fig2a", modulated, "Modulated gap without amplitude bias"),
        _fig1("fig2b", modulated, "Modulated gap with a 1.1 amplitude bias",
              noise=[BiasAmplitude(factor=1.1)]),
        _fig1("fig2c", modulated, "Modulated gap with a 0.8 amplitude bias",
              noise=[BiasAmplitude(factor=0.8)]),
        _geodesic(
            "fig3",
            "Hybrid protocol between continuous and jumping driving, three round trips in 3 µs",
            ProtocolSpec(kind="hybrid", N=5, r_jump=0.5, T_us=0.5, repeats=6),
        ),
        _geodesic("fig4a", "Continuous half circle",
                  ProtocolSpec(kind="continuous", T_us=0.5)),
        _geodesic("fig4b", "Jumping half circle",
                  ProtocolSpec(kind="jumping", N=5)),
        _geodesic("fig4c", "Continuous driving over six half circles",
                  ProtocolSpec(kind="continuous", T_us=0.5, repeats=6)),
        _geodesic("fig4d", "Jumping over six half circles",
                  ProtocolSpec(kind="jumping", N=5, repeats=6)),
        _geodesic("fig4e", "Fidelity during continuous driving over six half circles, 3 µs",
                  ProtocolSpec(kind="continuous", T_us=0.5, repeats=6), n_samples=301),
        _geodesic("fig4f", "Fidelity during jumping over six half circles, 3 µs",
                  ProtocolSpec(kind="jumping", N=5, repeats=6), n_samples=301),
        _noisy_jumping(
            "fig5",
            "Jumping under 50% white amplitude noise redrawn every 10 ns",
            WhiteGaussianAmplitude(rel_std=0.5, dwell_ns=10.0),
        ),
        Scenario(
            name="fig6",
            description="Landau-Zener transfer |-z> to |z> and back by jumping",
            path=PathSpec(kind="lz", theta_g=math.pi, delta_mhz=5.0),
            protocol=ProtocolSpec(kind="jumping", N=5, repeats=2),
            initial_states=["-z"],
            n_samples=101,
        ),
        _noisy_jumping(
            "fig_s2",
            "Jumping under Ornstein-Uhlenbeck amplitude noise",
            OUAmplitude(rel_std=0.5, tau_c_ns=100.0, dwell_ns=10.0),
        ),
        _noisy_jumping(
            "fig_s3",
            "Jumping with many path points under white amplitude noise",
            WhiteGaussianAmplitude(rel_std=0.5, dwell_ns=10.0),
            N=10,
        ),
        Scenario(
            name="fid",
            description="Free induction decay of |x> under static detuning noise",
            path=PathSpec(kind="xy", theta_g=math.pi),
            gap=GapSpec(kind="vanishing"),
            protocol=ProtocolSpec(kind="idle", T_us=1.7),
            initial_states=["x"],
            noise=[StaticGaussianDetuning(sigma_mhz=0.13)],
            n_samples=18,
            n_traj=10000,
        ),
    ]
    return {s.name: s for s in scenarios}

BUILTINS: Dict[str, Scenario] = _build()

def list_scenarios() -> List[str]:
    return list(BUILTINS)

def get_scenario(name: str) -> Scenario:
    try:
        return BUILTINS[name]
    except KeyError:
        raise ScenarioError(
            f"Unknown scenario {name!r}",
            details={"known": list(BUILTINS)}
        )
