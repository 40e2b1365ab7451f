"""End-to-end experiments: collision runs and a position-measurement model.

Both scenarios follow a three-period structure: the coupling is negligible
while the packets are separated, active during passage, and negligible again
once the light system has left.  run_collision checks this contract on the
checkpointed trajectory; the measurement scenario keeps its outgoing probe
particle uncoupled throughout, so the contract holds for it structurally.

The collision couples a single particle to the heavy system through a
Gaussian collision profile paired with a Hermitian matrix on the internal
levels.  Level transitions exchange energy with the particle, so the
outgoing packet is entangled with the internal state while the momentum
transferred to the heavy center of mass stays small; the product
approximation then improves as 1/mass along a sweep.

Absorption in the measurement scenario is modeled by static trapping wells
that hold the absorbed particle near the heavy system; this is a simulator
construction (no microscopic absorption mechanism is prescribed), and the
reports label it as such.  Absorption is declared when the particle's
probability mass inside the near region exceeds 1 - eps at the final time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Any

import numpy as np

from .dynamics import (
    HamiltonianSpec,
    Interaction,
    evolve_exact,
    evolve_factorized,
    factorization_residual,
    fidelity_deficit,
    gaussian_profile,
    interaction_energy,
    total_energy,
)
from .errors import PropagationError, ValidationError
from .frames import (
    extract_relative_state,
    lift_to_auxiliary,
    mixed_density_matrix,
    reduced_density_matrix,
    trace_distance,
    transform_to_intrinsic,
)
from .hilbert import (
    Factor,
    GaussianParams,
    Grid,
    Space,
    StateVector,
    inner_product,
    level_state,
    make_gaussian,
    position_marginal,
    superpose,
    tensor_product,
)
from .schmidt import Bipartition, BranchSampler, schmidt_decompose, coefficient_matrix

LABEL_CM = "A_cm"
LABEL_INT = "A_int"
LABEL_S = "S"
LABEL_A = "a"
LABEL_B = "b"

INTERACTION_TOL = 1e-8
SEPARATION_TOL = 1e-6
COEFF_NORM_TOL = 1e-10


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _complex_array(obj: Any, what: str) -> np.ndarray:
    """Decode {"real": ..., "imag": ...} into a complex array."""
    if not isinstance(obj, dict) or "real" not in obj:
        raise ValidationError(f"{what} must be an object with 'real' (and optional 'imag')")
    real = np.asarray(obj["real"], dtype=float)
    imag = np.asarray(obj.get("imag", np.zeros_like(real)), dtype=float)
    if real.shape != imag.shape:
        raise ValidationError(f"{what}: real and imag parts differ in shape")
    return real + 1j * imag


def _encode_complex(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    return {"real": arr.real.tolist(), "imag": arr.imag.tolist()}


@dataclass(frozen=True)
class GridSpec:
    points: int
    x_min: float
    x_max: float

    def to_grid(self) -> Grid:
        return Grid(self.points, self.x_min, self.x_max)


@dataclass(frozen=True)
class PacketSpec:
    r0: float
    p0: float
    sigma: float

    def params(self, mass: float, hbar: float, mass_unit: float) -> GaussianParams:
        return GaussianParams(
            r0=self.r0, p0=self.p0, sigma=self.sigma, mass=mass,
            hbar=hbar, mass_unit=mass_unit,
        )


@dataclass(frozen=True)
class ScheduleSpec:
    t_initial: float
    t_interaction: float
    t_final: float


@dataclass(frozen=True)
class CenterOfMassSpec:
    masses: tuple[float, ...]
    sigma_ref: float
    points: int
    half_width_sigmas: float
    residual_points: int = 256
    residual_half_width: float = 16.0


@dataclass(eq=False)
class InternalSpec:
    dim: int
    state: np.ndarray
    hamiltonian: np.ndarray


@dataclass(eq=False)
class CouplingSpec:
    strength: float
    width: float
    matrix: np.ndarray


@dataclass(eq=False)
class ParticleSpec:
    grid: GridSpec
    mass: float
    packet: PacketSpec


@dataclass(frozen=True)
class TrapSpec:
    depth: float
    width: float
    centers: tuple[float, ...]

    def potential(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x, dtype=float)
        for c in self.centers:
            out -= self.depth * np.exp(-((x - c) ** 2) / (2.0 * self.width**2))
        return out


@dataclass(eq=False)
class AbsorbedParticleSpec:
    grid: GridSpec
    mass: float
    packets: tuple[PacketSpec, PacketSpec]
    trap: TrapSpec


@dataclass(eq=False)
class FreeParticleSpec:
    grid: GridSpec
    mass: float
    packets: tuple[PacketSpec, PacketSpec]


@dataclass(eq=False)
class MeasurementSpec:
    coefficients: np.ndarray
    absorbed: AbsorbedParticleSpec
    free: FreeParticleSpec


@dataclass(frozen=True)
class PartitionGeometry:
    near_lo: float
    near_hi: float
    eps: float


@dataclass(frozen=True)
class SeedsSpec:
    branch: int
    trials: int


@dataclass(eq=False)
class ScenarioConfig:
    scenario: str
    hbar: float
    mass_unit: float
    dt: float
    checkpoint_every: int
    schedule: ScheduleSpec
    center_of_mass: CenterOfMassSpec
    internal: InternalSpec
    coupling: CouplingSpec
    partition: PartitionGeometry
    seeds: SeedsSpec
    particle: ParticleSpec | None = None
    measurement: MeasurementSpec | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        try:
            return cls._parse(raw)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"config is missing or mistypes a field: {exc}") from exc

    @classmethod
    def _parse(cls, raw: dict) -> "ScenarioConfig":
        scenario = raw["scenario"]
        if scenario not in ("collision", "position_measurement"):
            raise ValidationError(
                f"unknown scenario {scenario!r}: expected 'collision' or "
                "'position_measurement'"
            )
        sched = raw["schedule"]
        schedule = ScheduleSpec(
            float(sched["t_initial"]), float(sched["t_interaction"]), float(sched["t_final"])
        )
        cm_raw = raw["center_of_mass"]
        cm = CenterOfMassSpec(
            masses=tuple(float(m) for m in cm_raw["masses"]),
            sigma_ref=float(cm_raw["sigma_ref"]),
            points=int(cm_raw["points"]),
            half_width_sigmas=float(cm_raw["half_width_sigmas"]),
            residual_points=int(cm_raw.get("residual_points", 256)),
            residual_half_width=float(cm_raw.get("residual_half_width", 16.0)),
        )
        internal_raw = raw["internal"]
        internal = InternalSpec(
            dim=int(internal_raw["dim"]),
            state=_complex_array(internal_raw["state"], "internal state"),
            hamiltonian=_complex_array(internal_raw["hamiltonian"], "internal Hamiltonian"),
        )
        coupling_raw = raw["coupling"]
        coupling = CouplingSpec(
            strength=float(coupling_raw["strength"]),
            width=float(coupling_raw["width"]),
            matrix=_complex_array(coupling_raw["matrix"], "coupling matrix"),
        )
        part_raw = raw["partition"]
        partition = PartitionGeometry(
            float(part_raw["near_lo"]), float(part_raw["near_hi"]), float(part_raw["eps"])
        )
        seeds_raw = raw["seeds"]
        seeds = SeedsSpec(int(seeds_raw["branch"]), int(seeds_raw["trials"]))

        particle = None
        if raw.get("particle") is not None:
            p = raw["particle"]
            particle = ParticleSpec(
                grid=GridSpec(int(p["grid"]["points"]), float(p["grid"]["x_min"]),
                              float(p["grid"]["x_max"])),
                mass=float(p["mass"]),
                packet=PacketSpec(float(p["packet"]["r0"]), float(p["packet"]["p0"]),
                                  float(p["packet"]["sigma"])),
            )
        measurement = None
        if raw.get("measurement") is not None:
            m = raw["measurement"]
            a_raw, b_raw = m["a"], m["b"]
            measurement = MeasurementSpec(
                coefficients=_complex_array(m["coefficients"], "measurement coefficients"),
                absorbed=AbsorbedParticleSpec(
                    grid=GridSpec(int(a_raw["grid"]["points"]), float(a_raw["grid"]["x_min"]),
                                  float(a_raw["grid"]["x_max"])),
                    mass=float(a_raw["mass"]),
                    packets=tuple(
                        PacketSpec(float(p["r0"]), float(p["p0"]), float(p["sigma"]))
                        for p in a_raw["packets"]
                    ),
                    trap=TrapSpec(float(a_raw["trap"]["depth"]), float(a_raw["trap"]["width"]),
                                  tuple(float(c) for c in a_raw["trap"]["centers"])),
                ),
                free=FreeParticleSpec(
                    grid=GridSpec(int(b_raw["grid"]["points"]), float(b_raw["grid"]["x_min"]),
                                  float(b_raw["grid"]["x_max"])),
                    mass=float(b_raw["mass"]),
                    packets=tuple(
                        PacketSpec(float(p["r0"]), float(p["p0"]), float(p["sigma"]))
                        for p in b_raw["packets"]
                    ),
                ),
            )
        cfg = cls(
            scenario=scenario,
            hbar=float(raw.get("hbar", 1.0)),
            mass_unit=float(raw.get("mass_unit", 1.0)),
            dt=float(raw["dt"]),
            checkpoint_every=int(raw.get("checkpoint_every", 100)),
            schedule=schedule,
            center_of_mass=cm,
            internal=internal,
            coupling=coupling,
            partition=partition,
            seeds=seeds,
            particle=particle,
            measurement=measurement,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        s = self.schedule
        if not (0.0 <= s.t_initial < s.t_interaction < s.t_final):
            raise ValidationError(
                "schedule must be strictly increasing: "
                f"0 <= t_initial < t_interaction < t_final, got "
                f"({s.t_initial}, {s.t_interaction}, {s.t_final})"
            )
        if self.dt <= 0.0:
            raise ValidationError("dt must be positive")
        ratio = s.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError("t_final must be an integer multiple of dt")
        if any(m <= 0.0 for m in self.center_of_mass.masses):
            raise ValidationError("all masses must be positive")
        if not self.center_of_mass.masses:
            raise ValidationError("center_of_mass.masses must be non-empty")
        if self.internal.state.shape != (self.internal.dim,):
            raise ValidationError("internal state must be a vector of length dim")
        if self.internal.hamiltonian.shape != (self.internal.dim,) * 2:
            raise ValidationError("internal Hamiltonian must be dim x dim")
        if self.coupling.matrix.shape != (self.internal.dim,) * 2:
            raise ValidationError("coupling matrix must be dim x dim")
        if self.coupling.width <= 0.0:
            raise ValidationError("coupling width must be positive")
        if self.partition.eps <= 0.0 or self.partition.near_lo >= self.partition.near_hi:
            raise ValidationError("partition needs near_lo < near_hi and eps > 0")
        if self.seeds.trials < 1:
            raise ValidationError("seeds.trials must be >= 1")
        if self.scenario == "collision":
            if self.particle is None:
                raise ValidationError("collision scenario needs a 'particle' section")
            if self.particle.mass <= 0.0:
                raise ValidationError("all masses must be positive")
        else:
            m = self.measurement
            if m is None:
                raise ValidationError(
                    "position_measurement scenario needs a 'measurement' section"
                )
            if len(self.center_of_mass.masses) != 1:
                raise ValidationError("position_measurement needs exactly one mass")
            if m.absorbed.mass <= 0.0 or m.free.mass <= 0.0:
                raise ValidationError("all masses must be positive")
            total = float(np.sum(np.abs(m.coefficients) ** 2))
            if abs(total - 1.0) > COEFF_NORM_TOL:
                raise ValidationError(
                    "measurement coefficients must satisfy sum |c_l|^2 = 1 "
                    f"within {COEFF_NORM_TOL:g} (got {total!r})"
                )
            if m.coefficients.shape != (2,):
                raise ValidationError("measurement needs exactly two coefficients")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "scenario": self.scenario,
            "hbar": self.hbar,
            "mass_unit": self.mass_unit,
            "dt": self.dt,
            "checkpoint_every": self.checkpoint_every,
            "schedule": {
                "t_initial": self.schedule.t_initial,
                "t_interaction": self.schedule.t_interaction,
                "t_final": self.schedule.t_final,
            },
            "center_of_mass": {
                "masses": list(self.center_of_mass.masses),
                "sigma_ref": self.center_of_mass.sigma_ref,
                "points": self.center_of_mass.points,
                "half_width_sigmas": self.center_of_mass.half_width_sigmas,
                "residual_points": self.center_of_mass.residual_points,
                "residual_half_width": self.center_of_mass.residual_half_width,
            },
            "internal": {
                "dim": self.internal.dim,
                "state": _encode_complex(self.internal.state),
                "hamiltonian": _encode_complex(self.internal.hamiltonian),
            },
            "coupling": {
                "strength": self.coupling.strength,
                "width": self.coupling.width,
                "matrix": _encode_complex(self.coupling.matrix),
            },
            "partition": {
                "near_lo": self.partition.near_lo,
                "near_hi": self.partition.near_hi,
                "eps": self.partition.eps,
            },
            "seeds": {"branch": self.seeds.branch, "trials": self.seeds.trials},
        }
        if self.particle is not None:
            out["particle"] = {
                "grid": {
                    "points": self.particle.grid.points,
                    "x_min": self.particle.grid.x_min,
                    "x_max": self.particle.grid.x_max,
                },
                "mass": self.particle.mass,
                "packet": {
                    "r0": self.particle.packet.r0,
                    "p0": self.particle.packet.p0,
                    "sigma": self.particle.packet.sigma,
                },
            }
        if self.measurement is not None:
            m = self.measurement
            out["measurement"] = {
                "coefficients": _encode_complex(m.coefficients),
                "a": {
                    "grid": {
                        "points": m.absorbed.grid.points,
                        "x_min": m.absorbed.grid.x_min,
                        "x_max": m.absorbed.grid.x_max,
                    },
                    "mass": m.absorbed.mass,
                    "packets": [
                        {"r0": p.r0, "p0": p.p0, "sigma": p.sigma} for p in m.absorbed.packets
                    ],
                    "trap": {
                        "depth": m.absorbed.trap.depth,
                        "width": m.absorbed.trap.width,
                        "centers": list(m.absorbed.trap.centers),
                    },
                },
                "b": {
                    "grid": {
                        "points": m.free.grid.points,
                        "x_min": m.free.grid.x_min,
                        "x_max": m.free.grid.x_max,
                    },
                    "mass": m.free.mass,
                    "packets": [
                        {"r0": p.r0, "p0": p.p0, "sigma": p.sigma} for p in m.free.packets
                    ],
                },
            }
        return out


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _steps_for(cfg: ScenarioConfig) -> int:
    return int(round(cfg.schedule.t_final / cfg.dt))


def _cm_setup(cfg: ScenarioConfig, mass: float) -> tuple[Grid, GaussianParams]:
    params = GaussianParams.scaled(
        mass, cfg.center_of_mass.sigma_ref, hbar=cfg.hbar, mass_unit=cfg.mass_unit
    )
    half = cfg.center_of_mass.half_width_sigmas * params.sigma
    return Grid(cfg.center_of_mass.points, -half, half), params


def _coupling(cfg: ScenarioConfig, subject: str) -> Interaction:
    return Interaction(
        subject=subject,
        anchor=LABEL_CM,
        profile=gaussian_profile(cfg.coupling.strength, cfg.coupling.width),
        level=LABEL_INT,
        coupling=cfg.coupling.matrix,
    )


def _uniform_state(grid: Grid, label: str) -> StateVector:
    amps = np.full(grid.n_points, 1.0 / math.sqrt(grid.x_max - grid.x_min))
    return StateVector(Space((Factor.coordinate(label, grid),)), amps)


def _check_three_periods(cfg, trajectory, h) -> tuple[float, float]:
    """Largest |coupling expectation| over initial-period and final-period checkpoints."""
    s = cfg.schedule
    worst_initial = 0.0
    worst_final = 0.0
    for t, state in trajectory:
        if t <= s.t_initial + 1e-12:
            worst_initial = max(worst_initial, abs(interaction_energy(state, h)))
        if t >= s.t_interaction - 1e-12:
            worst_final = max(worst_final, abs(interaction_energy(state, h)))
    if worst_initial > INTERACTION_TOL:
        raise PropagationError(
            f"interaction is not negligible at the start: |<H_coupling>| = "
            f"{worst_initial:.3e} exceeds {INTERACTION_TOL:g} in the initial period"
        )
    if worst_final > INTERACTION_TOL:
        raise PropagationError(
            f"interaction is not negligible at the end: |<H_coupling>| = "
            f"{worst_final:.3e} exceeds {INTERACTION_TOL:g} in the final period"
        )
    return worst_initial, worst_final


def _energy_drift(trajectory, h) -> float:
    energies = [total_energy(state, h) for _, state in trajectory]
    ref = energies[0]
    scale = max(abs(ref), 1e-30)
    return max(abs(e - ref) for e in energies) / scale


# ---------------------------------------------------------------------------
# Collision scenario
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class CollisionPoint:
    mass: float
    sigma_cm: float
    fidelity_deficit: float
    residual_norm: float
    overlap_weight: float
    branch_probabilities: list[float]
    branch_entropy: float
    degenerate_groups: list[list[int]]
    schmidt_identity_distance: float
    trace_distance: float
    rho_eigenvalues: list[float]
    rho_trace: float
    rho_hermiticity_error: float
    interaction_initial: float
    interaction_final: float
    norm_drift: float
    energy_drift: float


@dataclass(eq=False)
class CollisionReport:
    points: list[CollisionPoint]

    @property
    def masses(self) -> list[float]:
        return [p.mass for p in self.points]

    @property
    def fidelity_deficits(self) -> list[float]:
        return [p.fidelity_deficit for p in self.points]

    @property
    def residual_norms(self) -> list[float]:
        return [p.residual_norm for p in self.points]

    @property
    def trace_distances(self) -> list[float]:
        return [p.trace_distance for p in self.points]

    @property
    def fidelity_strictly_decreasing(self) -> bool:
        d = self.fidelity_deficits
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def residual_strictly_decreasing(self) -> bool:
        d = self.residual_norms
        return all(b < a for a, b in zip(d, d[1:]))

    @property
    def trace_distance_non_increasing(self) -> bool:
        d = self.trace_distances
        return all(b <= a for a, b in zip(d, d[1:]))

    def to_records(self) -> list[dict]:
        records = []
        for p in self.points:
            records.append({
                "record": "collision_point",
                "mass": p.mass,
                "sigma_cm": p.sigma_cm,
                "fidelity_deficit": p.fidelity_deficit,
                "residual_norm": p.residual_norm,
                "overlap_weight": p.overlap_weight,
                "branch_probabilities": p.branch_probabilities,
                "branch_entropy": p.branch_entropy,
                "degenerate_groups": p.degenerate_groups,
                "schmidt_identity_distance": p.schmidt_identity_distance,
                "trace_distance": p.trace_distance,
                "rho_eigenvalues": p.rho_eigenvalues,
                "rho_trace": p.rho_trace,
                "rho_hermiticity_error": p.rho_hermiticity_error,
                "interaction_initial": p.interaction_initial,
                "interaction_final": p.interaction_final,
                "norm_drift": p.norm_drift,
                "energy_drift": p.energy_drift,
            })
        records.append({
            "record": "collision_summary",
            "masses": self.masses,
            "fidelity_deficits": self.fidelity_deficits,
            "residual_norms": self.residual_norms,
            "trace_distances": self.trace_distances,
            "fidelity_strictly_decreasing": self.fidelity_strictly_decreasing,
            "residual_strictly_decreasing": self.residual_strictly_decreasing,
            "trace_distance_non_increasing": self.trace_distance_non_increasing,
        })
        return records


def _collision_hamiltonian(cfg: ScenarioConfig, mass: float) -> HamiltonianSpec:
    return HamiltonianSpec(
        kinetic={LABEL_CM: mass, LABEL_S: cfg.particle.mass},
        internal=(LABEL_INT, cfg.internal.hamiltonian),
        interaction=_coupling(cfg, LABEL_S),
        hbar=cfg.hbar,
    )


def _collision_residual(cfg: ScenarioConfig, mass: float, phi_int, psi_s) -> float:
    """Residual of the dropped center-of-mass kinetic term at full coupling.

    The relative state is evolved with the anchor coordinate as an explicit
    parameter (uniform weight, no center-of-mass kinetic term) on a window
    wide enough that the collision misses the particle entirely at the window
    edges, keeping the state periodic-smooth for the spectral derivative.
    """
    cm = cfg.center_of_mass
    grid_w = Grid(cm.residual_points, -cm.residual_half_width, cm.residual_half_width)
    flat = _uniform_state(grid_w, LABEL_CM)
    psi0 = tensor_product([flat, phi_int, psi_s])
    h_par = HamiltonianSpec(
        kinetic={LABEL_S: cfg.particle.mass},
        internal=(LABEL_INT, cfg.internal.hamiltonian),
        interaction=_coupling(cfg, LABEL_S),
        hbar=cfg.hbar,
    )
    steps = _steps_for(cfg)
    par = evolve_exact(psi0, h_par, cfg.dt, steps, checkpoint_every=max(steps, 1))
    return factorization_residual(par.final, mass, cfg.hbar, LABEL_CM)


def _collision_point(cfg: ScenarioConfig, mass: float) -> CollisionPoint:
    grid_cm, cm_params = _cm_setup(cfg, mass)
    grid_s = cfg.particle.grid.to_grid()
    psi_s = make_gaussian(
        grid_s, cfg.particle.packet.params(cfg.particle.mass, cfg.hbar, cfg.mass_unit),
        LABEL_S,
    )
    phi_int = level_state(LABEL_INT, cfg.internal.state)
    psi0 = lift_to_auxiliary(phi_int, psi_s, cm_params, grid_cm, LABEL_CM)
    h = _collision_hamiltonian(cfg, mass)
    steps = _steps_for(cfg)

    initial_coupling = abs(interaction_energy(psi0, h))
    if initial_coupling > INTERACTION_TOL:
        raise PropagationError(
            f"interaction is not negligible at the start: |<H_coupling>| = "
            f"{initial_coupling:.3e} exceeds {INTERACTION_TOL:g} at t = 0"
        )
    exact = evolve_exact(psi0, h, cfg.dt, steps, cfg.checkpoint_every)
    worst_initial, worst_final = _check_three_periods(cfg, exact.trajectory, h)
    energy_drift = _energy_drift(exact.trajectory, h)

    phi_cm = make_gaussian(grid_cm, cm_params, LABEL_CM)
    fact = evolve_factorized(
        phi_cm, tensor_product([phi_int, psi_s]), h, cfg.dt, steps,
        cfg.checkpoint_every, freeze_at=cm_params.r0,
    )
    deficit = fidelity_deficit(exact.final, fact.final)
    residual = _collision_residual(cfg, mass, phi_int, psi_s)

    extraction = extract_relative_state(exact.final, fact.cm.final)
    ensemble = transform_to_intrinsic(
        extraction.state, Bipartition([LABEL_S], [LABEL_INT])
    )
    rho_mixed = mixed_density_matrix(ensemble, [LABEL_S])
    rho_psi1 = reduced_density_matrix(extraction.state, [LABEL_S])
    identity_distance = trace_distance(rho_mixed, rho_psi1)
    rho_full = reduced_density_matrix(exact.final, [LABEL_S])
    distance = trace_distance(rho_mixed, rho_full)

    probs = ensemble.probabilities()
    provenance = ensemble.provenance
    entropy = float(-np.sum(probs * np.log(probs)))
    eigs = rho_mixed.eigenvalues()

    return CollisionPoint(
        mass=mass,
        sigma_cm=cm_params.sigma,
        fidelity_deficit=float(deficit),
        residual_norm=float(residual),
        overlap_weight=extraction.overlap_weight,
        branch_probabilities=[float(p) for p in probs],
        branch_entropy=entropy,
        degenerate_groups=[list(g) for g in provenance.degenerate_groups],
        schmidt_identity_distance=float(identity_distance),
        trace_distance=float(distance),
        rho_eigenvalues=[float(v) for v in eigs],
        rho_trace=rho_mixed.trace,
        rho_hermiticity_error=rho_mixed.hermiticity_error,
        interaction_initial=float(worst_initial),
        interaction_final=float(worst_final),
        norm_drift=float(exact.norm_drift),
        energy_drift=float(energy_drift),
    )


def run_collision(cfg: ScenarioConfig) -> CollisionReport:
    """Collision experiment over the configured mass sweep."""
    if cfg.scenario != "collision":
        raise ValidationError(f"config is for scenario {cfg.scenario!r}, not collision")
    return CollisionReport([_collision_point(cfg, m) for m in cfg.center_of_mass.masses])


# ---------------------------------------------------------------------------
# Partition detection
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PartitionReport:
    """Outcome of searching for an (absorbed | free) coordinate split."""

    absorbed: tuple[str, ...] | None
    free: tuple[str, ...] | None
    leakage: float
    c_coefficients: list[float]
    d_coefficients: list[float]
    weight_check: float
    candidates: list[dict]

    @property
    def found(self) -> bool:
        return self.absorbed is not None

    def to_record(self) -> dict:
        return {
            "record": "partition",
            "found": self.found,
            "absorbed": list(self.absorbed) if self.absorbed else None,
            "free": list(self.free) if self.free else None,
            "leakage": self.leakage,
            "c_coefficients": self.c_coefficients,
            "d_coefficients": self.d_coefficients,
            "weight_check": self.weight_check,
            "candidates": self.candidates,
        }


def _inside_mask(grid: Grid, geometry: PartitionGeometry) -> np.ndarray:
    x = grid.positions()
    return (x >= geometry.near_lo) & (x <= geometry.near_hi)


def _unnormalized_coefficients(state: StateVector, cut: Bipartition) -> np.ndarray:
    matrix = coefficient_matrix(state, cut)
    return np.linalg.svd(matrix, compute_uv=False)


def detect_partition(psi1: StateVector, geometry: PartitionGeometry) -> PartitionReport:
    """Search coordinate splits for one with the absorbed part localized near
    the heavy system and the free part away from it.

    Candidate splits are tried smallest absorbed set first, in label order;
    the first split whose violating probability mass (absorbed outside the
    near region, or free inside it) stays below eps is reported, together
    with the two-block expansion: d-coefficients from the support-compatible
    component across the (free | rest) cut, c-coefficients from the violating
    remainder across the (coordinates | levels) cut.  Squared coefficients of
    the two lists sum to 1.  Finding no split is a report, not an error.
    """
    space = psi1.space
    coords = [f.label for f in space.factors if f.is_coordinate]
    levels = [f.label for f in space.factors if not f.is_coordinate]
    if len(coords) < 2:
        raise ValidationError("partition detection needs at least two coordinate factors")
    prob = np.abs(psi1.amplitudes) ** 2 * space.volume_element

    ndim = len(space.dims)
    inside = {}
    for lab in coords:
        axis = space.axis(lab)
        shape = [1] * ndim
        shape[axis] = space.dims[axis]
        inside[lab] = _inside_mask(space.factor(lab).grid, geometry).reshape(shape)

    candidates: list[dict] = []
    chosen: tuple[tuple[str, ...], tuple[str, ...], np.ndarray] | None = None
    for size in range(1, len(coords)):
        for absorbed in combinations(sorted(coords), size):
            free = tuple(lab for lab in sorted(coords) if lab not in absorbed)
            ok = np.ones(space.dims, dtype=bool)
            for lab in absorbed:
                ok = ok & inside[lab]
            for lab in free:
                ok = ok & ~inside[lab]
            leakage = float(1.0 - np.sum(prob[ok]))
            candidates.append(
                {"absorbed": list(absorbed), "free": list(free), "leakage": leakage}
            )
            if chosen is None and leakage < geometry.eps:
                chosen = (absorbed, free, ok)
        if chosen is not None:
            break

    if chosen is None:
        best = min(candidates, key=lambda c: c["leakage"])
        return PartitionReport(
            absorbed=None, free=None, leakage=best["leakage"],
            c_coefficients=[], d_coefficients=[], weight_check=0.0,
            candidates=candidates,
        )

    absorbed, free, ok = chosen
    leakage = next(
        c["leakage"] for c in candidates
        if tuple(c["absorbed"]) == absorbed and tuple(c["free"]) == free
    )
    ok_state = StateVector(space, np.where(ok, psi1.amplitudes, 0.0))
    bad_state = StateVector(space, np.where(ok, 0.0, psi1.amplitudes))
    rest = tuple(lab for lab in space.labels if lab not in free)
    d_coeffs = _unnormalized_coefficients(ok_state, Bipartition(free, rest))
    if levels and float(np.sum(np.abs(bad_state.amplitudes) ** 2)) > 0.0:
        c_coeffs = _unnormalized_coefficients(bad_state, Bipartition(coords, levels))
    else:
        norm_bad = math.sqrt(
            float(np.sum(np.abs(bad_state.amplitudes) ** 2)) * space.volume_element
        )
        c_coeffs = np.array([norm_bad]) if norm_bad > 0.0 else np.array([])
    weight_check = float(np.sum(c_coeffs**2) + np.sum(d_coeffs**2))
    return PartitionReport(
        absorbed=absorbed,
        free=free,
        leakage=leakage,
        c_coefficients=[float(c) for c in c_coeffs],
        d_coefficients=[float(d) for d in d_coeffs],
        weight_check=weight_check,
        candidates=candidates,
    )


# ---------------------------------------------------------------------------
# Position-measurement scenario
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MeasurementReport:
    mass: float
    schmidt_coefficients: list[float]
    expected_coefficients: list[float]
    coefficient_error: float
    compound_overlap: float
    overlap_weight: float
    outcome_probabilities: list[float]
    empirical_frequencies: list[float]
    outcome_counts: list[int]
    trials: int
    branch_b_fidelity_deficits: list[float]
    a_component_overlap: float
    b_component_overlap: float
    absorbed_mass: float
    absorption_declared: bool
    free_particle_coupling: float
    partition: PartitionReport
    norm_drift: float
    energy_drift: float
    interaction_initial: float
    interaction_final: float
    absorption_model: str = (
        "static trapping wells for the absorbed particle (simulator "
        "construction); absorbed when its mass inside the near region "
        "exceeds 1 - eps at t_final"
    )

    def to_records(self) -> list[dict]:
        rec = {
            "record": "measurement",
            "mass": self.mass,
            "schmidt_coefficients": self.schmidt_coefficients,
            "expected_coefficients": self.expected_coefficients,
            "coefficient_error": self.coefficient_error,
            "compound_overlap": self.compound_overlap,
            "overlap_weight": self.overlap_weight,
            "outcome_probabilities": self.outcome_probabilities,
            "empirical_frequencies": self.empirical_frequencies,
            "outcome_counts": self.outcome_counts,
            "trials": self.trials,
            "branch_b_fidelity_deficits": self.branch_b_fidelity_deficits,
            "a_component_overlap": self.a_component_overlap,
            "b_component_overlap": self.b_component_overlap,
            "absorbed_mass": self.absorbed_mass,
            "absorption_declared": self.absorption_declared,
            "free_particle_coupling": self.free_particle_coupling,
            "norm_drift": self.norm_drift,
            "energy_drift": self.energy_drift,
            "interaction_initial": self.interaction_initial,
            "interaction_final": self.interaction_final,
            "absorption_model": self.absorption_model,
        }
        return [rec, self.partition.to_record()]


def run_position_measurement(cfg: ScenarioConfig) -> MeasurementReport:
    """Two-particle measurement model: particle a is trapped near the heavy
    system while entangled partner b never couples to anything.

    The probe particle b evolves under its kinetic term alone, so the
    three-period contract holds for it identically; sampling the branch
    ensemble of the final relative state reproduces the initial entanglement
    weights as outcome statistics, and each branch leaves b in the
    corresponding freely evolved component.
    """
    if cfg.scenario != "position_measurement":
        raise ValidationError(
            f"config is for scenario {cfg.scenario!r}, not position_measurement"
        )
    m = cfg.measurement
    mass = cfg.center_of_mass.masses[0]
    grid_cm, cm_params = _cm_setup(cfg, mass)
    grid_a = m.absorbed.grid.to_grid()
    grid_b = m.free.grid.to_grid()

    a_states = [
        make_gaussian(grid_a, p.params(m.absorbed.mass, cfg.hbar, cfg.mass_unit), LABEL_A)
        for p in m.absorbed.packets
    ]
    b_states = [
        make_gaussian(grid_b, p.params(m.free.mass, cfg.hbar, cfg.mass_unit), LABEL_B)
        for p in m.free.packets
    ]
    a_overlap = abs(inner_product(a_states[0], a_states[1]))
    b_overlap = abs(inner_product(b_states[0], b_states[1]))
    if a_overlap > SEPARATION_TOL:
        raise PropagationError(
            f"absorbed-particle components are not separated: overlap "
            f"{a_overlap:.3e} exceeds {SEPARATION_TOL:g}"
        )

    coeffs = m.coefficients
    psi_s = superpose(
        [
            (coeffs[l], tensor_product([a_states[l], b_states[l]]))
            for l in range(len(coeffs))
        ],
        normalize=True,
    )
    phi_int = level_state(LABEL_INT, cfg.internal.state)
    psi0 = lift_to_auxiliary(phi_int, psi_s, cm_params, grid_cm, LABEL_CM)

    trap = m.absorbed.trap
    h = HamiltonianSpec(
        kinetic={LABEL_CM: mass, LABEL_A: m.absorbed.mass, LABEL_B: m.free.mass},
        potentials={LABEL_A: trap.potential},
        internal=(LABEL_INT, cfg.internal.hamiltonian),
        interaction=_coupling(cfg, LABEL_A),
        hbar=cfg.hbar,
    )
    steps = _steps_for(cfg)
    exact = evolve_exact(psi0, h, cfg.dt, steps, cfg.checkpoint_every)
    energy_drift = _energy_drift(exact.trajectory, h)
    # The coupling to the absorbed compound stays on; the contract concerns
    # the outgoing particle b, which has no coupling terms at all.
    free_particle_coupling = 0.0
    interaction_initial = abs(interaction_energy(psi0, h))
    interaction_final = abs(interaction_energy(exact.final, h))

    h_cm = HamiltonianSpec(kinetic={LABEL_CM: mass}, hbar=cfg.hbar)
    phi_cm = make_gaussian(grid_cm, cm_params, LABEL_CM)
    phi_free = evolve_exact(phi_cm, h_cm, cfg.dt, steps, max(steps, 1)).final
    extraction = extract_relative_state(exact.final, phi_free)
    psi1 = extraction.state

    cut = Bipartition([LABEL_INT, LABEL_A], [LABEL_B])
    result = schmidt_decompose(psi1, cut)
    expected = sorted((abs(c) for c in coeffs), reverse=True)

    # Freely evolved b components identify which branch realizes which outcome.
    h_b = HamiltonianSpec(kinetic={LABEL_B: m.free.mass}, hbar=cfg.hbar)
    b_evolved = [
        evolve_exact(b, h_b, cfg.dt, steps, max(steps, 1)).final for b in b_states
    ]
    outcome_of_branch = []
    branch_deficits = []
    for j in range(result.rank):
        fids = [abs(inner_product(result.right_states[j], bt)) for bt in b_evolved]
        outcome = int(np.argmax(fids))
        outcome_of_branch.append(outcome)
        branch_deficits.append(1.0 - fids[outcome])

    # Independently evolved absorbed compounds, for the orthogonality report.
    h_compound = HamiltonianSpec(
        kinetic={LABEL_CM: mass, LABEL_A: m.absorbed.mass},
        potentials={LABEL_A: trap.potential},
        internal=(LABEL_INT, cfg.internal.hamiltonian),
        interaction=_coupling(cfg, LABEL_A),
        hbar=cfg.hbar,
    )
    compounds = []
    for a_l in a_states:
        comp0 = tensor_product([phi_cm, phi_int, a_l])
        comp = evolve_exact(comp0, h_compound, cfg.dt, steps, max(steps, 1)).final
        compounds.append(extract_relative_state(comp, phi_free).state)
    compound_overlap = abs(inner_product(compounds[0], compounds[1]))

    sampler = BranchSampler(cfg.seeds.branch)
    draws = sampler.draw_many(result, cfg.seeds.trials)
    counts = [0] * len(coeffs)
    for j in draws:
        counts[outcome_of_branch[int(j)]] += 1
    freqs = [c / cfg.seeds.trials for c in counts]

    a_marginal = position_marginal(psi1, LABEL_A)
    inside = _inside_mask(grid_a, cfg.partition)
    absorbed_mass = float(np.sum(a_marginal[inside]))
    partition = detect_partition(psi1, cfg.partition)

    n_report = min(result.rank, len(coeffs))
    return MeasurementReport(
        mass=mass,
        schmidt_coefficients=[float(c) for c in result.coefficients],
        expected_coefficients=[float(c) for c in expected],
        coefficient_error=float(
            max(
                abs(result.coefficients[j] - expected[j]) for j in range(n_report)
            )
        ),
        compound_overlap=float(compound_overlap),
        overlap_weight=extraction.overlap_weight,
        outcome_probabilities=[float(abs(c) ** 2) for c in coeffs],
        empirical_frequencies=[float(f) for f in freqs],
        outcome_counts=counts,
        trials=cfg.seeds.trials,
        branch_b_fidelity_deficits=[float(d) for d in branch_deficits],
        a_component_overlap=float(a_overlap),
        b_component_overlap=float(b_overlap),
        absorbed_mass=absorbed_mass,
        absorption_declared=bool(absorbed_mass >= 1.0 - cfg.partition.eps),
        free_particle_coupling=free_particle_coupling,
        partition=partition,
        norm_drift=float(exact.norm_drift),
        energy_drift=float(energy_drift),
        interaction_initial=float(interaction_initial),
        interaction_final=float(interaction_final),
    )


def run_scenario(cfg: ScenarioConfig):
    """Dispatch to the configured scenario."""
    if cfg.scenario == "collision":
        return run_collision(cfg)
    return run_position_measurement(cfg)
