"""Run configuration: JSON schema, validation and conversion to domain objects.

Schema version 1. Unknown keys are rejected at every level. Fields, times
and frequencies carry their units in the key names.
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .experiments import FixedParallel, NmrPlan, PowderGrid, Pulse, PulseProgram, TreprPlan
from .liouville import DissipationSpec, DriveSpec, t1_t2_pairs
from .spinsys import (
    CouplingTensor,
    NuclearSpin,
    SpinCenter,
    SpinSystem,
    dipolar_tensor,
)
from .states import Polarized, PsiU, SensorState, Singlet

SCHEMA_VERSION = 1

Vec3 = Annotated[list[float], Field(min_length=3, max_length=3)]


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CenterConfig(_Strict):
    label: str
    g: Union[float, Vec3, list[Vec3]]
    position: Vec3 = [0.0, 0.0, 0.0]
    check_g: bool = True


class NucleusConfig(_Strict):
    label: str
    larmor_MHz_per_T: float
    hyperfine_A_MHz: float
    attached_to: str


class CouplingConfig(_Strict):
    """``mode="dipolar"`` derives J from geometry; ``"explicit"`` takes ``J``."""

    pair: tuple[str, str]
    mode: Literal["dipolar", "explicit"] = "dipolar"
    J: list[Vec3] | None = None
    isotropic_MHz: float = 0.0

    @model_validator(mode="after")
    def _explicit_needs_J(self):
        if self.mode == "explicit" and self.J is None:
            raise ValueError("explicit couplings need a 3x3 J")
        if self.mode == "dipolar" and self.J is not None:
            raise ValueError("J is only allowed with mode='explicit'")
        return self


class SystemConfig(_Strict):
    centers: list[CenterConfig]
    nuclei: list[NucleusConfig] = []
    couplings: list[CouplingConfig] = []
    chiral_axis: Vec3 = [0.0, 0.0, 1.0]


class StateConfig(_Strict):
    kind: Literal["singlet", "polarized", "psi_u"]
    p: float = 1.0
    theta: float = 0.0
    phi: float = 0.0
    lam: float = 0.0
    qubit: Literal["down", "mixed", "thermal"] | None = None
    p_up: float = 0.0
    nucleus: Literal["up", "down", "mixed"] | None = None

    @field_validator("p")
    @classmethod
    def _p_range(cls, v):
        if not -1.0 <= v <= 1.0:
            raise ValueError("polarization p must lie in [-1, 1]")
        return v


class DissipationConfig(_Strict):
    t1_us: float | dict[str, float] | None = None
    t2_us: float | dict[str, float] | None = None
    t_r_us: float | None = None
    triplet_channel: bool = False
    t1_bias: Literal["ground", "unbiased"] = "ground"

    @model_validator(mode="after")
    def _physical(self):
        for name in ("t1_us", "t2_us", "t_r_us"):
            v = getattr(self, name)
            for x in v.values() if isinstance(v, dict) else [v]:
                if x is not None and x <= 0:
                    raise ValueError(f"{name} must be > 0")
        for a, b in t1_t2_pairs(self.t1_us, self.t2_us):
            if b > 2 * a:
                raise ValueError(f"physicality guard violated: t2_us = {b} > 2 * t1_us = {2 * a}")
        return self


class OrientationConfig(_Strict):
    kind: Literal["parallel", "powder"] = "parallel"
    n_points: int = 256
    n_gamma: int | None = None


class TreprConfig(_Strict):
    kind: Literal["trepr"] = "trepr"
    b_start_mT: float
    b_stop_mT: float
    n_b: int = Field(gt=0)
    t_start_ns: float = 0.0
    t_stop_ns: float
    n_t: int = Field(gt=1)
    freq_GHz: float
    b1_mT: float = 0.01
    phase: float = 0.0
    window_ns: tuple[float, float] | None = None
    fwhm_mT: float = 0.0
    oversample: int = Field(default=1, ge=1)
    orientation: OrientationConfig = OrientationConfig()
    outputs: list[Literal["map", "spectrum"]] = ["map", "spectrum"]


class NmrConfig(_Strict):
    kind: Literal["nmr"] = "nmr"
    b0_T: Vec3
    nu_start_MHz: float
    nu_stop_MHz: float
    n_nu: int = Field(gt=1)
    linewidth_MHz: float = 0.5


class PulseConfig(_Strict):
    target: str
    control: str | None = None
    control_state: Literal["up", "down"] = "up"
    angle: float = float(np.pi)
    axis: Literal["x", "y", "z"] = "x"


class TransferConfig(_Strict):
    kind: Literal["transfer"] = "transfer"
    pulses: list[PulseConfig]
    b_T: float
    linewidth_MHz: float = 10.0
    readout: TreprConfig | None = None


class OutputConfig(_Strict):
    dir: str = "out"
    stem: str = "result"
    plots: bool = True


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    system: SystemConfig
    state: StateConfig
    dissipation: DissipationConfig | None = None
    experiment: Annotated[Union[TreprConfig, NmrConfig, TransferConfig], Field(discriminator="kind")]
    output: OutputConfig = OutputConfig()
    threads: int = Field(default=1, ge=1)
    deterministic: bool = True

    # ---- conversion to domain objects -------------------------------------------------

    def build_system(self) -> SpinSystem:
        s = self.system
        centers = [SpinCenter(c.label, c.g, c.position, check_g=c.check_g) for c in s.centers]
        by_label = {c.label: c for c in centers}
        couplings = []
        for cp in s.couplings:
            a, b = cp.pair
            if a not in by_label or b not in by_label:
                raise ConfigError(f"system.couplings: pair {cp.pair} references unknown centers")
            if cp.mode == "dipolar":
                ca, cb = by_label[a], by_label[b]
                couplings.append(dipolar_tensor(ca.g_tensor, cb.g_tensor, cb.position - ca.position, (a, b),
                                                cp.isotropic_MHz))
            else:
                couplings.append(CouplingTensor((a, b), np.asarray(cp.J) + cp.isotropic_MHz * np.eye(3)))
        nuclei = [NuclearSpin(n.label, n.larmor_MHz_per_T, n.hyperfine_A_MHz, n.attached_to) for n in s.nuclei]
        return SpinSystem(tuple(centers), tuple(nuclei), tuple(couplings), s.chiral_axis)

    def build_rp_state(self):
        st = self.state
        if st.kind == "singlet":
            return Singlet()
        if st.kind == "polarized":
            return Polarized(st.p)
        return PsiU(st.theta, st.phi, st.lam)

    def build_sensor(self) -> SensorState:
        return SensorState(self.state.qubit, self.state.p_up, self.state.nucleus)

    def build_dissipation(self) -> DissipationSpec | None:
        d = self.dissipation
        if d is None:
            return None
        return DissipationSpec(d.t1_us, d.t2_us, d.t_r_us, d.triplet_channel, d.t1_bias)

    def build_trepr_plan(self, exp: TreprConfig | None = None) -> TreprPlan:
        e = exp or self.experiment
        orient = FixedParallel() if e.orientation.kind == "parallel" else PowderGrid(
            e.orientation.n_points, e.orientation.n_gamma)
        return TreprPlan(
            b_grid=np.linspace(e.b_start_mT, e.b_stop_mT, e.n_b),
            t_grid=np.linspace(e.t_start_ns, e.t_stop_ns, e.n_t),
            mw=DriveSpec(e.freq_GHz, e.b1_mT, e.phase),
            orientation=orient,
            window_ns=e.window_ns,
            fwhm_mT=e.fwhm_mT,
            dissipation=self.build_dissipation(),
            oversample=e.oversample,
        )

    def build_nmr_plan(self) -> NmrPlan:
        e = self.experiment
        return NmrPlan(e.b0_T, np.linspace(e.nu_start_MHz, e.nu_stop_MHz, e.n_nu), e.linewidth_MHz)

    def build_program(self) -> PulseProgram:
        e = self.experiment
        pulses = tuple(Pulse(p.target, p.control, p.control_state, p.angle, p.axis) for p in e.pulses)
        return PulseProgram(pulses, e.b_T, e.linewidth_MHz)

    def validate_domain(self) -> None:
        """Build every domain object once so invariant violations surface early."""
        system = self.build_system()
        self.build_rp_state()
        sensor = self.build_sensor()
        from .states import assemble_initial

        assemble_initial(self.build_rp_state(), sensor, system)
        self.build_dissipation()
        exp = self.experiment
        if exp.kind == "trepr":
            self.build_trepr_plan()
        elif exp.kind == "nmr":
            self.build_nmr_plan()
            if not system.nuclei:
                raise ConfigError("experiment.kind='nmr' needs at least one nucleus in system.nuclei")
        else:
            self.build_program()
            if exp.readout is not None:
                self.build_trepr_plan(exp.readout)

    def dumps(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()).hexdigest()


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{source}: top level must be an object")
    try:
        cfg = RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation(exc)}") from exc
    try:
        cfg.validate_domain()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def bundled_configs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("cissim.configs").iterdir() if p.name.endswith(".json"))


def resolve_config_path(path) -> Path:
    """A file path, or the name of a bundled config (with or without ``.json``)."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.name.endswith(".json") else p.name + ".json"
    bundled = resources.files("cissim.configs") / name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config file {path} not found (bundled configs: {', '.join(bundled_configs())})")


def load_config(path) -> RunConfig:
    p = resolve_config_path(path)
    return parse_config(p.read_text(), str(p))
