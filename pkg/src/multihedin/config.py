"""Run configuration: YAML grammar, validation and conversion to solver objects.

Grammar (YAML mapping; unknown keys are rejected at every level)::

    model:
      species:                      # required, non-empty
        - {name: electron, mass: 1.0, charge: -1.0, statistics: fermion,
           particle_count: 1, is_electron: true}
      lattice: {n_sites: 2, spacing: 1.0, boundary: open, softening: 1.0}
      beta: 4.0
      coupling: 1.0                 # lambda, scales the soft-Coulomb kernel
      fields: {phi: [...], f: [[...], ...]}   # optional
    solver: {scheme: scgw, max_iter: 200, tol: 1.0e-9, mixing: 0.5, ...}
    oracle: {enabled: true, boson_cap: 24, dim_cap: 20000, ensemble: grand}
    output: {directory: out, formats: [json, csv]}
    sweep: {parameter: coupling, values: [0.25, 0.5]}   # optional

Sweep parameters are ``coupling``, ``beta``, ``mixing`` or ``mass:<species>``.
Numbers are typed strictly: a quoted ``"0.5"`` is a type error.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .hedin import ScfConfig
from .model import ExternalFields, LatticeSpec, ModelSystem, SpeciesSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class SpeciesBlock(_Strict):
    name: str
    mass: float = Field(gt=0)
    charge: float
    statistics: Literal["fermion", "boson"]
    particle_count: float = Field(ge=0)
    is_electron: bool = False


class LatticeBlock(_Strict):
    n_sites: int = Field(ge=1)
    spacing: float = Field(default=1.0, gt=0)
    boundary: Literal["open", "periodic"] = "open"
    softening: float = Field(default=1.0, gt=0)


class FieldsBlock(_Strict):
    phi: Optional[list[float]] = None
    f: Optional[list[list[float]]] = None


class ModelBlock(_Strict):
    species: list[SpeciesBlock] = Field(min_length=1)
    lattice: LatticeBlock
    beta: float = Field(gt=0)
    coupling: float = Field(default=1.0, ge=0)
    fields: Optional[FieldsBlock] = None

    @model_validator(mode="after")
    def _one_electron(self):
        if sum(s.is_electron for s in self.species) > 1:
            raise ValueError("at most one species may set is_electron")
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ValueError("species names must be unique")
        return self


class SolverBlock(_Strict):
    scheme: Literal["hartree_only", "gw0", "scgw", "gw_gamma1"] = "scgw"
    max_iter: int = Field(default=200, ge=1)
    tol: float = Field(default=1e-9, gt=0)
    mixing: float = Field(default=0.5, gt=0, le=1)
    mu_tol: float = Field(default=1e-12, gt=0)
    n_freq: int = Field(default=256, ge=1)
    n_tau: int = Field(default=512, ge=2)
    vertex_n_freq: int = Field(default=16, ge=1)

    @model_validator(mode="after")
    def _grid(self):
        if self.n_tau < 2 * self.n_freq:
            raise ValueError("n_tau must be at least 2*n_freq")
        return self


class OracleBlock(_Strict):
    enabled: bool = True
    boson_cap: int = Field(default=24, ge=1)
    dim_cap: int = Field(default=20000, ge=1)
    ensemble: Literal["grand", "canonical"] = "grand"
    cap_threshold: float = Field(default=1e-6, gt=0)
    response_step: float = Field(default=1e-4, gt=0)


class OutputBlock(_Strict):
    directory: str = "out"
    formats: list[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"], min_length=1)


class SweepBlock(_Strict):
    parameter: str
    values: list[float] = Field(min_length=1)

    @field_validator("parameter")
    @classmethod
    def _scalar(cls, v: str) -> str:
        if v in ("coupling", "beta", "mixing") or (v.startswith("mass:") and len(v) > 5):
            return v
        raise ValueError(f"sweep target {v!r} is not a scalar parameter (coupling, beta, mixing, mass:<species>)")


class RunConfig(_Strict):
    model: ModelBlock
    solver: SolverBlock = Field(default_factory=SolverBlock)
    oracle: OracleBlock = Field(default_factory=OracleBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)
    sweep: Optional[SweepBlock] = None

    @model_validator(mode="after")
    def _sweep_species(self):
        if self.sweep is not None and self.sweep.parameter.startswith("mass:"):
            name = self.sweep.parameter[5:]
            if name not in [s.name for s in self.model.species]:
                raise ValueError(f"sweep names unknown species {name!r}")
        return self

    def with_value(self, parameter: str, value: float) -> "RunConfig":
        """Copy with one scalar parameter replaced (used by sweeps)."""
        if parameter == "coupling":
            return self.model_copy(update={"model": self.model.model_copy(update={"coupling": value})})
        if parameter == "beta":
            return self.model_copy(update={"model": self.model.model_copy(update={"beta": value})})
        if parameter == "mixing":
            return self.model_copy(update={"solver": self.solver.model_copy(update={"mixing": value})})
        name = parameter[5:]
        species = [s.model_copy(update={"mass": value}) if s.name == name else s for s in self.model.species]
        return self.model_copy(update={"model": self.model.model_copy(update={"species": species})})


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def validate_config(data) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"{source}: parse error{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return validate_config(data)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def emit_config(cfg: RunConfig) -> str:
    """YAML text with every default written out; ``parse_config_text(emit_config(c)) == c``."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def build_model(cfg: RunConfig) -> ModelSystem:
    m = cfg.model
    species = [SpeciesSpec(**s.model_dump()) for s in m.species]
    lattice = LatticeSpec.uniform(
        m.lattice.n_sites, m.lattice.spacing, boundary=m.lattice.boundary,
        softening=m.lattice.softening, coupling_scale=m.coupling,
    )
    fields = None
    if m.fields is not None:
        base = ExternalFields.zeros(len(species), lattice.n_sites)
        phi = base.phi if m.fields.phi is None else m.fields.phi
        f = base.f if m.fields.f is None else m.fields.f
        fields = ExternalFields(phi=phi, f=f)
    return ModelSystem(species, lattice, m.beta, fields)


def build_scf_config(cfg: RunConfig, scheme: str | None = None) -> ScfConfig:
    data = cfg.solver.model_dump()
    if scheme is not None:
        data["scheme"] = scheme
    return ScfConfig(**data)
