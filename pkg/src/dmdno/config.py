"""Experiment configuration (strict JSON) and the run manifest written by every command."""
from __future__ import annotations

import dataclasses
import hashlib
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .dmd import DmdConfig
from .errors import InvalidInputError
from .fileio import atomic_write_text
from .model import OperatorSpec, build_spec
from .pde import GENERATORS, GridSpec
from .train import TrainConfig

EQUATIONS = tuple(GENERATORS)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; every net is [input -> hidden x depth -> latent_p]."""
    hidden: int = 32
    latent_p: int = 32
    depth: int = 2
    trunk_hidden: Optional[int] = None
    coord_scale: float = 10.0

    def __post_init__(self):
        for name in ("hidden", "latent_p", "depth"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"model.{name} must be >= 1")
        if self.trunk_hidden is not None and self.trunk_hidden < 1:
            raise InvalidInputError("model.trunk_hidden must be >= 1")
        if not self.coord_scale > 0:
            raise InvalidInputError("model.coord_scale must be > 0")


def _generator_keys(equation):
    sig = inspect.signature(GENERATORS[equation])
    return set(sig.parameters) - {"seed", "dmd", "grid"}


@dataclass(frozen=True)
class ExperimentConfig:
    equation: str
    generator: dict = field(default_factory=dict)
    grid: Optional[dict] = None  # {"nx", "ny", "dx", "dy"}; equation default when absent
    dmd: DmdConfig = DmdConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    seed: int = 0
    out_dir: str = "runs"
    baseline: bool = False

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise InvalidInputError(f"equation must be one of {EQUATIONS}, got {self.equation!r}")
        unknown = set(self.generator) - _generator_keys(self.equation)
        if unknown:
            raise InvalidInputError(f"unknown generator fields for {self.equation}: {sorted(unknown)}")
        n = self.generator.get("n_samples", 1000)
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise InvalidInputError(f"generator.n_samples must be a positive integer, got {n!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise InvalidInputError(f"seed must be a u64, got {self.seed!r}")
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", dataclasses.replace(self.train, seed=self.seed))
        if self.grid is not None:
            self.grid_spec()

    def grid_spec(self) -> Optional[GridSpec]:
        if self.grid is None:
            return None
        extra = set(self.grid) - {"nx", "ny", "dx", "dy"}
        if extra:
            raise InvalidInputError(f"unknown grid fields: {sorted(extra)}")
        try:
            return GridSpec(**self.grid)
        except TypeError as exc:
            raise InvalidInputError(f"grid: {exc}") from exc

    def with_seed(self, seed) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def generate(self, workers=0):
        kwargs = dict(self.generator)
        return GENERATORS[self.equation](grid=self.grid_spec(), seed=self.seed, dmd=self.dmd,
                                         workers=workers, **kwargs)

    def operator_spec(self, data) -> OperatorSpec:
        m = self.model
        return build_spec(data.conditions.shape[1], data.modes.shape[1], data.dynamics.shape[1],
                          out_channels=data.channels, hidden=m.hidden, latent_p=m.latent_p,
                          depth=m.depth, dmd_branches_enabled=not self.baseline,
                          trunk_hidden=m.trunk_hidden, coord_scale=m.coord_scale,
                          dynamics_variant=self.dmd.dynamics)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        del d["train"]["seed"]  # mirrors the top-level seed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise InvalidInputError("config must be a JSON object")
        d = dict(d)
        _reject_unknown(cls, d, "config")
        if "equation" not in d:
            raise InvalidInputError("config: missing required field 'equation'")
        for key, sub in (("dmd", DmdConfig), ("model", ModelConfig), ("train", TrainConfig)):
            if key in d:
                if not isinstance(d[key], dict):
                    raise InvalidInputError(f"{key} must be a JSON object")
                _reject_unknown(sub, d[key], key)
                if key == "train" and "seed" in d[key]:
                    raise InvalidInputError("train.seed is not configurable; use the top-level seed")
                try:
                    d[key] = sub(**d[key])
                except TypeError as exc:
                    raise InvalidInputError(f"{key}: {exc}") from exc
        if "generator" in d and not isinstance(d["generator"], dict):
            raise InvalidInputError("generator must be a JSON object")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidInputError(f"config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _reject_unknown(cls, d, where):
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise InvalidInputError(f"{where}: unknown fields {sorted(unknown)}")


# -- manifest ----------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Optional[dict] = None
    dataset_sha256: Optional[str] = None
    version: str = __version__
    timings: dict = field(default_factory=dict)  # seconds per phase
    metrics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256

    def record_output(self, path):
        self.outputs[Path(path).name] = sha256_file(path)

    def write(self, path):
        atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

