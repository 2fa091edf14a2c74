"""Experiment configuration: defaults, validation, JSON round trip, and the config hash."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from ..denoiser.model import ArchSpec
from ..denoiser.train import TrainConfig
from ..forward import Drift, Encoding, Storage
from ..phantom import PhantomConfig
from ..schedule import ConfigurationError, make_linear_schedule
from ..segmentation import SamMode

# Fields that locate or schedule a run but cannot change its results.
_UNHASHED = ("out", "workers")


def _default_phantom() -> dict:
    return PhantomConfig().to_dict()


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    # schedule
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # data
    phantom: dict = field(default_factory=_default_phantom)
    counts: dict = field(default_factory=lambda: {"train": 2000, "val": 100, "test": 200})
    # backend: "oracle" or "checkpoint:PATH"
    backend: str = "oracle"
    oracle_prior: float = 0.5
    oracle_location_weight: float = 0.3
    oracle_location_blur: float = 1.5
    arch: dict = field(default_factory=lambda: asdict(ArchSpec()))
    train: dict = field(default_factory=lambda: TrainConfig().to_dict())
    train_steps: int = 0  # 0 means run the configured epochs
    # selection and segmentation
    encoding: str = Encoding.DETERMINISTIC.value
    guidance: tuple = (0.5, 1.0, 2.0, 4.0, 8.0)
    rho: float = 0.98
    a: float = 0.90
    b: float = 0.98
    stride: int = 1
    max_step: int | None = None
    storage: str = Storage.STORE_ALL.value
    sam_mode: str = SamMode.FULL.value
    drift: str = Drift.UNGUIDED.value
    median_kernel: int = 5
    min_size: int = 4
    batch: int = 25  # samples per sweep batch; fixed so results do not depend on workers
    # ablations and baseline
    te_multipliers: tuple = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)
    fixed_grid: int = 50
    baseline_lambdas: tuple = (10, 25, 50)
    # placement
    out: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "guidance", tuple(float(w) for w in self.guidance))
        object.__setattr__(self, "te_multipliers", tuple(float(m) for m in self.te_multipliers))
        object.__setattr__(self, "baseline_lambdas", tuple(int(x) for x in self.baseline_lambdas))
        object.__setattr__(self, "phantom", dict(self.phantom))
        object.__setattr__(self, "counts", {k: int(v) for k, v in self.counts.items()})

    # validation

    def validate(self) -> "ExperimentConfig":
        try:
            make_linear_schedule(self.T, self.beta_start, self.beta_end)
            PhantomConfig.from_dict(self.phantom)
            ArchSpec(**self.arch)
            TrainConfig(**self.train)
            Encoding(self.encoding)
            Storage(self.storage)
            SamMode(self.sam_mode)
            Drift(self.drift)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(str(exc)) from exc
        checks = [
            (self.backend == "oracle" or (self.backend.startswith("checkpoint:") and len(self.backend) > 11),
             f"backend must be 'oracle' or 'checkpoint:PATH', got {self.backend!r}"),
            (set(self.counts) <= {"train", "val", "test"} and all(v >= 0 for v in self.counts.values()),
             "counts must map train/val/test to non-negative integers"),
            (len(self.guidance) > 0 and list(self.guidance) == sorted(self.guidance)
             and min(self.guidance) >= 0, "guidance candidates must be non-negative and ascending"),
            (0.0 < self.rho <= 1.0, "rho must lie in (0, 1]"),
            (0.0 <= self.a < self.b <= 1.0, "need 0 <= a < b <= 1"),
            (self.stride >= 1, "stride must be >= 1"),
            (self.max_step is None or 1 <= self.max_step <= self.T, "max_step must lie in 1..T"),
            (self.median_kernel >= 1 and self.median_kernel % 2 == 1, "median_kernel must be odd"),
            (self.min_size >= 1, "min_size must be >= 1"),
            (self.batch >= 1 and self.workers >= 1, "batch and workers must be >= 1"),
            (0.0 < self.oracle_prior < 1.0, "oracle_prior must lie in (0, 1)"),
            (0.0 <= self.oracle_location_weight <= 1.0, "oracle_location_weight must lie in [0, 1]"),
            (self.oracle_location_blur >= 0.0, "oracle_location_blur must be >= 0"),
            (all(1 <= lam <= self.T for lam in self.baseline_lambdas), "baseline lambdas must lie in 1..T"),
            (self.fixed_grid >= 2, "fixed_grid must be >= 2"),
            (self.train_steps >= 0, "train_steps must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        return self

    # accessors

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def checkpoint_path(self) -> Path | None:
        return Path(self.backend.split(":", 1)[1]) if self.backend.startswith("checkpoint:") else None

    def schedule(self):
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)

    def phantom_config(self) -> PhantomConfig:
        return PhantomConfig.from_dict(self.phantom)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def arch_spec(self) -> ArchSpec:
        return ArchSpec(**self.arch)

    # serialization and hashing

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("guidance", "te_multipliers", "baseline_lambdas"):
            d[k] = list(d[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hashed_view(self) -> dict[str, Any]:
        d = self.to_dict()
        for k in _UNHASHED:
            d.pop(k)
        if self.backend.startswith("checkpoint:"):
            d["backend"] = "checkpoint"  # the file location is not part of the experiment
        return d

    def digest(self) -> str:
        blob = json.dumps(self.hashed_view(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        merged = dict(d)
        for k in ("phantom", "arch", "train"):
            if k in merged:  # nested blocks merge over their defaults
                merged[k] = {**getattr(base, k), **merged[k]}
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self
