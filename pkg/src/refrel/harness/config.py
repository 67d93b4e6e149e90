"""Run configuration and the persisted run record."""

from __future__ import annotations

import dataclasses
import json
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import RefrelError
from ..inference import InferenceConfig
from ..metrics import MetricsConfig
from ..scene_synth import DatasetSpec


class ConfigError(RefrelError, ValueError):
    category = "config"


def _proposal_defaults():
    return {
        "embed_dim": 32,
        "hidden_dim": 128,
        "n_hidden": 3,
        "pos_iou_threshold": 0.5,
        "neg_ratio": 3,
        "max_iter": 2000,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "reg_weight": 1.0,
        "nms_threshold": 0.5,
    }


def _predicate_defaults():
    return {"channels": 32, "max_iter": 1500, "batch_size": 32, "learning_rate": 1e-3}


def _vector_defaults():
    return {"hidden_dim": 128, "n_hidden": 3}


@dataclass
class RunConfig:
    """Everything one experiment needs; JSON files may override any subset.

    ``seed`` drives the dataset and, through :meth:`component_seeds`, every
    model initialization and sampling stream.
    """

    seed: int = 0
    num_train: int = 2000
    num_test: int = 400
    dataset: dict = field(default_factory=dict)
    proposal: dict = field(default_factory=_proposal_defaults)
    predicate: dict = field(default_factory=_predicate_defaults)
    vector_predicate: dict = field(default_factory=_vector_defaults)
    inference: dict = field(default_factory=lambda: dataclasses.asdict(InferenceConfig()))
    metrics: dict = field(default_factory=lambda: dataclasses.asdict(MetricsConfig()))
    out: str = "runs/default"

    def __post_init__(self):
        for name in ("num_train", "num_test"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        try:
            self.dataset_spec
            self.inference_config
            self.metrics_config
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.metrics["recall_ranks"] = list(self.metrics.get("recall_ranks", (1, 5, 50)))

    @property
    def dataset_spec(self):
        return DatasetSpec(**{**self.dataset, "seed": self.seed})

    @property
    def inference_config(self):
        return InferenceConfig(**self.inference)

    def inference_for(self, mode):
        return InferenceConfig(**{**self.inference, "mode": mode})

    @property
    def metrics_config(self):
        m = dict(self.metrics)
        m["recall_ranks"] = tuple(m.get("recall_ranks", (1, 5, 50)))
        return MetricsConfig(**m)

    @property
    def out_dir(self):
        return Path(self.out)

    def component_seeds(self):
        """Independent integer seeds for each randomized component."""
        names = ("subject", "object", "predicate", "pairs", "ablation")
        states = np.random.SeedSequence(self.seed).generate_state(len(names))
        return {n: int(s) for n, s in zip(names, states)}

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = cls()
        merged = {}
        for f in dataclasses.fields(cls):
            default = getattr(base, f.name)
            if f.name in data:
                if isinstance(default, dict):
                    if not isinstance(data[f.name], dict):
                        raise ConfigError(f"{f.name} must be an object")
                    merged[f.name] = {**default, **data[f.name]}
                else:
                    merged[f.name] = data[f.name]
            else:
                merged[f.name] = default
        return cls(**merged)

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


def code_version():
    """``git describe`` of the source tree when available, else the package version."""
    from .. import __version__

    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunRecord:
    """Config snapshot, seeds, loss curves, metrics and timings of one run directory."""

    config: dict
    seeds: dict
    code_version: str
    loss_curves: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @classmethod
    def start(cls, config):
        return cls(config.to_dict(), config.component_seeds(), code_version())

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def save(self, path):
        write_json_atomic(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def load_or_start(cls, path, config):
        path = Path(path)
        if path.exists():
            rec = cls.load(path)
            rec.config = config.to_dict()
            rec.seeds = config.component_seeds()
            rec.code_version = code_version()
            return rec
        return cls.start(config)


def write_json_atomic(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)
