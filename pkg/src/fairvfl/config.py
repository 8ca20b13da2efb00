"""Experiment configuration: validation, canonical serialization with a
digest fingerprint, and the maintained presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .adversarial import LossWeights
from .digest import digest_text
from .errors import ConfigError
from .models import OptimParams, RepWidths
from .protocol.ldp import LdpConfig
from .data.synthetic import SyntheticSpec


@dataclass
class AttackConfig:
    k: int = 5
    hidden: int = 128
    lr: float = 1e-3
    batch: int = 128
    max_epochs: int = 100
    patience: int = 3
    privacy_fields: list[str] = field(default_factory=lambda: ["education", "relationship"])

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("attack ensemble size must be >= 1")


@dataclass
class ExperimentConfig:
    mode: str = "fairvfl"  # "fairvfl" | "vfl"
    dataset: dict = field(default_factory=dict)  # {"kind": "adult"|"synthetic", ...}
    n_platforms: int = 3
    partition_seed: int = 0
    widths: dict = field(default_factory=dict)
    lam: dict = field(default_factory=dict)  # per-feature adversarial weights
    gamma: dict = field(default_factory=dict)  # per-feature contrastive weights
    ldp: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)
    p_drop: float = 0.2
    batch_size: int = 32
    epochs: int = 10
    top_pool: int = 5
    seed: int = 0
    attack: dict = field(default_factory=dict)

    # -- typed views --------------------------------------------------------

    def rep_widths(self) -> RepWidths:
        return RepWidths(**self.widths) if self.widths else RepWidths()

    def loss_weights(self) -> LossWeights:
        return LossWeights(dict(self.lam), dict(self.gamma))

    def ldp_config(self) -> LdpConfig:
        return LdpConfig(**self.ldp) if self.ldp else LdpConfig()

    def optim_params(self) -> OptimParams:
        return OptimParams(**self.optim) if self.optim else OptimParams()

    def attack_config(self) -> AttackConfig:
        return AttackConfig(**self.attack) if self.attack else AttackConfig()

    def synthetic_spec(self) -> SyntheticSpec:
        if self.dataset.get("kind") != "synthetic":
            raise ConfigError("not a synthetic-dataset config")
        kw = {k: v for k, v in self.dataset.items() if k != "kind"}
        if "sensitive_classes" in kw:
            kw["sensitive_classes"] = dict(kw["sensitive_classes"])
        if "split_fractions" in kw:
            kw["split_fractions"] = tuple(kw["split_fractions"])
        return SyntheticSpec(**kw)

    # -- validation / serialization ----------------------------------------

    def validate(self) -> None:
        if self.mode not in ("fairvfl", "vfl"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        kind = self.dataset.get("kind")
        if kind not in ("adult", "synthetic"):
            raise ConfigError(f"dataset.kind must be 'adult' or 'synthetic', got {kind!r}")
        if kind == "adult" and not self.dataset.get("path"):
            raise ConfigError("adult dataset requires a 'path'")
        if kind == "synthetic":
            self.synthetic_spec().validate()
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 (contrastive requirement)")
        if self.epochs < 1 or self.n_platforms < 1 or self.top_pool < 1:
            raise ConfigError("epochs, n_platforms, and top_pool must be >= 1")
        if self.seed < 0 or self.partition_seed < 0:
            raise ConfigError("seeds must be non-negative")
        widths = self.rep_widths()
        widths.validate()
        features = set(widths.protected)
        if set(self.lam) != features or set(self.gamma) != features:
            raise ConfigError(
                f"lambda/gamma keys {sorted(set(self.lam) | set(self.gamma))} "
                f"must match protected widths {sorted(features)}"
            )
        self.loss_weights()
        self.ldp_config().validate()
        self.attack_config().validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return f"0x{digest_text(self.canonical_json()):016x}"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(obj)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        obj = self.to_dict()
        obj.update(kw)
        return ExperimentConfig.from_dict(obj)


def _adult_base(path: str = "data/adult") -> dict:
    return {
        "dataset": {"kind": "adult", "path": path, "sample_seed": 0},
        "n_platforms": 3,
        "widths": {"rep": 400, "protected": {"gender": 32, "age": 64}},
        "optim": {"lr": 1e-4},
        "batch_size": 32,
        "epochs": 10,
        "top_pool": 5,
        "p_drop": 0.2,
    }


def preset(name: str) -> ExperimentConfig:
    if name == "adult-fairvfl":
        base = _adult_base()
        return ExperimentConfig(mode="fairvfl",
                                lam={"gender": 1e2, "age": 1e1},
                                gamma={"gender": 0.25, "age": 0.25}, **base)
    if name == "adult-vfl":
        base = _adult_base()
        return ExperimentConfig(mode="vfl",
                                lam={"gender": 0.0, "age": 0.0},
                                gamma={"gender": 0.0, "age": 0.0}, **base)
    if name == "synthetic-smoke":
        return ExperimentConfig(
            mode="fairvfl",
            dataset={"kind": "synthetic", "n_samples": 1500, "n_platforms": 2,
                     "numeric_per_platform": 2, "categorical_per_platform": 1,
                     "cat_vocab": 4, "sensitive_classes": {"attr": 2},
                     "rho": 0.9, "seed": 0},
            n_platforms=2,
            widths={"rep": 64, "protected": {"attr": 16}, "emb_dim": 8,
                    "encoder_hidden": 32, "attn_heads": 4, "pool_hidden": 32,
                    "head_hidden": 32, "mapper_hidden": 32, "cdisc_hidden": 32,
                    "bdisc_hidden": 16},
            lam={"attr": 10.0},
            gamma={"attr": 0.25},
            optim={"lr": 1e-3},
            batch_size=32,
            epochs=3,
            attack={"privacy_fields": ["cat0_0", "cat1_0"], "max_epochs": 40},
        )
    raise ConfigError(f"unknown preset {name!r}; "
                      f"available: adult-fairvfl, adult-vfl, synthetic-smoke")


PRESET_NAMES = ("adult-fairvfl", "adult-vfl", "synthetic-smoke")
