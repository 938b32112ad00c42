"""Run configuration: one JSON document covering data, pretraining and adaptation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .blendbench import BlendSpec
from .errors import ConfigError
from .trainer import AdaptConfig, PretrainConfig, config_from_dict, sub_seed

TOP_LEVEL = ("seed", "outdir", "blend", "pretrain", "adapt")


@dataclass
class RunConfig:
    seed: int = 0
    outdir: str = "runs"
    blend: BlendSpec = field(default_factory=BlendSpec)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)

    def __post_init__(self):
        self.blend.seed = sub_seed(self.seed, "data")

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("must be a non-negative integer", "seed")
        self.blend.seed = sub_seed(self.seed, "data")
        self.blend.validate()
        self.pretrain.validate()
        self.adapt.validate()

    def to_dict(self) -> dict:
        blend = asdict(self.blend)
        blend.pop("seed")
        return {"seed": self.seed, "outdir": self.outdir, "blend": blend,
                "pretrain": asdict(self.pretrain), "adapt": asdict(self.adapt)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object", "config")
        unknown = set(doc) - set(TOP_LEVEL)
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "config")
        blend_doc = dict(doc.get("blend", {}))
        if "seed" in blend_doc:
            raise ConfigError("data seed derives from the top-level seed", "blend.seed")
        unknown = set(blend_doc) - {f.name for f in fields(BlendSpec)}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "blend")
        try:
            blend = BlendSpec(**blend_doc)
            pre = config_from_dict(PretrainConfig, doc.get("pretrain", {}), "pretrain")
            ada = config_from_dict(AdaptConfig, doc.get("adapt", {}), "adapt")
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(doc.get("seed", 0), doc.get("outdir", "runs"), blend, pre, ada)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"no such file {p}", "config")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", "config") from None
        return cls.from_dict(doc)


def field_reference() -> str:
    """Human-readable list of every config field and its default."""
    cfg = RunConfig()
    lines = []

    def walk(prefix, d):
        for key in sorted(d):
            val = d[key]
            if isinstance(val, dict):
                walk(f"{prefix}{key}.", val)
            else:
                lines.append(f"  {prefix}{key} = {json.dumps(val)}")

    walk("", cfg.to_dict())
    return "\n".join(lines)
