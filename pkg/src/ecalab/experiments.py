"""End-to-end pipelines shared by the CLI and the acceptance suite."""

from __future__ import annotations

import copy
from dataclasses import dataclass

from . import blendbench as bb
from . import network as nw
from . import trainer as tr
from .config import RunConfig


@dataclass
class Prepared:
    config: RunConfig
    data: dict[str, bb.Dataset]
    source_model: nw.BackboneParams
    source_test_acc: float


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    out = copy.deepcopy(cfg)
    out.seed = seed
    out.validate()
    return out


def prepare(cfg: RunConfig) -> Prepared:
    """Generate data and pretrain the source model for one seed."""
    cfg.validate()
    data = bb.generate(cfg.blend)
    params = tr.init_params(cfg.blend.input_dim, cfg.blend.num_classes, cfg.pretrain, cfg.seed)
    params, _ = tr.pretrain_source(params, data["source-train"], cfg.pretrain, cfg.seed)
    acc = tr.evaluate(params, data["source-test"]).overall
    return Prepared(cfg, data, params, acc)


def target_evaluator(dataset: bb.Dataset):
    """Closure over held labels; the adaptation loop only ever receives features."""
    return lambda params: tr.evaluate(params, dataset)


def adapt_target(prep: Prepared, adapt_cfg: tr.AdaptConfig | None = None) -> tr.AdaptResult:
    blend = prep.data["target-blend"]
    return tr.adapt(prep.source_model, blend.features, adapt_cfg or prep.config.adapt,
                    prep.config.seed, evaluator=target_evaluator(blend))


@dataclass
class RunSummary:
    seed: int
    label: str
    source_only: float
    adapted: float
    result: tr.AdaptResult


def ablation(prep: Prepared) -> list[RunSummary]:
    base = prep.data["target-blend"]
    before = tr.evaluate(prep.source_model, base).overall
    out = []
    for mode in tr.ABLATIONS:
        cfg = copy.deepcopy(prep.config.adapt)
        cfg.ablate = mode
        res = adapt_target(prep, cfg)
        out.append(RunSummary(prep.config.seed, mode, before,
                              tr.evaluate(res.params, base).overall, res))
    return out


def sweep_k(prep: Prepared, values) -> list[RunSummary]:
    base = prep.data["target-blend"]
    before = tr.evaluate(prep.source_model, base).overall
    out = []
    for k in values:
        cfg = copy.deepcopy(prep.config.adapt)
        cfg.k = int(k)
        res = adapt_target(prep, cfg)
        out.append(RunSummary(prep.config.seed, str(k), before,
                              tr.evaluate(res.params, base).overall, res))
    return out
