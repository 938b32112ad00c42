"""Command-line entry point: ``ecalab <command> [--config PATH] [overrides]``.

Exit codes: 0 success, 2 configuration error (including missing upstream
artifacts), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import blendbench as bb
from . import domain_geometry as dg
from . import experiments as ex
from . import network as nw
from . import trainer as tr
from .config import RunConfig, field_reference
from .errors import ConfigError, EcaError

log = logging.getLogger("ecalab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class MissingArtifact(ConfigError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing {path} (run `ecalab {producer}` first)")
        self.path = path


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags below override its fields")
    common.add_argument("--outdir", help="output root (config: outdir)")
    common.add_argument("--seed", type=int, help="run seed (config: seed)")
    common.add_argument("--k", type=int, help="pseudo-domain count (config: adapt.k)")
    common.add_argument("--epochs", type=int, help="adaptation epochs (config: adapt.epochs)")
    common.add_argument("--lr", type=float, help="adaptation learning rate (config: adapt.lr)")
    common.add_argument("--beta", type=float, help="contrastive weight (config: adapt.beta)")
    common.add_argument("--no-fit-term", action="store_true",
                        help="drop the pseudo-label fit term (config: adapt.fit_term=false)")
    common.add_argument("--selection-u-direction", choices=("low", "high"),
                        help="select u < eta_u (low) or u > eta_u (high)")
    common.add_argument("--ablate", choices=tr.ABLATIONS, help="loss variant (config: adapt.ablate)")
    common.add_argument("--lr-decay", action="store_true", help="enable adaptation lr decay")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="ecalab",
        description="Source-free blended-target adaptation on synthetic benchmarks.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config fields (defaults):\n" + field_reference(),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the benchmark datasets")
    sub.add_parser("pretrain", parents=[common], help="train the source model")
    sub.add_parser("adapt", parents=[common], help="adapt the source model on the target blend")
    sub.add_parser("evaluate", parents=[common], help="score source and adapted checkpoints")
    p = sub.add_parser("ablate", parents=[common], help="cel-only / con-unweighted / con-full")
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: --seed)")
    p = sub.add_parser("sweep-k", parents=[common], help="adapt with several pseudo-domain counts")
    p.add_argument("--values", type=_int_list, default=[2, 3, 4, 5])
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: --seed)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.outdir is not None:
        cfg.outdir = args.outdir
    if args.seed is not None:
        cfg.seed = args.seed
    a = cfg.adapt
    for flag, attr in (("k", "k"), ("epochs", "epochs"), ("lr", "lr"), ("beta", "beta"),
                       ("selection_u_direction", "selection_u_direction"),
                       ("ablate", "ablate")):
        val = getattr(args, flag)
        if val is not None:
            setattr(a, attr, val)
    if args.no_fit_term:
        a.fit_term = False
    if args.lr_decay:
        a.lr_decay = True
    cfg.validate()
    return cfg


def _stage_dir(cfg: RunConfig, command: str) -> Path:
    d = Path(cfg.outdir) / command
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(cfg.dumps(), encoding="utf-8")
    return d


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise MissingArtifact(path, producer)
    return path


def _dataset(cfg: RunConfig, split: str) -> bb.Dataset:
    return bb.read(_require(Path(cfg.outdir) / "generate" / f"{split}.csv", "generate"))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_generate(cfg: RunConfig, args) -> None:
    out = _stage_dir(cfg, "generate")
    for split, ds in bb.generate(cfg.blend).items():
        bb.write(ds, out / f"{split}.csv")
    print(f"wrote datasets to {out}")


def cmd_pretrain(cfg: RunConfig, args) -> None:
    source = _dataset(cfg, "source-train")
    test = _dataset(cfg, "source-test")
    out = _stage_dir(cfg, "pretrain")
    params = tr.init_params(source.features.shape[1], cfg.blend.num_classes, cfg.pretrain, cfg.seed)
    params, history = tr.pretrain_source(params, source, cfg.pretrain, cfg.seed)
    nw.save_checkpoint(params, out / "checkpoint.json")
    _write_csv(out / "metrics.csv", ["epoch", "loss"],
               [[i, repr(v)] for i, v in enumerate(history)])
    acc = tr.evaluate(params, test).overall
    print(f"source-test accuracy {acc:.4f}")


def cmd_adapt(cfg: RunConfig, args) -> None:
    ckpt = _require(Path(cfg.outdir) / "pretrain" / "checkpoint.json", "pretrain")
    blend = _dataset(cfg, "target-blend")
    params = nw.load_checkpoint(ckpt)
    out = _stage_dir(cfg, "adapt")
    res = tr.adapt(params, blend.features, cfg.adapt, cfg.seed,
                   evaluator=ex.target_evaluator(blend))
    nw.save_checkpoint(res.params, out / "checkpoint.json")
    (out / "metrics.csv").write_text(tr.metrics_csv(res.metrics, cfg.blend.k), encoding="utf-8")
    if res.domains is not None:
        dg.save(res.domains, out / "domains.json")
    if res.metrics:
        print(f"target-blend accuracy {res.metrics[-1].acc_overall:.4f}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    root = Path(cfg.outdir)
    models = {"source": _require(root / "pretrain" / "checkpoint.json", "pretrain")}
    adapted = root / "adapt" / "checkpoint.json"
    if adapted.is_file():
        models["adapted"] = adapted
    splits = {s: _dataset(cfg, s) for s in ("target-blend", "target-test")}
    out = _stage_dir(cfg, "evaluate")
    k = cfg.blend.k
    rows = []
    for name, path in models.items():
        params = nw.load_checkpoint(path)
        for split, ds in splits.items():
            r = tr.evaluate(params, ds)
            s = tr.selection_report(params, ds, cfg.adapt.selection_u_direction)
            rows.append([name, split, repr(r.overall),
                         *[repr(r.per_domain.get(j, float("nan"))) for j in range(k)],
                         repr(s.fraction), repr(s.acc_selected), repr(s.acc_rejected),
                         repr(s.u_selected), repr(s.u_rejected)])
            print(f"{name:8s} {split:13s} acc {r.overall:.4f}")
    _write_csv(out / "results.csv",
               ["model", "split", "acc_overall", *[f"acc_d{j}" for j in range(k)],
                "sel_frac", "acc_sel", "acc_rej", "u_sel", "u_rej"], rows)


def _seeds(cfg, args) -> list[int]:
    return args.seeds if args.seeds else [cfg.seed]


def cmd_ablate(cfg: RunConfig, args) -> None:
    out = _stage_dir(cfg, "ablate")
    rows = []
    for seed in _seeds(cfg, args):
        prep = ex.prepare(ex.with_seed(cfg, seed))
        for run in ex.ablation(prep):
            (out / f"metrics_{run.label}_seed{seed}.csv").write_text(
                tr.metrics_csv(run.result.metrics, cfg.blend.k), encoding="utf-8")
            rows.append([seed, run.label, repr(run.source_only), repr(run.adapted)])
            print(f"seed {seed} {run.label:15s} {run.source_only:.4f} -> {run.adapted:.4f}")
    _write_csv(out / "summary.csv", ["seed", "mode", "acc_source_only", "acc_final"], rows)


def cmd_sweep_k(cfg: RunConfig, args) -> None:
    if any(k < 2 for k in args.values):
        raise ConfigError(f"all k must be >= 2, got {args.values}", "--values")
    out = _stage_dir(cfg, "sweep-k")
    rows = []
    for seed in _seeds(cfg, args):
        prep = ex.prepare(ex.with_seed(cfg, seed))
        for run in ex.sweep_k(prep, args.values):
            (out / f"metrics_k{run.label}_seed{seed}.csv").write_text(
                tr.metrics_csv(run.result.metrics, cfg.blend.k), encoding="utf-8")
            rows.append([run.label, seed, repr(run.source_only), repr(run.adapted)])
            print(f"seed {seed} k={run.label} {run.source_only:.4f} -> {run.adapted:.4f}")
    _write_csv(out / "summary.csv", ["k", "seed", "acc_source_only", "acc_final"], rows)


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep-k": cmd_sweep_k,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EcaError, ArithmeticError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
