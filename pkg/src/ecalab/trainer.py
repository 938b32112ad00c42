"""Source pretraining, source-free adaptation and evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import diffcore as dc
from . import domain_geometry as dg
from . import evidential as ev
from . import graph_contrastive as gc
from . import network as nw
from .blendbench import Dataset
from .errors import ConfigError, EcaError

log = logging.getLogger(__name__)

ABLATIONS = ("cel-only", "con-unweighted", "con-full")

# Offsets added to the run seed for each consumer of randomness.
SEED_OFFSETS = {
    "data": 0,
    "init": 101,
    "pretrain": 202,
    "adapt": 303,
    "views": 404,
    "kmeans": 505,
}


def sub_seed(seed: int, component: str) -> int:
    return int(seed) + SEED_OFFSETS[component]


class TrainingDivergence(EcaError, RuntimeError):
    pass


@dataclass
class PretrainConfig:
    lr: float = 0.05
    momentum: float = 0.95
    epochs: int = 30
    batch_size: int = 64
    hidden: list[int] = field(default_factory=lambda: [32, 32])

    def validate(self):
        if self.lr < 0:
            raise ConfigError("must be >= 0", "pretrain.lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must be in [0, 1)", "pretrain.momentum")
        if self.epochs < 0:
            raise ConfigError("must be >= 0", "pretrain.epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "pretrain.batch_size")
        if len(self.hidden) < 2 or any(h < 1 for h in self.hidden):
            raise ConfigError("need >= 2 positive hidden widths", "pretrain.hidden")


@dataclass
class AdaptConfig:
    lr: float = 0.01
    momentum: float = 0.95
    beta: float = 1.0
    lambda0: float = 0.01
    epochs: int = 10
    batch_size: int = 64
    tau: float = 0.1
    k: int = 3
    fit_term: bool = True
    selection_u_direction: str = "low"
    ablate: str = "con-full"
    lr_decay: bool = False

    def validate(self):
        if self.lr < 0:
            raise ConfigError("must be >= 0", "adapt.lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must be in [0, 1)", "adapt.momentum")
        if self.beta < 0:
            raise ConfigError("must be >= 0", "adapt.beta")
        if not 0 < self.lambda0 < 1:
            raise ConfigError("must be in (0, 1)", "adapt.lambda0")
        if self.epochs < 0:
            raise ConfigError("must be >= 0", "adapt.epochs")
        if self.batch_size < 2:
            raise ConfigError("contrastive pairs need batch_size >= 2", "adapt.batch_size")
        if self.tau <= 0:
            raise ConfigError("must be > 0", "adapt.tau")
        if self.k < 2:
            raise ConfigError("must be >= 2", "adapt.k")
        if self.selection_u_direction not in ("low", "high"):
            raise ConfigError("must be 'low' or 'high'", "adapt.selection_u_direction")
        if self.ablate not in ABLATIONS:
            raise ConfigError(f"must be one of {ABLATIONS}", "adapt.ablate")

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.ablate == "cel-only" else self.beta


class SGDMomentum:
    """Classical momentum: ``v <- mu * v + g``; ``theta <- theta - lr * v``."""

    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity: list[np.ndarray] | None = None

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if self.velocity is None:
            self.velocity = [np.zeros_like(a) for a in arrays]
        out = []
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.velocity[i] = self.momentum * self.velocity[i] + g
            out.append(a - self.lr * self.velocity[i])
        return out


def _step(params: nw.BackboneParams, loss: dc.Tensor, opt: SGDMomentum) -> nw.BackboneParams:
    if not math.isfinite(loss.item()):
        raise TrainingDivergence(f"loss became {loss.item()}")
    plist = params.parameters()
    grads = dc.backward(loss)
    g = [grads.get(p, np.zeros(p.shape)) for p in plist]
    new = opt.step([p.values for p in plist], g)
    if not all(np.all(np.isfinite(a)) for a in new):
        raise TrainingDivergence("non-finite parameters after update")
    return params.replace(new)


def _batches(n: int, size: int, rng: np.random.Generator, min_size: int = 1):
    order = rng.permutation(n)
    for start in range(0, n, size):
        idx = order[start:start + size]
        if len(idx) >= min_size:
            yield idx


def init_params(input_dim: int, num_classes: int, config: PretrainConfig, seed: int):
    return nw.init(sub_seed(seed, "init"), [input_dim, *config.hidden, num_classes])


def pretrain_source(params: nw.BackboneParams, source: Dataset, config: PretrainConfig,
                    seed: int = 0) -> tuple[nw.BackboneParams, list[float]]:
    """Fit the backbone to labeled source data with the EDL expected cross-entropy."""
    config.validate()
    rng = np.random.default_rng(sub_seed(seed, "pretrain"))
    opt = SGDMomentum(config.lr, config.momentum)
    x, y = source.features, source.labels
    history = []
    for epoch in range(config.epochs):
        losses = []
        for idx in _batches(len(y), config.batch_size, rng):
            _, logits = nw.forward(params, x[idx])
            loss = ev.edl_fit_loss(ev.belief_from_logits(logits), y[idx])
            params = _step(params, loss, opt)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        log.debug("pretrain epoch %d loss %.4f", epoch, history[-1])
    return params, history


@dataclass
class EvalResult:
    overall: float
    per_domain: dict[int, float]
    counts: dict[int, int]


def predict(params: nw.BackboneParams, features) -> np.ndarray:
    return np.argmax(nw.predict_logits(params, features), axis=1)


def evaluate(params: nw.BackboneParams, dataset: Dataset) -> EvalResult:
    """Accuracy of the argmax prediction, overall and per true domain."""
    if len(dataset) == 0:
        return EvalResult(0.0, {}, {})
    correct = predict(params, dataset.features) == dataset.labels
    per, counts = {}, {}
    for d in np.unique(dataset.true_domain):
        rows = dataset.true_domain == d
        per[int(d)] = float(correct[rows].mean())
        counts[int(d)] = int(rows.sum())
    return EvalResult(float(correct.mean()), per, counts)


@dataclass
class SelectionReport:
    acc_selected: float
    acc_rejected: float
    u_selected: float
    u_rejected: float
    fraction: float


def selection_report(params: nw.BackboneParams, dataset: Dataset,
                     u_direction: str = "low") -> SelectionReport:
    """Split a labeled set with whole-set thresholds and compare the two halves."""
    _, logits = nw.forward(params, dataset.features)
    belief = ev.belief_from_logits(logits)
    mask = ev.select_high_quality(belief, u_direction)
    correct = belief.pseudo_label == dataset.labels
    u = belief.uncertainty.values

    def m(a, rows):
        return float(a[rows].mean()) if rows.any() else float("nan")

    return SelectionReport(m(correct, mask.selected), m(correct, mask.rejected),
                           m(u, mask.selected), m(u, mask.rejected), mask.fraction)


@dataclass
class EpochMetrics:
    epoch: int
    loss_cel: float
    loss_con: float
    loss_total: float
    acc_overall: float
    acc_domains: list[float]
    sel_frac: float
    u_sel: float
    u_rej: float
    eta_c: float
    eta_u: float


@dataclass
class AdaptResult:
    params: nw.BackboneParams
    metrics: list[EpochMetrics]
    domains: dg.DomainModel | None


Evaluator = Callable[[nw.BackboneParams], EvalResult]


def adapt(params: nw.BackboneParams, features: np.ndarray, config: AdaptConfig,
          seed: int = 0, evaluator: Evaluator | None = None) -> AdaptResult:
    """Source-free adaptation on unlabeled target features.

    Only features are accepted; accuracy columns in the metrics come from the
    optional `evaluator` callback, which closes over labels the loop never sees.
    """
    config.validate()
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    rng = np.random.default_rng(sub_seed(seed, "adapt"))
    view_rng = np.random.default_rng(sub_seed(seed, "views"))
    opt = SGDMomentum(config.lr, config.momentum)
    per_epoch = sum(1 for start in range(0, n, config.batch_size)
                    if min(config.batch_size, n - start) >= 2)
    schedule = ev.AnnealSchedule(config.lambda0, max(1, config.epochs * per_epoch))
    beta = config.effective_beta
    need_graph = beta > 0
    domains = None
    step = 0
    metrics = []
    for epoch in range(config.epochs):
        if need_graph:
            shallow = nw.shallow_features(params, x).values
            if domains is None:
                domains = dg.cluster_domains(x, shallow, config.k, sub_seed(seed, "kmeans"))
            else:
                domains = dg.refresh(domains, x, shallow, sub_seed(seed, "kmeans") + epoch)
        if config.lr_decay:
            opt.lr = config.lr * (1.0 - epoch / max(1, config.epochs)) ** 0.75
        acc = _EpochAccumulator()
        for idx in _batches(n, config.batch_size, rng, min_size=2):
            views = gc.make_views(x[idx], int(view_rng.integers(2**31)))
            feats, logits = nw.forward(params, views.x)
            belief = ev.belief_from_logits(logits)
            mask = ev.select_high_quality(belief, config.selection_u_direction)
            lam = ev.anneal(schedule, step)
            l_cel = ev.cel_loss(belief, mask, lam)
            n_views = len(belief)
            total = l_cel * (1.0 / n_views)
            if config.fit_term:
                total = total + ev.pseudo_label_fit_loss(belief, mask)
            l_con = None
            if need_graph:
                graph = gc.build_graph(belief, mask, domains, idx[views.origin],
                                       unweighted=config.ablate == "con-unweighted")
                l_con = gc.contrastive_loss(graph, feats.z, config.tau, views.pair,
                                            valid=~feats.zero_rows)
                total = total + (beta / n_views) * l_con
            params = _step(params, total, opt)
            acc.add(l_cel.item(), 0.0 if l_con is None else l_con.item(), total.item(),
                    belief, mask)
            step += 1
        if acc.batches and acc.n_selected == 0:
            log.warning("epoch %d: no sample passed selection", epoch)
        ev_res = evaluator(params) if evaluator is not None else None
        metrics.append(acc.finish(epoch, ev_res))
    return AdaptResult(params, metrics, domains)


class _EpochAccumulator:
    def __init__(self):
        self.batches = 0
        self.cel = self.con = self.total = 0.0
        self.eta_c = self.eta_u = 0.0
        self.n_views = self.n_selected = 0
        self.u_sel = self.u_rej = 0.0

    def add(self, cel, con, total, belief, mask):
        self.batches += 1
        self.cel += cel
        self.con += con
        self.total += total
        self.eta_c += mask.eta_c
        self.eta_u += mask.eta_u
        u = belief.uncertainty.values
        self.n_views += len(u)
        self.n_selected += int(mask.selected.sum())
        self.u_sel += float(u[mask.selected].sum())
        self.u_rej += float(u[mask.rejected].sum())

    def finish(self, epoch, ev_res: EvalResult | None) -> EpochMetrics:
        b = max(self.batches, 1)
        n_rej = self.n_views - self.n_selected
        nan = float("nan")
        doms = [] if ev_res is None else [ev_res.per_domain[d] for d in sorted(ev_res.per_domain)]
        return EpochMetrics(
            epoch=epoch, loss_cel=self.cel / b, loss_con=self.con / b, loss_total=self.total / b,
            acc_overall=nan if ev_res is None else ev_res.overall, acc_domains=doms,
            sel_frac=self.n_selected / self.n_views if self.n_views else 0.0,
            u_sel=self.u_sel / self.n_selected if self.n_selected else nan,
            u_rej=self.u_rej / n_rej if n_rej else nan,
            eta_c=self.eta_c / b, eta_u=self.eta_u / b)


def metrics_csv(metrics: list[EpochMetrics], n_domains: int | None = None) -> str:
    if n_domains is None:
        n_domains = max((len(m.acc_domains) for m in metrics), default=0)
    cols = ["epoch", "loss_cel", "loss_con", "loss_total", "acc_overall",
            *[f"acc_d{j}" for j in range(n_domains)],
            "sel_frac", "u_sel", "u_rej", "eta_c", "eta_u"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for m in metrics:
        doms = list(m.acc_domains) + [float("nan")] * (n_domains - len(m.acc_domains))
        w.writerow([m.epoch, *(repr(float(v)) for v in (
            m.loss_cel, m.loss_con, m.loss_total, m.acc_overall, *doms,
            m.sel_frac, m.u_sel, m.u_rej, m.eta_c, m.eta_u))])
    return buf.getvalue()


def config_dict(cfg) -> dict:
    return asdict(cfg)


def config_from_dict(cls, doc: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", section)
    cfg = cls(**doc)
    cfg.validate()
    return cfg
