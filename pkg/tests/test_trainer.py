import inspect
import logging

import numpy as np
import pytest

from ecalab import blendbench as bb
from ecalab import evidential as ev
from ecalab import experiments as ex
from ecalab import network as nw
from ecalab import trainer as tr
from ecalab.config import RunConfig
from ecalab.diffcore import Tensor
from ecalab.errors import ConfigError


@pytest.fixture(scope="module")
def small():
    spec = bb.BlendSpec(n_source_train=300, n_source_test=100, n_per_target=60,
                        n_target_test_per_target=20, seed=1)
    data = bb.generate(spec)
    cfg = tr.PretrainConfig(epochs=5)
    params, _ = tr.pretrain_source(tr.init_params(4, 6, cfg, 1), data["source-train"], cfg, 1)
    return data, params


def _same(a, b):
    return all(x.values.tobytes() == y.values.tobytes()
               for x, y in zip(a.parameters(), b.parameters()))


def _two_class(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, 3)) * 0.5
    x[:, 0] += np.where(y == 1, 2.0, -2.0)
    return bb.Dataset(x, y.astype(np.int64), np.full(n, -1), "source-train")


def test_momentum_hand_stepped():
    opt = tr.SGDMomentum(lr=0.1, momentum=0.95)
    theta = [np.array([1.0, 2.0])]
    theta = opt.step(theta, [np.array([1.0, -1.0])])
    np.testing.assert_allclose(theta[0], [0.9, 2.1], rtol=0, atol=1e-15)
    theta = opt.step(theta, [np.array([0.5, 0.5])])
    # v = 0.95 * [1, -1] + [0.5, 0.5] = [1.45, -0.45]
    np.testing.assert_allclose(opt.velocity[0], [1.45, -0.45], rtol=0, atol=1e-15)
    np.testing.assert_allclose(theta[0], [0.755, 2.145], rtol=0, atol=1e-15)


def test_zero_lr_leaves_params(small):
    data, params = small
    cfg = tr.AdaptConfig(lr=0.0, epochs=1)
    res = tr.adapt(params, data["target-blend"].features, cfg, seed=0)
    assert _same(res.params, params)
    p2, _ = tr.pretrain_source(params, data["source-train"], tr.PretrainConfig(lr=0.0, epochs=1))
    assert _same(p2, params)


def test_zero_epochs_leave_params(small):
    data, params = small
    p2, hist = tr.pretrain_source(params, data["source-train"], tr.PretrainConfig(epochs=0))
    assert hist == [] and _same(p2, params)
    res = tr.adapt(params, data["target-blend"].features, tr.AdaptConfig(epochs=0))
    assert res.metrics == [] and _same(res.params, params)


def test_separable_two_class_source():
    for seed in range(5):
        train, test = _two_class(seed, 200), _two_class(seed + 100, 200)
        cfg = tr.PretrainConfig(epochs=50)
        params, _ = tr.pretrain_source(tr.init_params(3, 2, cfg, seed), train, cfg, seed)
        assert tr.evaluate(params, test).overall >= 0.95


def test_pretrain_deterministic():
    train = _two_class(0, 100)
    cfg = tr.PretrainConfig(epochs=3)
    a, ha = tr.pretrain_source(tr.init_params(3, 2, cfg, 7), train, cfg, 7)
    b, hb = tr.pretrain_source(tr.init_params(3, 2, cfg, 7), train, cfg, 7)
    assert _same(a, b) and ha == hb


def test_pretrain_reduces_loss():
    train = _two_class(1, 200)
    cfg = tr.PretrainConfig(epochs=10)
    _, hist = tr.pretrain_source(tr.init_params(3, 2, cfg, 1), train, cfg, 1)
    assert hist[-1] < hist[0]


def test_nan_loss_aborts():
    p = nw.init(0, [2, 3, 3, 2])
    with pytest.raises(tr.TrainingDivergence):
        tr._step(p, Tensor(float("nan")), tr.SGDMomentum(0.1, 0.9))


def test_adapt_accepts_features_only():
    names = list(inspect.signature(tr.adapt).parameters)
    assert names == ["params", "features", "config", "seed", "evaluator"]


def test_adapt_metrics_deterministic(small):
    data, params = small
    blend = data["target-blend"]
    cfg = tr.AdaptConfig(epochs=2)
    runs = [tr.adapt(params, blend.features, cfg, 3, ex.target_evaluator(blend)) for _ in range(2)]
    a, b = (tr.metrics_csv(r.metrics, 3) for r in runs)
    assert a == b
    assert a.splitlines()[0] == ("epoch,loss_cel,loss_con,loss_total,acc_overall,acc_d0,acc_d1,"
                                 "acc_d2,sel_frac,u_sel,u_rej,eta_c,eta_u")
    assert len(a.splitlines()) == 3


def test_adapt_metric_ranges(small):
    data, params = small
    blend = data["target-blend"]
    res = tr.adapt(params, blend.features, tr.AdaptConfig(epochs=2), 0, ex.target_evaluator(blend))
    for m in res.metrics:
        assert 0 <= m.acc_overall <= 1 and all(0 <= a <= 1 for a in m.acc_domains)
        assert 0 <= m.sel_frac <= 1
        assert m.loss_cel >= 0
    assert res.domains is not None and res.domains.k == 3


def test_cel_only_skips_graph(small):
    data, params = small
    res = tr.adapt(params, data["target-blend"].features, tr.AdaptConfig(epochs=1, ablate="cel-only"))
    assert res.domains is None
    assert res.metrics[0].loss_con == 0.0


def test_empty_selection_warns_and_continues(small, monkeypatch, caplog):
    data, params = small

    def nothing(belief, u_direction="low"):
        n = len(belief)
        return ev.SelectionMask(0.0, 0.0, np.zeros(n, dtype=bool))

    monkeypatch.setattr(ev, "select_high_quality", nothing)
    with caplog.at_level(logging.WARNING, logger="ecalab"):
        res = tr.adapt(params, data["target-blend"].features, tr.AdaptConfig(epochs=2))
    assert caplog.text.count("no sample passed selection") == 2
    assert len(res.metrics) == 2 and not _same(res.params, params)
    assert res.metrics[0].sel_frac == 0.0


def test_perfect_predictor(small):
    data, params = small
    ds = data["target-test"]
    perfect = bb.Dataset(ds.features, tr.predict(params, ds.features), ds.true_domain, ds.split)
    r = tr.evaluate(params, perfect)
    assert r.overall == 1.0 and all(v == 1.0 for v in r.per_domain.values())


def test_random_labels_near_chance():
    rng = np.random.default_rng(0)
    n = 6000
    x = rng.normal(size=(n, 4))
    ds = bb.Dataset(x, rng.integers(0, 6, n), rng.integers(0, 3, n), "target-test")
    acc = tr.evaluate(nw.init(0, [4, 8, 8, 6]), ds).overall
    assert abs(acc - 1 / 6) <= 3 * np.sqrt((1 / 6) * (5 / 6) / n)


def test_per_domain_average_is_overall(small):
    data, params = small
    r = tr.evaluate(params, data["target-blend"])
    n = sum(r.counts.values())
    weighted = sum(r.per_domain[d] * r.counts[d] for d in r.counts) / n
    assert weighted == pytest.approx(r.overall, abs=1e-15)


def test_config_validation():
    with pytest.raises(ConfigError):
        tr.AdaptConfig(batch_size=1).validate()
    with pytest.raises(ConfigError):
        tr.AdaptConfig(beta=-1.0).validate()
    with pytest.raises(ConfigError):
        tr.config_from_dict(tr.AdaptConfig, {"bogus": 1}, "adapt")


def _high_conf_u_trend(lambda0):
    """Mean u over high-confidence blend samples: source model, then after each of 5 epochs."""
    curves = []
    for seed in range(5):
        cfg = RunConfig(seed=seed)
        cfg.adapt.beta, cfg.adapt.fit_term = 0.0, False
        cfg.adapt.epochs, cfg.adapt.lambda0 = 5, lambda0
        prep = ex.prepare(cfg)
        x = prep.data["target-blend"]

        def u_high(p):
            b = ev.belief_from_logits(nw.forward(p, x.features)[1])
            c = b.confidence.values
            return float(b.uncertainty.values[c > c.mean()].mean())

        curve = [u_high(prep.source_model)]

        def record(p):
            curve.append(u_high(p))
            return tr.evaluate(p, x)

        tr.adapt(prep.source_model, x.features, cfg.adapt, seed, evaluator=record)
        curves.append(curve)
    return np.mean(curves, axis=0)


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at lambda0=0.01 the rejected-sample term dominates early "
                                       "and raises u everywhere; see decisions ledger")
def test_pure_calibration_default_lambda():
    trend = _high_conf_u_trend(0.01)
    assert np.all(np.diff(trend) < 0)


@pytest.mark.slow
def test_pure_calibration_late_anneal():
    trend = _high_conf_u_trend(0.99)
    assert np.all(np.diff(trend) < 0)
