import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penguin import checkpoint
from penguin.config import TrainConfig
from penguin.data import make_windows, prepare, synth_series
from penguin.errors import DataError, NumericError
from penguin.gradcheck import tiny_config
from penguin.model import PenguinModel
from penguin.train import (Adam, Cell, ablation_sweep, evaluate, median_step_time, summarize,
                           train, train_step, write_history, write_sweep_csv)


@pytest.fixture(scope="module")
def splits():
    table = synth_series(400, 2, [(12, 1.0, 0.0), (6, 0.5, 1.0)], noise=0.1, seed=0)
    return prepare(table, 16, 4, (0.6, 0.2, 0.2))


def _cfg(**kw):
    return tiny_config(precision="float32", periods=(12,), **kw)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_overfit_single_batch(seed, splits):
    model = PenguinModel(_cfg(d_model=16, d_ff=32), seed=seed)
    opt = Adam(model.parameters(), lr=1e-3)
    x, y = splits.train.batch(np.arange(8))
    losses = [train_step(model, opt, x, y) for _ in range(200)]
    assert losses[-1] <= 0.1 * losses[0], (losses[0], losses[-1])


def test_zero_learning_rate_leaves_params_unchanged(splits):
    model = PenguinModel(_cfg(), seed=0)
    before = model.state_dict()
    train(model, splits.train, splits.val, TrainConfig(lr=0.0, max_epochs=2, patience=2))
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_is_deterministic(splits):
    def run():
        m = PenguinModel(_cfg(), seed=3)
        res = train(m, splits.train, splits.val,
                    TrainConfig(max_epochs=3, patience=3, seed=3, batch_size=16))
        return res.step_losses, m.state_dict()

    (l1, s1), (l2, s2) = run(), run()
    assert l1 == l2
    assert all(np.array_equal(s1[k], s2[k]) for k in s1)


def test_early_stopping_restores_best(splits):
    m = PenguinModel(_cfg(), seed=0)
    res = train(m, splits.train, splits.val,
                TrainConfig(lr=3e-2, max_epochs=8, patience=2, batch_size=16))
    vals = [r.val_mse for r in res.history]
    assert res.best_val == min(vals)
    assert res.history[res.best_epoch - 1].val_mse == res.best_val
    assert evaluate(m, splits.val).mse == pytest.approx(res.best_val, rel=0, abs=0)


def test_train_without_validation_keeps_last(splits):
    m = PenguinModel(_cfg(), seed=0)
    res = train(m, splits.train, None, TrainConfig(max_epochs=2, patience=1))
    assert res.best_val is None and res.best_epoch == 2


def test_train_empty_split_rejected():
    empty = make_windows(np.zeros((3, 2)), 16, 4, allow_empty=True)
    with pytest.raises(DataError):
        train(PenguinModel(_cfg()), empty, None, TrainConfig(max_epochs=1, patience=1))


def test_divergence_aborts_with_last_finite_state(splits):
    m = PenguinModel(_cfg(), seed=0)
    m.w_head.data[0, 0] = np.inf
    with pytest.raises(NumericError) as info:
        train(m, splits.train, None, TrainConfig(max_epochs=1, patience=1))
    assert "non-finite" in str(info.value)
    assert set(info.value.state) == set(m.parameters())


def test_history_csv(tmp_path, splits):
    m = PenguinModel(_cfg(), seed=0)
    res = train(m, splits.train, splits.val, TrainConfig(max_epochs=2, patience=2))
    write_history(tmp_path / "h.csv", res.history)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mse,seconds" and len(lines) == 3


# evaluation ----------------------------------------------------------------


def test_perfect_predictor(splits):
    ds = splits.test
    lookup = {x.tobytes(): y for x, y in zip(ds.inputs, ds.targets)}
    rep = evaluate(lambda xb: np.stack([lookup[x.tobytes()] for x in xb]), ds)
    assert rep.mse == 0.0 and rep.mae == 0.0
    assert rep.n_samples == len(ds)


def test_zero_predictor_gives_target_second_moment(splits):
    ds = splits.test
    rep = evaluate(lambda xb: np.zeros((len(xb), 4, 2)), ds)
    assert rep.mse == pytest.approx(float(np.mean(ds.targets ** 2)), rel=1e-12)


def test_report_matches_loop_oracle(splits):
    ds = splits.val
    m = PenguinModel(_cfg(), seed=2)
    rep = evaluate(m, ds, batch_size=7)
    pred = m.predict(ds.inputs).astype(np.float64)
    se = ae = 0.0
    for s in range(len(ds)):
        for h in range(4):
            for c in range(2):
                d = pred[s, h, c] - ds.targets[s, h, c]
                se += d * d
                ae += abs(d)
    count = len(ds) * 8
    assert abs(rep.mse - se / count) < 1e-9
    assert abs(rep.mae - ae / count) < 1e-9
    assert len(rep.mse_per_step) == 4
    assert np.mean(rep.mse_per_step) == pytest.approx(rep.mse, rel=1e-12)


@settings(deadline=None, max_examples=20)
@given(st.randoms(use_true_random=False))
def test_metrics_permutation_invariant(rnd):
    rng = np.random.default_rng(rnd.randint(0, 10_000))
    targets = rng.standard_normal((30, 20, 3)) * 1e3
    pred = rng.standard_normal(targets.shape) * 1e-3
    perm = rng.permutation(len(targets))

    class Fixed:
        def __init__(self, p, t):
            self.inputs, self.targets = np.zeros((30, 10, 3)), t
            self._p = p

        def __len__(self):
            return 30

    a, b = Fixed(pred, targets), Fixed(pred[perm], targets[perm])
    ra = evaluate(lambda xb, f=a: f._p, a, batch_size=100)
    rb = evaluate(lambda xb, f=b: f._p, b, batch_size=100)
    assert abs(ra.mse - rb.mse) <= 1e-12 * max(1.0, ra.mse)
    assert abs(ra.mae - rb.mae) <= 1e-12 * max(1.0, ra.mae)


def test_evaluate_empty():
    with pytest.raises(DataError):
        evaluate(lambda x: x, make_windows(np.zeros((2, 1)), 4, 2, allow_empty=True))


# checkpoint ----------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path, splits):
    m = PenguinModel(_cfg(), seed=5)
    train(m, splits.train, splits.val, TrainConfig(max_epochs=2, patience=2))
    before = evaluate(m, splits.test)
    checkpoint.save(tmp_path / "m.ckpt", m, splits.normalizer.to_dict())
    loaded, header = checkpoint.load(tmp_path / "m.ckpt")
    after = evaluate(loaded, splits.test)
    assert (after.mse, after.mae) == (before.mse, before.mae)
    assert header["normalization"] == splits.normalizer.to_dict()
    assert loaded.config == m.config


def test_checkpoint_layout(tmp_path):
    import json
    import struct
    m = PenguinModel(_cfg(), seed=0)
    checkpoint.save(tmp_path / "m.ckpt", m)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"PNGN" and raw[4] == 1
    (hlen,) = struct.unpack_from("<I", raw, 5)
    header = json.loads(raw[9:9 + hlen])
    names = [e["name"] for e in header["params"]]
    assert names == list(m.parameters())
    last = header["params"][-1]
    assert len(raw) == 9 + hlen + last["offset"] + 4 * math.prod(last["shape"])
    first = header["params"][0]
    blob = np.frombuffer(raw[9 + hlen:9 + hlen + 4 * math.prod(first["shape"])], "<f4")
    np.testing.assert_array_equal(blob.reshape(first["shape"]), m.w_embed.data)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE\x01")
    with pytest.raises(DataError):
        checkpoint.load(tmp_path / "x")


# timing / sweep ------------------------------------------------------------


def test_median_step_time_positive():
    cfg = _cfg()
    m = PenguinModel(cfg, seed=0)
    x = np.random.default_rng(0).standard_normal((4, cfg.seq_len, cfg.channels))
    y = np.zeros((4, cfg.horizon, cfg.channels))
    assert median_step_time(m, x, y, runs=3, warmup=1) > 0


def test_ablation_sweep_small(tmp_path):
    table = synth_series(300, 1, [(12, 1.0, 0.0)], noise=0.1, seed=0)
    base = tiny_config(channels=1, precision="float32", periods=(12,))
    cells = [Cell("nobias", {"regime": "nobias"}), Cell("both", {"regime": "both"})]
    res = ablation_sweep(table, base, TrainConfig(max_epochs=1, patience=1), cells, [0, 1],
                         workers=1)
    assert [(r.label, r.seed) for r in res] == [("nobias", 0), ("nobias", 1),
                                                ("both", 0), ("both", 1)]
    assert all(math.isfinite(r.test_mse) and r.test_mse > 0 for r in res)
    summary = summarize(res)
    assert set(summary) == {"nobias", "both"} and summary["both"]["n"] == 2
    write_sweep_csv(tmp_path / "s.csv", res)
    assert (tmp_path / "s.csv").read_text().count("\n") == 5
