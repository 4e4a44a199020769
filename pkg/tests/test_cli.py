import json

import numpy as np
import pytest

from penguin import tensor as T
from penguin.cli import main
from penguin.data import autocorrelation, load_csv, synth_series


@pytest.fixture
def run(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)

    def call(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    return call


def _config(path, **sections):
    doc = {
        "data": {"path": "s.csv"},
        "model": {"seq_len": 48, "horizon": 12, "channels": 2, "patch_len": 8, "stride": 4,
                  "d_model": 16, "d_ff": 32, "n_heads": 4, "n_layers": 1, "regime": "both",
                  "periods": [24]},
        "train": {"max_epochs": 2, "patience": 2, "batch_size": 16},
        "output": {"checkpoint": "out/m.ckpt", "history": "out/h.csv",
                   "manifest": "out/manifest.json"},
    }
    for key, val in sections.items():
        doc[key] = {**doc[key], **val}
    path.write_text(json.dumps(doc))
    return path


# synth / detect-periods ---------------------------------------------------------


def test_synth_periodic_without_noise(run, tmp_path):
    assert run("synth", "--out", "p.csv", "--length", 240, "--periods", 24, "--noise", 0)[0] == 0
    x = load_csv(tmp_path / "p.csv").values[:, 0]
    np.testing.assert_allclose(x[24:], x[:-24], atol=1e-12)


def test_synth_deterministic(run, tmp_path):
    for name in ("a.csv", "b.csv"):
        run("synth", "--out", name, "--length", 300, "--channels", 3, "--seed", 7)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_two_components_are_summed(run, tmp_path):
    run("synth", "--out", "m.csv", "--length", 1000, "--periods", "24,56", "--noise", 0)
    got = load_csv(tmp_path / "m.csv").values[:, 0]
    t = np.arange(1000)
    want = np.sin(2 * np.pi * t / 24) + np.sin(2 * np.pi * t / 56 + 0.5)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_detect_periods_finds_each_component_and_common_period(run, tmp_path):
    found = {}
    for period in (24, 56):
        run("synth", "--out", f"p{period}.csv", "--length", 2000, "--periods", period,
            "--noise", 0.3, "--seed", 1)
        code, out, _ = run("detect-periods", "--input", f"p{period}.csv", "--max-lag", 100)
        assert code == 0
        found[period] = json.loads(out)["ch0"][0]["lag"]
    assert found == {24: 24, 56: 56}

    run("synth", "--out", "m.csv", "--length", 2000, "--periods", "24,56", "--noise", 0.3)
    code, out, _ = run("detect-periods", "--input", "m.csv", "--max-lag", 200)
    peaks = json.loads(out)["ch0"]
    # both components repeat at lcm(24, 56) = 168, so the mixture's ACF peaks there
    assert peaks[0]["lag"] == 168
    r = autocorrelation(load_csv(tmp_path / "m.csv").values[:, 0], 200)
    assert peaks[0]["correlation"] == r[168]


# train / eval / forecast --------------------------------------------------------


@pytest.fixture
def trained(run, tmp_path):
    run("synth", "--out", "s.csv", "--length", 600, "--channels", 2, "--periods", "24,12",
        "--noise", 0.1)
    cfg = _config(tmp_path / "run.json")
    code, out, err = run("train", "--config", cfg)
    assert code == 0, err
    return cfg


def test_train_eval_forecast(run, trained, tmp_path):
    assert (tmp_path / "out/m.ckpt").exists()
    manifest = json.loads((tmp_path / "out/manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["version"].startswith("penguin-")
    assert len(manifest["config_hash"]) == 16

    code, out, _ = run("eval", "--config", trained, "--checkpoint", "out/m.ckpt")
    report = json.loads(out)
    assert code == 0 and report["split"] == "test"
    assert np.isfinite(report["mse"]) and len(report["mse_per_step"]) == 12

    code, _, _ = run("forecast", "--checkpoint", "out/m.ckpt", "--input", "s.csv",
                     "--out", "f.csv", "--dump-attention", "att")
    pred = load_csv(tmp_path / "f.csv")
    assert code == 0 and pred.values.shape == (12, 2)
    assert len(list((tmp_path / "att").glob("*.csv"))) == 2 * 4


def test_train_is_idempotent(run, trained, tmp_path):
    first = (tmp_path / "out/m.ckpt").read_bytes()
    manifest = (tmp_path / "out/manifest.json").read_bytes()
    run("train", "--config", trained)
    assert (tmp_path / "out/m.ckpt").read_bytes() == first
    assert (tmp_path / "out/manifest.json").read_bytes() == manifest


def test_eval_on_empty_test_split_is_data_error(run, trained, tmp_path):
    cfg = _config(tmp_path / "empty.json", data={"split": [0.8, 0.2, 0.0],
                                                   "allow_empty_splits": True})
    code, _, err = run("eval", "--config", cfg, "--checkpoint", "out/m.ckpt")
    assert code == 2 and "error[data]" in err


def test_forecast_short_input_is_data_error(run, trained, tmp_path):
    (tmp_path / "short.csv").write_text("ch0,ch1\n" + "1,2\n" * 10)
    code, _, err = run("forecast", "--checkpoint", "out/m.ckpt", "--input", "short.csv",
                       "--out", "f.csv")
    assert code == 2 and "error[data]" in err and not (tmp_path / "f.csv").exists()


@pytest.mark.parametrize("model", [{"bogus": 1}, {"stride": 5}, {"regime": "sideways"}])
def test_bad_config_rejected_before_writing(run, tmp_path, model):
    run("synth", "--out", "s.csv", "--length", 200, "--channels", 2)
    cfg = _config(tmp_path / "bad.json", model=model)
    code, _, err = run("train", "--config", cfg)
    assert code == 3 and "error[config]" in err
    assert not (tmp_path / "out").exists()


def test_missing_config_file(run):
    code, _, err = run("train", "--config", "nope.json")
    assert code == 3 and "not found" in err


# dump-bias ----------------------------------------------------------------------


def test_dump_bias_figure_setup(run, tmp_path):
    code, out, _ = run("dump-bias", "--n", 42, "--periods", "3,21", "--regime", "both",
                       "--heads", 12, "--out-dir", "b")
    assert code == 0 and json.loads(out) == {"heads": 12, "groups": 3, "dir": "b"}
    names = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert len(names) == 12
    assert {n.split("_group")[1][0] for n in names} == {"1", "2", "3"}


def test_dump_bias_nobias_is_zero(run, tmp_path):
    run("dump-bias", "--n", 10, "--regime", "nobias", "--heads", 4, "--out-dir", "z")
    files = list((tmp_path / "z").glob("*.csv"))
    assert len(files) == 4
    for f in files:
        assert not np.loadtxt(f, delimiter=",").any()


def _tri(d, p):
    return min(abs(d - q * p) for q in range(-abs(d) // p - 2, abs(d) // p + 3))


def test_dump_bias_decoder_offset_matches_enumeration(run, tmp_path):
    n, rows, offset, h = 42, 6, 42, 12
    run("dump-bias", "--n", n, "--rows", rows, "--periods", "3,21", "--heads", h,
        "--decoder-offset", offset, "--out-dir", "d")
    periods = {1: None, 2: 3, 3: 21}
    for head in range(1, h + 1):
        group = (head - 1) // 4 + 1
        m = 2.0 ** (-8.0 / ((head - 1) % 4 + 1))
        got = np.loadtxt(tmp_path / "d" / f"head{head}_group{group}.csv", delimiter=",")
        assert got.shape == (rows, n)
        for i in range(rows):
            for j in range(n):
                dist = i + offset - j
                pen = abs(dist) if periods[group] is None else _tri(dist, periods[group])
                assert got[i, j] == -m * pen


def test_dump_bias_pgm(run, tmp_path):
    run("dump-bias", "--n", 8, "--periods", "3", "--regime", "periodic", "--heads", 2,
        "--format", "pgm", "--out-dir", "g")
    raw = (tmp_path / "g" / "head2_group1.pgm").read_bytes()
    assert raw.startswith(b"P5\n8 8\n255\n") and len(raw) == len(b"P5\n8 8\n255\n") + 64


def test_dump_bias_bad_regime(run):
    code, _, err = run("dump-bias", "--n", 8, "--regime", "both", "--periods", "",
                       "--out-dir", "x")
    assert code == 3 and "error[config]" in err


# gradcheck ----------------------------------------------------------------------


def test_gradcheck_passes_and_lists_each_block(run):
    from penguin.gradcheck import tiny_config
    from penguin.model import PenguinModel

    code, out, _ = run("gradcheck")
    lines = out.strip().splitlines()
    assert code == 0 and lines[-1].startswith("PASS")
    listed = [ln.split()[0] for ln in lines[:-1]]
    assert listed == list(PenguinModel(tiny_config()).parameters())


def test_gradcheck_catches_corrupted_rule(run, monkeypatch):
    monkeypatch.setitem(T.GRAD_RULES, "relu", lambda ctx, g, a: (0.5 * g * (a.data > 0),))
    code, out, _ = run("gradcheck")
    assert code == 1
    assert out.strip().splitlines()[-1].startswith("FAIL")
    failing = [ln.split()[0] for ln in out.splitlines() if ln.endswith("FAIL")]
    assert any(name.endswith("ffn.w1") for name in failing)


def test_gradcheck_with_config(run, tmp_path):
    cfg = _config(tmp_path / "run.json", model={"regime": "nonperiodic", "periods": []})
    code, out, _ = run("gradcheck", "--config", cfg)
    assert code == 0, out


# ablate -------------------------------------------------------------------------


def test_ablate_writes_sweep(run, tmp_path):
    run("synth", "--out", "s.csv", "--length", 800, "--channels", 1, "--periods", 12)
    cfg = _config(tmp_path / "a.json", model={"channels": 1, "periods": [12]},
                  train={"max_epochs": 1, "patience": 1})
    code, out, _ = run("ablate", "--config", cfg, "--regimes", "nobias,both", "--seeds", "0,1",
                       "--period-sets", "12;24", "--out", "sweep.csv")
    assert code == 0
    assert set(json.loads(out)) == {"nobias", "both[12]", "both[24]"}
    assert (tmp_path / "sweep.csv").read_text().count("\n") == 1 + 3 * 2


def test_synth_values_match_library(run, tmp_path):
    run("synth", "--out", "c.csv", "--length", 50, "--channels", 2, "--noise", 0.2, "--seed", 3)
    want = synth_series(50, 2, [(24, 1.0, 0.0)], noise=0.2, seed=3).values
    np.testing.assert_array_equal(load_csv(tmp_path / "c.csv").values, want)
