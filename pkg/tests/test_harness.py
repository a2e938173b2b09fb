import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrftrees.harness.cli import main
from mrftrees.harness.config import ConfigError, ExperimentConfig, load_config, matched_alpha
from mrftrees.harness.data import corrupt_flip, decode_pgm, encode_pgm, generate_patch_image, read_pgm, write_pgm
from mrftrees.harness.experiments import (
    load_model_document, run_denoise_experiment, run_variance_experiment, trial_seed,
)


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# images


def test_patch_image_basics():
    assert not generate_patch_image(5, 7, 4, 0, seed=1).any()
    a = generate_patch_image(50, 50, 11, 6, seed=3)
    np.testing.assert_array_equal(a, generate_patch_image(50, 50, 11, 6, seed=3))
    assert a.min() >= 0 and a.max() < 11 and a.any()


def test_corrupt_flip_properties():
    img = generate_patch_image(50, 50, 11, 6, seed=0)
    np.testing.assert_array_equal(corrupt_flip(img, 0.0, seed=1, n_states=11), img)
    noisy = corrupt_flip(img, 0.2, seed=1, n_states=11)
    assert abs(np.mean(noisy != img) - 0.2) < 0.03
    assert noisy.max() < 11
    binary = np.random.default_rng(0).integers(0, 2, (30, 30))
    flipped = corrupt_flip(binary, 0.5, seed=2, n_states=2)
    changed = flipped != binary
    np.testing.assert_array_equal(flipped[changed], 1 - binary[changed])
    with pytest.raises(ValueError):
        corrupt_flip(img, 1.0, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([2, 11, 256, 300, 65536]), st.booleans(),
       st.integers(0, 2**31))
def test_pgm_round_trip(rows, cols, k, binary, seed):
    img = np.random.default_rng(seed).integers(0, k, (rows, cols))
    data = encode_pgm(img, k - 1, binary)
    back, maxval = decode_pgm(data)
    assert maxval == k - 1
    np.testing.assert_array_equal(back, img)
    assert encode_pgm(back, maxval, binary) == data


def test_pgm_header_comments_and_files(tmp_path):
    back, maxval = decode_pgm(b"P2\n# made by hand\n3 1\n# c\n4\n0 4 2\n")
    np.testing.assert_array_equal(back, [[0, 4, 2]])
    img = generate_patch_image(6, 4, 5, 2, seed=1)
    write_pgm(tmp_path / "x.pgm", img, 5, binary=True)
    got, mv = read_pgm(tmp_path / "x.pgm")
    assert mv == 4
    np.testing.assert_array_equal(got, img)
    with pytest.raises(ValueError):
        encode_pgm(np.array([[0, 3]]), 2)
    with pytest.raises(ValueError):
        decode_pgm(b"P3\n1 1\n1\n0\n")


# ---------------------------------------------------------------------------
# config


def test_config_layers(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "variance", "n_trials": 7, "potential": {"kind": "potts", "beta": 0.2}}))
    cfg = load_config(path, {"seed": 3, "n_iters": 40, "potential": {"alpha": 0.9}, "rows": None})
    assert cfg.n_trials == 7 and cfg.n_iters == 40 and cfg.rows == 6
    assert cfg.potential == {"kind": "potts", "beta": 0.2, "alpha": 0.9}
    assert cfg.effective_burn_in == 4


@pytest.mark.parametrize("bad", [
    {"n_trials": 0}, {"flip_prob": 1.0}, {"schemes": []}, {"schemes": ["pg", "sw"]}, {"burn_in": 500},
    {"n_states": 1}, {"time_units": "hours"}, {"bogus": 1}, {"schemes": ["ts", "ts"]},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        load_config(None, {"experiment": "variance", "seed": 0, **bad})


def test_config_needs_experiment_and_seed(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, {"seed": 1})
    with pytest.raises(ConfigError):
        load_config(None, {"experiment": "denoise"})
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json", {"seed": 1})


def test_denoise_alpha_matched():
    cfg = load_config(None, {"experiment": "denoise", "seed": 0})
    assert cfg.potential_spec().alpha == pytest.approx(math.log(0.8 * 10 / 0.2))
    assert matched_alpha(0.5, 2) == pytest.approx(0.0)


def test_trial_seeds_distinct():
    seen = {tuple(trial_seed(1, s, j).generate_state(2)) for s in ("pg", "cb", "ts") for j in range(50)}
    assert len(seen) == 150


# ---------------------------------------------------------------------------
# experiments


def _cfg(tmp_path, **kw):
    base = dict(experiment="variance", seed=2, rows=3, cols=3, n_states=3, n_trials=4, n_iters=30)
    base.update(kw)
    return load_config(None, {**base, "out": str(tmp_path / kw.get("experiment", "variance"))})


def test_variance_outputs(tmp_path):
    cfg = _cfg(tmp_path)
    res = run_variance_experiment(cfg)
    rows = rows_of(tmp_path / "variance" / "results.csv")
    assert len(rows) == 3 * 9 and list(rows[0]) == ["node_row", "node_col", "scheme", "raw_variance"]
    trows = rows_of(tmp_path / "variance" / "timing.csv")
    assert len(trows) == 27 and "time_adjusted_variance" in trows[0]
    factors = {r["scheme"]: float(r["time_factor"]) for r in trows}
    assert min(factors.values()) == 1.0
    for s in cfg.schemes:
        assert len(res["trials"][s]) == 4
        assert all(len(t.cumulative_time) == cfg.n_iters - cfg.effective_burn_in for t in res["trials"][s])
    doc = json.loads((tmp_path / "variance" / "model.json").read_text())
    assert set(doc) == {"rows", "cols", "n_states", "potential_spec", "observations", "seed"}
    m = load_model_document(doc)
    assert m.n_nodes == 9


def test_variance_single_trial_is_undefined(tmp_path):
    res = run_variance_experiment(_cfg(tmp_path, n_trials=1))
    assert all(v is None for v in res["raw"].values())
    assert all(r["raw_variance"] == "" for r in rows_of(tmp_path / "variance" / "results.csv"))
    summary = json.loads((tmp_path / "variance" / "summary.json").read_text())
    assert summary["schemes"]["ts"]["median_raw_variance"] is None


def test_variance_uncoupled_rb_is_exact(tmp_path):
    res = run_variance_experiment(_cfg(tmp_path, potential={"kind": "potts", "beta": 0.0, "alpha": 0.5}))
    assert np.all(res["raw"]["cb"] == 0.0) and np.all(res["raw"]["ts"] == 0.0)
    assert res["raw"]["pg"].max() > 0


def test_denoise_outputs(tmp_path):
    cfg = _cfg(tmp_path, experiment="denoise", rows=8, cols=8, n_states=4, n_iters=45, n_trials=3, n_rects=2)
    res = run_denoise_experiment(cfg)
    out = tmp_path / "denoise"
    rows = rows_of(out / "results.csv")
    n_cp = math.ceil((45 - 4) / 10)
    assert len(rows) == 3 * 3 * n_cp
    assert [int(r["checkpoint_iter"]) for r in rows[:n_cp]] == [14, 24, 34, 44, 45]
    assert len(rows_of(out / "timing.csv")) == len(rows)
    truth, _ = read_pgm(out / "truth.pgm")
    np.testing.assert_array_equal(truth, res["truth"])
    for s in cfg.schemes:
        assert all(len(t.error_trace) == 41 for t in res["trials"][s])
    timing = json.loads((out / "timing.json").read_text())
    assert set(timing["error_at_budget"]) == {"pg", "cb", "ts"}


def test_denoise_without_noise_starts_clean(tmp_path):
    cfg = _cfg(tmp_path, experiment="denoise", rows=10, cols=10, n_states=4, flip_prob=0.0, n_iters=20, n_trials=2)
    res = run_denoise_experiment(cfg)
    for s in cfg.schemes:
        for t in res["trials"][s]:
            assert t.error_trace[0] < 0.02


def test_denoise_constant_truth_recovered(tmp_path):
    cfg = _cfg(tmp_path, experiment="denoise", rows=16, cols=16, n_states=4, n_rects=0, flip_prob=0.2,
               n_iters=200, n_trials=2)
    res = run_denoise_experiment(cfg)
    for s in cfg.schemes:
        assert np.all(res["final"][s] < 0.2)


def test_iteration_time_units_make_sidecar_deterministic(tmp_path):
    texts = []
    for i in range(2):
        cfg = load_config(None, dict(experiment="denoise", seed=4, rows=8, cols=8, n_states=3, n_iters=30,
                                     n_trials=2, time_units="iterations", out=str(tmp_path / f"r{i}")))
        run_denoise_experiment(cfg)
        texts.append([(tmp_path / f"r{i}" / f).read_bytes() for f in ("timing.csv", "timing.json")])
    assert texts[0] == texts[1]
    assert "cumulative_kernel_iterations" in texts[0][0].decode()


def test_jobs_do_not_change_results(tmp_path):
    out = []
    for jobs in (1, 2):
        cfg = _cfg(tmp_path / f"j{jobs}", n_trials=3)
        run_variance_experiment(cfg, jobs=jobs)
        out.append((tmp_path / f"j{jobs}" / "variance" / "results.csv").read_bytes())
    assert out[0] == out[1]


# ---------------------------------------------------------------------------
# command line


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["run", "--experiment", "variance"]) == 1
    assert main(["diagnose", "--seeds", "2"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["run", "--seed", "1", "--experiment", "variance", "--no-such-flag"]) == 1
    assert main(["run", "--seed", "1", "--experiment", "variance", "--trials", "0"]) == 1
    assert main(["diagnose", "--seed", "1", "--size", "2by2"]) == 1
    assert main(["corrupt", "--in", str(tmp_path / "missing.pgm"), "--p", "0.1", "--seed", "0",
                 "--out", str(tmp_path / "o.pgm")]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_runtime_failure_exit_code(tmp_path):
    # a 4x4 ternary model exceeds the kernel cap of the exact diagnostics
    assert main(["diagnose", "--seed", "0", "--seeds", "1", "--size", "4x4", "--states", "3",
                 "--out", str(tmp_path / "d.csv")]) == 2


def test_cli_generate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--rows", "8", "--cols", "8", "--states", "4", "--rects", "2", "--seed", "7",
                     "--out", str(tmp_path / f"{name}.pgm")]) == 0
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    assert main(["corrupt", "--in", str(tmp_path / "a.pgm"), "--p", "0.3", "--seed", "1",
                 "--out", str(tmp_path / "c.pgm")]) == 0
    img, mv = read_pgm(tmp_path / "c.pgm")
    assert mv == 3 and img.shape == (8, 8)


def test_cli_diagnose_report(tmp_path, capsys):
    out = tmp_path / "diag.csv"
    assert main(["diagnose", "--seeds", "100", "--size", "2x2", "--seed", "0", "--out", str(out)]) == 0
    rows = rows_of(out)
    assert len(rows) == 100
    assert all(r["thm1_pass"] == "true" and r["thm2_pass"] == "true" for r in rows)
    assert json.loads(capsys.readouterr().out)["n_models"] == 100


def test_cli_run_with_config_file(tmp_path):
    conf = tmp_path / "v.json"
    conf.write_text(json.dumps({"experiment": "variance", "rows": 3, "cols": 3, "n_states": 3,
                                "n_trials": 3, "n_iters": 20}))
    assert main(["run", "--config", str(conf), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
    assert len(rows_of(tmp_path / "o" / "results.csv")) == 27


def test_config_partial_potential_keeps_defaults():
    cfg = load_config(None, {"experiment": "variance", "seed": 0, "potential": {"beta": 1.5}})
    assert cfg.potential == {"kind": "potts", "beta": 1.5, "alpha": 0.5}
    cfg = load_config(None, {"experiment": "variance", "seed": 0, "potential": {"kind": "random_table", "seed": 3}})
    assert cfg.potential == {"kind": "random_table", "seed": 3}
