import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppmlts.bench import MetricsReport, RunRow, config_from_dict, load_config, render_report, run_experiment, weighted_f1
from ppmlts.bench.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main
from ppmlts.bench.report import RESULT_COLUMNS, TABLE2_COLUMNS, read_results_csv, strip_timing
from ppmlts.data import TimeSeriesDataset, serialize_ts
from ppmlts.errors import ConfigError, LengthMismatch

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


# -- weighted F1 -------------------------------------------------------------------


def test_weighted_f1_examples():
    assert weighted_f1([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0
    assert round(weighted_f1([0, 0, 1], [0, 1, 1], 2), 4) == 0.6667
    assert weighted_f1([0, 0, 1, 1], [0, 0, 0, 0], 2) == pytest.approx(1 / 3)
    # a class only ever predicted has zero support and zero weight
    assert weighted_f1([0, 0], [0, 1], 3) == pytest.approx(2 / 3)
    with pytest.raises(LengthMismatch):
        weighted_f1([0, 1], [0], 2)


def _f1_oracle(y_true, y_pred, k):
    total = 0.0
    for c in range(k):
        tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
        sup = sum(t == c for t in y_true)
        pred = sum(p == c for p in y_pred)
        prec = tp / pred if pred else 0.0
        rec = tp / sup if sup else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        total += sup * f1
    return total / len(y_true)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(st.just(k), st.lists(st.tuples(st.integers(0, k - 1), st.integers(0, k - 1)), min_size=1, max_size=40))))
def test_weighted_f1_properties(case):
    k, pairs = case
    y_true, y_pred = [p[0] for p in pairs], [p[1] for p in pairs]
    f1 = weighted_f1(y_true, y_pred, k)
    assert 0.0 <= f1 <= 1.0
    assert f1 == pytest.approx(_f1_oracle(y_true, y_pred, k), abs=1e-12)
    perm = np.random.default_rng(len(pairs)).permutation(k)
    assert weighted_f1(perm[y_true], perm[y_pred], k) == pytest.approx(f1, abs=1e-12)


def test_weighted_f1_balanced_binary_is_plain_f1_mean():
    y_true = [0, 0, 0, 1, 1, 1]
    y_pred = [0, 1, 1, 1, 1, 0]
    f_pos = 2 * (2 / 4) * (2 / 3) / (2 / 4 + 2 / 3)  # 4/7
    f_neg = 2 * (1 / 2) * (1 / 3) / (1 / 2 + 1 / 3)  # 2/5
    assert weighted_f1(y_true, y_pred, 2) == pytest.approx((f_pos + f_neg) / 2)


# -- config ------------------------------------------------------------------------


def test_shipped_configs_load():
    names = sorted(p.name for p in CONFIG_DIR.glob("*.json"))
    assert len(names) == 8
    for name in names:
        cfg = load_config(CONFIG_DIR / name)
        # the MPC runs evaluate one trained model; training sweeps use five seeds
        assert cfg.seeds == ([0] if name.startswith("mpc") else [0, 1, 2, 3, 4])


@pytest.mark.parametrize(
    "patch",
    [
        {"experiment": "nope"},
        {"seeds": []},
        {"architecture_id": "ResNet"},
        {"experiment": "dp_sweep"},
        {"experiment": "dp_fed_fusion", "dp_config": {}},
        {"unknown_key": 1},
        {"train_config": {"epochs": 0}},
        {"experiment": "arch_bench"},
        {"experiment": "fed_ensemble_study", "federated_config": {"schemes": ["Borda"]}},
        {"experiment": "mpc_inference", "mpc_config": {"transport": "udp"}},
    ],
)
def test_config_errors(patch):
    base = {"experiment": "baseline", "datasets": [{"name": "x", "train": "a.ts", "test": "b.ts"}]}
    with pytest.raises(ConfigError):
        config_from_dict({**base, **patch})


def test_config_missing_datasets_and_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": "baseline"})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "baseline", "datasets": [{"name": "x", "train": "d/a.ts", "test": "d/b.ts"}]}))
    cfg = load_config(path)
    assert cfg.resolve("d/a.ts") == tmp_path / "d" / "a.ts"


# -- rendering ---------------------------------------------------------------------


def _report():
    r = MetricsReport()
    for seed, f1 in enumerate([0.91, 0.93, 0.92]):
        r.rows.append(RunRow("ECG5000", "baseline", "AlexNet1D", seed, f1=f1, val_f1=0.9, epochs=10, wall_s=1.0 + seed))
    for seed, f1 in enumerate([0.8, 0.85]):
        r.rows.append(RunRow("ECG5000", "fedavg_n2", "M=None", seed, f1=f1, val_f1=0.8, epochs=5))
    r.rows.append(RunRow("ECG5000", "dp", "C=1;nE=0.1", 0, f1=0.86, epsilon=12.345678))
    r.rows.append(RunRow("ECG5000", "dp", "C=1;nE=0.25", 0, f1=0.84, epsilon=3.0))
    r.rows.append(RunRow("FordA", "baseline", "AlexNet1D", 0, status="FAILED"))
    return r


def test_best_of_seeds_is_max():
    best = {(r.dataset, r.method, r.params): r for r in _report().aggregate()}
    assert best[("ECG5000", "baseline", "AlexNet1D")].f1 == 0.93
    assert best[("ECG5000", "baseline", "AlexNet1D")].wall_s == pytest.approx(6.0)
    assert best[("ECG5000", "fedavg_n2", "M=None")].f1 == 0.85
    assert best[("FordA", "baseline", "AlexNet1D")].status == "FAILED"


def test_render_is_deterministic_and_formatted(tmp_path):
    report = _report()
    text_a = render_report(report, tmp_path / "a")
    text_b = render_report(report, tmp_path / "b")
    assert text_a == text_b
    for name in ("results.csv", "table2.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    raw = (tmp_path / "a" / "results.csv").read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert "12.3457" in raw.decode()
    assert "0.9300" in raw.decode()


def test_table2_columns(tmp_path):
    render_report(_report(), tmp_path)
    lines = (tmp_path / "table2.csv").read_text().splitlines()
    assert lines[0] == ",".join(TABLE2_COLUMNS)
    assert lines[0] == "dataset,baseline,dp,fedavg_n2,fedavg_n4,fedens_n2,fedens_n4"
    assert lines[1] == "ECG5000,0.9300,0.8600,0.8500,,,"


def test_empty_method_filter_gives_header_only(tmp_path):
    render_report(_report(), tmp_path, methods=["no_such_method"])
    assert (tmp_path / "results.csv").read_text() == ",".join(RESULT_COLUMNS) + "\n"


def test_results_csv_roundtrip(tmp_path):
    report = _report()
    render_report(report, tmp_path)
    back = read_results_csv(tmp_path / "results.csv")
    assert len(back) == len(report.rows)
    assert {(r.method, r.seed, r.f1) for r in back if r.status == "OK"} == {
        (r.method, r.seed, round(r.f1, 4)) for r in report.rows if r.status == "OK"
    }


def test_strip_timing():
    text = "dataset,f1,wall_s\nx,0.5000,1.2345\n"
    assert strip_timing(text) == "dataset,f1\nx,0.5000\n"


# -- end to end on a tiny synthetic dataset ----------------------------------------


def _synthetic(n, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 3
    t = np.linspace(0, 1, 24)
    samples = np.sin(2 * np.pi * (labels[:, None] + 1) * t)[:, None, :] + 0.2 * rng.normal(size=(n, 1, 24))
    return TimeSeriesDataset(np.round(samples, 4), labels, ["a", "b", "c"], name="toy")


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    (d / "toy_TRAIN.ts").write_text(serialize_ts(_synthetic(60, 0)))
    (d / "toy_TEST.ts").write_text(serialize_ts(_synthetic(30, 1)))
    return d


def _write_cfg(d, name, body):
    body = {"datasets": [{"name": "toy", "train": "toy_TRAIN.ts", "test": "toy_TEST.ts"}], "architecture_id": "FDN",
            "train_config": {"epochs": 2, "batch_size": 8}, "seeds": [0, 1], "output_dir": f"out_{name}", **body}
    path = d / f"{name}.json"
    path.write_text(json.dumps(body))
    return path


def _csvs(out):
    return {p.name: strip_timing(p.read_text()) for p in sorted(Path(out).glob("*.csv"))}


@pytest.mark.parametrize(
    "name,body",
    [
        ("baseline", {"experiment": "baseline"}),
        ("dp", {"experiment": "dp_sweep", "dp_config": {"clip_norm": 1.0, "noise_multipliers": [0.1, 0.25]}}),
        ("fed", {"experiment": "fed_ensemble_study", "federated_config": {"num_clients": [2], "rounds": 2}}),
        ("fusion", {"experiment": "dp_fed_fusion", "dp_config": {"noise_multipliers": [0.1]}, "federated_config": {"num_clients": [2]}}),
        ("mpcinf", {"experiment": "mpc_inference", "mpc_config": {"max_test_samples": 6}, "seeds": [0]}),
    ],
)
def test_rerun_is_byte_identical(toy_dir, name, body):
    cfg_a = load_config(_write_cfg(toy_dir, name, body))
    report = run_experiment(cfg_a)
    assert not report.any_failed, [r.error for r in report.rows]
    first = _csvs(toy_dir / f"out_{name}")
    cfg_b = load_config(_write_cfg(toy_dir, name, {**body, "output_dir": str(toy_dir / f"again_{name}")}))
    run_experiment(cfg_b)
    assert first and first == _csvs(toy_dir / f"again_{name}")


def test_eps_study_sections(tmp_path):
    cfg = config_from_dict({"experiment": "eps_study", "eps_config": {}, "output_dir": str(tmp_path)})
    report = run_experiment(cfg)
    cols, rows = report.tables["eps_curve"]
    assert {r["section"] for r in rows} == {"base", "n", "batch_size", "epochs", "noise_multiplier"}
    base = [r for r in rows if r["section"] == "base"][0]
    assert (base["n"], base["batch_size"], base["epochs"], base["noise_multiplier"]) == (5000, 32, 100, 0.5)
    for section, key in (("n", "n"), ("batch_size", "batch_size"), ("epochs", "epochs"), ("noise_multiplier", "noise_multiplier")):
        part = [r for r in rows if r["section"] == section]
        others = {k for k in ("n", "batch_size", "epochs", "noise_multiplier") if k != key}
        assert all(r[k] == base[k] for r in part for k in others)
    assert (tmp_path / "eps_curve.csv").read_text().startswith(",".join(cols) + "\n")


def test_cli_exit_codes(toy_dir, tmp_path, capsys):
    ok = _write_cfg(toy_dir, "cli_ok", {"experiment": "baseline", "seeds": [0]})
    assert main(["train", "--config", str(ok), "--out", str(tmp_path / "ok")]) == EXIT_OK
    assert (tmp_path / "ok" / "results.csv").exists()
    missing = _write_cfg(toy_dir, "cli_missing", {"experiment": "baseline", "seeds": [0],
                                                   "datasets": [{"name": "gone", "train": "nope.ts", "test": "nope.ts"}]})
    assert main(["train", "--config", str(missing), "--out", str(tmp_path / "bad")]) == EXIT_FAILED
    assert "FAILED" in capsys.readouterr().err
    assert main(["dp-train", "--config", str(ok)]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG
    assert main(["eps"]) == EXIT_CONFIG


def test_cli_seed_override_and_report(toy_dir, tmp_path, capsys):
    cfg = _write_cfg(toy_dir, "cli_seed", {"experiment": "baseline"})
    assert main(["train", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "s")]) == EXIT_OK
    seeds = {r.seed for r in read_results_csv(tmp_path / "s" / "results.csv")}
    assert seeds == {1}
    capsys.readouterr()
    assert main(["report", str(tmp_path / "s"), "--out", str(tmp_path / "merged")]) == EXIT_OK
    assert "baseline" in capsys.readouterr().out
    assert (tmp_path / "merged" / "table2.csv").exists()


def test_cli_eps_direct(capsys):
    assert main(["eps", "--n", "5000"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("epsilon=45.94")
    assert "order=2" in out
    assert math.isfinite(float(out.split()[0].split("=")[1]))
