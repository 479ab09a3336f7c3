"""Experiment runners. Each returns a :class:`MetricsReport`; the dispatcher writes its CSVs."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..data import Splits, TimeSeriesDataset, load_dataset, partition_silos, split_train_val, znormalize
from ..dp.accountant import compute_epsilon
from ..dp.sgd import DpConfig, dp_train
from ..errors import UnknownLabel
from ..federated import (
    EnsembleScheme,
    EnsembleVariant,
    FederatedConfig,
    ensemble_predict,
    run_fedavg,
    silo_weights,
    train_ensemble,
)
from ..metrics import majority_f1, weighted_f1
from ..mpc.bench import benchmark_runtime
from ..mpc.fixed_point import FixedPointCodec
from ..mpc.inference import encrypted_inference
from ..mpc.dealer import TrustedDealer
from ..mpc.transport import InProcessNetwork, TcpNetwork
from ..nn.model import Model, ModelSpec, build_model, predict
from ..nn.train import TrainConfig, evaluate, train
from .config import DatasetPaths, ExperimentConfig, MpcSettings
from .report import MetricsReport, RunRow, render_report

log = logging.getLogger("ppmlts.bench")

EPS_COLUMNS = ("section", "n", "batch_size", "epochs", "noise_multiplier", "delta", "epsilon", "optimal_order")
ENSEMBLE_COLUMNS = ("dataset", "num_clients", "scheme", "seed", "f1", "val_f1")
RUNTIME_COLUMNS = ("dataset", "mode", "phase", "avg_s", "std_s", "batch", "hardware")
ENC_COLUMNS = (
    "dataset",
    "architecture",
    "seed",
    "n_test",
    "f1_plain",
    "f1_encrypted",
    "delta_points",
    "argmax_agreement",
    "max_logit_err",
    "wall_s",
)
NON_CONVERGED_MARGIN = 0.01


# -- data ---------------------------------------------------------------------------


def align_labels(train: TimeSeriesDataset, test: TimeSeriesDataset) -> TimeSeriesDataset:
    """Express ``test`` labels in ``train``'s label order."""
    if test.label_names == train.label_names:
        return test
    pos = {name: i for i, name in enumerate(train.label_names)}
    missing = sorted(set(test.label_names) - set(pos))
    if missing:
        raise UnknownLabel(f"test labels {missing} do not occur in the training file")
    mapping = np.array([pos[n] for n in test.label_names], dtype=np.int64)
    return dataclasses.replace(test, labels=mapping[test.labels], label_names=list(train.label_names))


@lru_cache(maxsize=8)
def _load_pair(train_path: str, test_path: str, name: str, max_train, max_test):
    train = load_dataset(train_path, "train", name)
    test = align_labels(train, load_dataset(test_path, "test", name))
    if max_train is not None:
        train = train.subset(np.arange(min(max_train, len(train))))
    if max_test is not None:
        test = test.subset(np.arange(min(max_test, len(test))))
    train, (test,) = znormalize(train, [test])
    return train, test


@dataclass
class Prepared:
    name: str
    train: TimeSeriesDataset  # after removing the validation split
    val: TimeSeriesDataset
    test: TimeSeriesDataset

    def spec(self, arch: str) -> ModelSpec:
        return ModelSpec(arch, self.train.channels, self.train.length, self.train.num_classes)


def prepare(cfg: ExperimentConfig, ds: DatasetPaths, seed: int) -> Prepared:
    """z-normalise on the full train file, then split off a stratified validation set."""
    train, test = _load_pair(str(cfg.resolve(ds.train)), str(cfg.resolve(ds.test)), ds.name, ds.max_train, ds.max_test)
    tr, va = split_train_val(train, cfg.val_fraction, seed)
    return Prepared(ds.name, tr, va, test)


def _train_cfg(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return dataclasses.replace(cfg.train_config, seed=seed)


def _f1(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> float:
    return weighted_f1(labels, preds, num_classes)


def _non_converged(val_f1: float, val: TimeSeriesDataset) -> bool:
    return val_f1 <= majority_f1(val.labels, val.num_classes) + NON_CONVERGED_MARGIN


def _guarded(row: RunRow, fn) -> RunRow:
    """Fill ``row`` by running ``fn(row)``; failures mark the row FAILED."""
    start = time.monotonic()
    try:
        fn(row)
    except Exception as exc:  # noqa: BLE001 - one failed seed must not abort the sweep
        log.exception("run %s/%s/%s seed %s failed", row.dataset, row.method, row.params, row.seed)
        row.status = "FAILED"
        row.error = f"{type(exc).__name__}: {exc}"
    row.wall_s = time.monotonic() - start
    return row


def _fill_from_model(row: RunRow, model: Model, data: Prepared, epochs: int | None) -> None:
    _, row.f1 = evaluate(model, data.test)
    _, row.val_f1 = evaluate(model, data.val)
    row.epochs = epochs
    row.non_converged = _non_converged(row.val_f1, data.val)


# -- runners ----------------------------------------------------------------------------


def _run_baseline(cfg: ExperimentConfig) -> MetricsReport:
    report = MetricsReport()
    archs = cfg.architectures if cfg.experiment == "arch_bench" else [cfg.architecture_id]
    for ds in cfg.datasets:
        for arch in archs:
            for seed in cfg.seeds:

                def run(row, arch=arch, seed=seed):
                    data = prepare(cfg, ds, seed)
                    model = build_model(data.spec(arch), seed)
                    trained, hist = train(model, Splits(data.train, data.val), _train_cfg(cfg, seed))
                    _fill_from_model(row, trained, data, hist.epochs_run)

                report.rows.append(_guarded(RunRow(ds.name, "baseline", arch, seed), run))
    return report


def _run_dp_sweep(cfg: ExperimentConfig) -> MetricsReport:
    report = MetricsReport()
    dpc = cfg.dp_config
    for ds in cfg.datasets:
        for ne in dpc.noise_multipliers:
            for seed in cfg.seeds:

                def run(row, ne=ne, seed=seed):
                    data = prepare(cfg, ds, seed)
                    model = build_model(data.spec(cfg.architecture_id), seed)
                    dp = DpConfig(dpc.clip_norm, ne, dpc.delta)
                    trained, spent, hist = dp_train(model, Splits(data.train, data.val), _train_cfg(cfg, seed), dp)
                    _fill_from_model(row, trained, data, hist.epochs_run)
                    row.epsilon = spent.epsilon

                params = f"C={dpc.clip_norm:g};nE={ne:g}"
                report.rows.append(_guarded(RunRow(ds.name, "dp", params, seed), run))
    return report


def _run_eps_study(cfg: ExperimentConfig) -> MetricsReport:
    e = cfg.eps_config
    base = dict(n=e.n, batch_size=e.batch_size, epochs=e.epochs, noise_multiplier=e.noise_multiplier)
    sweeps = [
        ("base", "n", [e.n]),
        ("n", "n", e.n_values),
        ("batch_size", "batch_size", e.batch_sizes),
        ("epochs", "epochs", e.epoch_values),
        ("noise_multiplier", "noise_multiplier", e.noise_multipliers),
    ]
    rows = []
    for section, key, values in sweeps:
        for v in values:
            point = {**base, key: v}
            spent = compute_epsilon(point["n"], point["batch_size"], point["epochs"], point["noise_multiplier"], e.delta)
            rows.append({"section": section, **point, "delta": e.delta, "epsilon": spent.epsilon, "optimal_order": spent.optimal_order})
    report = MetricsReport()
    report.tables["eps_curve"] = (EPS_COLUMNS, rows)
    return report


def _fed_config(cfg: ExperimentConfig, n_clients: int, seed: int) -> FederatedConfig:
    f = cfg.federated_config
    m = None if f.clients_per_round is None else min(f.clients_per_round, n_clients)
    return FederatedConfig(n_clients, m, f.rounds, f.local_epochs, f.stratified, seed)


def _scheme(variant: str, silos, train: TimeSeriesDataset) -> EnsembleScheme:
    v = EnsembleVariant(variant)
    if v is EnsembleVariant.WEIGHTED_SOFTMAX:
        return EnsembleScheme(v, weights=silo_weights(silos))
    if v is EnsembleVariant.NAIVE_BAYES:
        return EnsembleScheme(v, priors=list(train.class_counts() / len(train)))
    return EnsembleScheme(v)


def _run_federated(cfg: ExperimentConfig) -> MetricsReport:
    report = MetricsReport()
    fed = cfg.federated_config
    sweep_rows: list[dict] = []
    for ds in cfg.datasets:
        for n in fed.num_clients:
            for seed in cfg.seeds:
                fc = _fed_config(cfg, n, seed)
                if "fedavg" in fed.methods:

                    def run_avg(row, fc=fc, seed=seed):
                        data = prepare(cfg, ds, seed)
                        silos = partition_silos(data.train, fc.num_clients, fc.stratified, seed)
                        model, hist = run_fedavg(data.spec(cfg.architecture_id), silos, _train_cfg(cfg, seed), fc, data.val)
                        _fill_from_model(row, model, data, hist.epochs_run)

                    params = f"M={fc.clients_per_round};E={fc.local_epochs};strat={fc.stratified}"
                    report.rows.append(_guarded(RunRow(ds.name, f"fedavg_n{n}", params, seed), run_avg))
                if "fedens" in fed.methods:

                    def run_ens(row, fc=fc, seed=seed):
                        data = prepare(cfg, ds, seed)
                        silos = partition_silos(data.train, fc.num_clients, fc.stratified, seed)
                        models, hists, _ = train_ensemble(data.spec(cfg.architecture_id), silos, _train_cfg(cfg, seed), data.val)
                        k = data.train.num_classes
                        for variant in fed.schemes:
                            scheme = _scheme(variant, silos, data.train)
                            f1 = _f1(data.test.labels, ensemble_predict(models, scheme, data.test.samples), k)
                            vf1 = _f1(data.val.labels, ensemble_predict(models, scheme, data.val.samples), k)
                            sweep_rows.append(
                                {"dataset": ds.name, "num_clients": fc.num_clients, "scheme": variant, "seed": seed, "f1": f1, "val_f1": vf1}
                            )
                            if EnsembleVariant(variant) is EnsembleVariant.WEIGHTED_SOFTMAX:
                                row.f1, row.val_f1 = f1, vf1
                        row.epochs = max(h.epochs_run for h in hists)
                        row.non_converged = _non_converged(row.val_f1, data.val)

                    params = f"scheme=WeightedSoftmaxAveraging;strat={fc.stratified}"
                    report.rows.append(_guarded(RunRow(ds.name, f"fedens_n{n}", params, seed), run_ens))
    if "fedens" in fed.methods:
        sweep_rows.sort(key=lambda r: (r["dataset"], r["num_clients"], r["scheme"], r["seed"]))
        sweep_rows += _best_rows(sweep_rows, ("dataset", "num_clients", "scheme"))
        report.tables["ensemble_sweep"] = (ENSEMBLE_COLUMNS, sweep_rows)
    return report


def _best_rows(rows: list[dict], keys: tuple[str, ...]) -> list[dict]:
    best: dict[tuple, dict] = {}
    for r in rows:
        k = tuple(r[c] for c in keys)
        if k not in best or r["f1"] > best[k]["f1"]:
            best[k] = r
    return [{**best[k], "seed": "best"} for k in sorted(best)]


def _run_fusion(cfg: ExperimentConfig) -> MetricsReport:
    report = MetricsReport()
    dpc = cfg.dp_config
    for ds in cfg.datasets:
        for n in cfg.federated_config.num_clients:
            for ne in dpc.noise_multipliers:
                for seed in cfg.seeds:
                    fc = _fed_config(cfg, n, seed)

                    def run(row, fc=fc, ne=ne, seed=seed):
                        data = prepare(cfg, ds, seed)
                        silos = partition_silos(data.train, fc.num_clients, fc.stratified, seed)
                        dp = DpConfig(dpc.clip_norm, ne, dpc.delta)
                        spec = data.spec(cfg.architecture_id)
                        models, hists, spent = train_ensemble(spec, silos, _train_cfg(cfg, seed), data.val, dp=dp)
                        scheme = _scheme(EnsembleVariant.WEIGHTED_SOFTMAX.value, silos, data.train)
                        k = data.train.num_classes
                        row.f1 = _f1(data.test.labels, ensemble_predict(models, scheme, data.test.samples), k)
                        row.val_f1 = _f1(data.val.labels, ensemble_predict(models, scheme, data.val.samples), k)
                        row.epsilon = max(s.epsilon for s in spent)
                        row.epochs = max(h.epochs_run for h in hists)
                        row.non_converged = _non_converged(row.val_f1, data.val)

                    params = f"C={dpc.clip_norm:g};nE={ne:g}"
                    report.rows.append(_guarded(RunRow(ds.name, f"dpfe_n{n}", params, seed), run))
    return report


def _run_mpc_runtime(cfg: ExperimentConfig) -> MetricsReport:
    """Runtime does not depend on parameter values, so an untrained model is timed."""
    mpc = cfg.mpc_config or MpcSettings()
    rows = []
    seed = cfg.seeds[0]
    for ds in cfg.datasets:
        data = prepare(cfg, ds, seed)
        model = build_model(data.spec(cfg.architecture_id), seed)
        codec = FixedPointCodec(mpc.frac_bits)
        for workload in mpc.workloads:
            for r in benchmark_runtime(
                model,
                data.test.samples,
                data.test.labels,
                workload,
                mpc.batch,
                mpc.repeats,
                ds.name,
                mpc.transport,
                mpc.dealer_seed,
                cfg.train_config.learning_rate,
                codec,
            ):
                rows.append({"dataset": r.dataset, "mode": r.mode, "phase": r.phase, "avg_s": r.avg_s, "std_s": r.std_s, "batch": r.batch, "hardware": r.hardware})
    report = MetricsReport()
    report.tables["runtimes"] = (RUNTIME_COLUMNS, rows)
    return report


def encrypted_vs_plain(model: Model, test: TimeSeriesDataset, mpc, seed: int = 0) -> dict:
    """Plain and encrypted predictions of one model on (a prefix of) ``test``."""
    limit = len(test) if mpc.max_test_samples is None else min(mpc.max_test_samples, len(test))
    x, y = test.samples[:limit], test.labels[:limit]
    plain = predict(model, x)
    net_cls = TcpNetwork if mpc.transport == "tcp" else InProcessNetwork
    with net_cls(mpc.n_parties) as net:
        enc = encrypted_inference(
            model, x, FixedPointCodec(mpc.frac_bits), net, TrustedDealer(mpc.dealer_seed, mpc.n_parties), seed
        )
    k = model.spec.num_classes
    f1_plain = _f1(y, plain.argmax(axis=1), k)
    f1_enc = _f1(y, enc.argmax(axis=1), k)
    return {
        "n_test": limit,
        "f1_plain": f1_plain,
        "f1_encrypted": f1_enc,
        "delta_points": 100.0 * (f1_enc - f1_plain),
        "argmax_agreement": float(np.mean(plain.argmax(axis=1) == enc.argmax(axis=1))),
        "max_logit_err": float(np.abs(plain - enc).max()) if limit else 0.0,
    }


def _run_mpc_inference(cfg: ExperimentConfig) -> MetricsReport:
    mpc = cfg.mpc_config or MpcSettings()
    report = MetricsReport()
    rows = []
    for ds in cfg.datasets:
        for seed in cfg.seeds:
            start = time.monotonic()
            plain_row = RunRow(ds.name, "mpc_plain", cfg.architecture_id, seed)
            enc_row = RunRow(ds.name, "mpc_encrypted", cfg.architecture_id, seed)

            def run(row, seed=seed):
                data = prepare(cfg, ds, seed)
                model = build_model(data.spec(cfg.architecture_id), seed)
                trained, hist = train(model, Splits(data.train, data.val), _train_cfg(cfg, seed))
                _fill_from_model(plain_row, trained, data, hist.epochs_run)
                res = encrypted_vs_plain(trained, data.test, mpc, seed)
                rows.append({"dataset": ds.name, "architecture": cfg.architecture_id, "seed": seed, **res})
                row.f1 = res["f1_encrypted"]
                row.epochs = hist.epochs_run
                # the prefix used for encryption may differ from the full test set
                plain_row.f1 = res["f1_plain"]

            _guarded(enc_row, run)
            if enc_row.failed:
                plain_row.status = "FAILED"
            elapsed = time.monotonic() - start
            if rows and rows[-1]["seed"] == seed and rows[-1]["dataset"] == ds.name:
                rows[-1]["wall_s"] = elapsed
            report.rows += [plain_row, enc_row]
    report.tables["enc_inference"] = (ENC_COLUMNS, rows)
    return report


RUNNERS = {
    "baseline": _run_baseline,
    "arch_bench": _run_baseline,
    "dp_sweep": _run_dp_sweep,
    "eps_study": _run_eps_study,
    "fed_ensemble_study": _run_federated,
    "dp_fed_fusion": _run_fusion,
    "mpc_runtime": _run_mpc_runtime,
    "mpc_inference": _run_mpc_inference,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> MetricsReport:
    """Run the configured experiment; CSVs land in ``cfg.output_dir`` (relative to the config file)."""
    cfg.validate()
    log.info("running %s", cfg.experiment)
    report = RUNNERS[cfg.experiment](cfg)
    if write:
        render_report(report, cfg.resolve(cfg.output_dir))
    return report
