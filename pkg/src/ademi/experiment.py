"""Experiment orchestration: split, stages, metrics, sweeps.

A run directory holds every intermediate artifact:

    config.yaml  seeds.manifest  labels.bin  split_train.bin  split_test.bin
    spectro_{k}.bin                      per-device spectrograms, all events
    device_{k}.bin/.manifest             encoder + local decoder checkpoint
    latents_{k}.bin/.manifest            one-shot training upload
    latents_test_{k}.bin/.manifest       test-time latents (zero noise)
    server_model.bin/.manifest  server_metrics.jsonl
    baseline_{mode}.bin/.manifest        raw-spectrogram baselines
    report.json  confusion.csv  checksums.manifest  timings.json

``report.json`` is a pure function of the config; wall-clock timings live in
``timings.json`` only.
"""
from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio as tio
from .channel import link_budget, raw_payload_bits, shannon_capacity, upload_latency
from .config import ExperimentConfig, dump_config
from .csi_synth import NUM_CLASSES, make_dataset
from .dfs import dfs_spectrogram
from .encoder import (DeviceModel, LatentVector, QuantizerSpec, encode, from_indices, predict_local,
                      train_device)
from .errors import DomainError
from .server import ServerModel, concat_latents, predict, predict_baseline, train_baseline, train_server

log = logging.getLogger(__name__)

SCHEME_NAMES = {"single_view": "single", "multi_view": "multi", "ade-mi": "ade-mi"}
BASELINE_TAGS = {"single_view": 0, "multi_view": 1}


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class Split:
    train: np.ndarray  # event indices, in upload order
    test: np.ndarray


def split_dataset(labels, ratio: float, seed: int) -> Split:
    """Stratified event-level split. ``labels`` may be a LabeledCsiSet."""
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if not 0 < ratio < 1:
        raise DomainError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise DomainError(f"class {c} has {idx.size} event(s); need at least 2 to split")
        idx = rng.permutation(idx)
        n_tr = min(max(int(round(ratio * idx.size)), 1), idx.size - 1)
        train.append(idx[:n_tr])
        test.append(idx[n_tr:])
    train = rng.permutation(np.concatenate(train))
    test = np.sort(np.concatenate(test))
    return Split(train, test)


# ---------------------------------------------------------------- metrics

def confusion_matrix(predictions, labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise DomainError("predictions and labels differ in length")
    for name, a in (("prediction", p), ("label", y)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise DomainError(f"{name} out of range 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def per_class_recall(cm) -> list:
    cm = np.asarray(cm)
    rows = cm.sum(axis=1)
    return [float(cm[i, i] / rows[i]) if rows[i] else float("nan") for i in range(cm.shape[0])]


@dataclass
class MetricsReport:
    accuracy: dict             # scheme -> fraction
    confusion: list            # ade-mi, 6x6 counts
    per_class_recall: list
    local_accuracy: list       # per device
    upload_latency_s: dict     # scheme -> seconds per sample
    payload_bits: dict         # scheme -> bits per sample (all devices)
    dims: list
    n_train: int
    n_test: int
    baseline_confusion: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)  # name -> [(epoch, loss, acc)]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


# ---------------------------------------------------------------- helpers

@contextlib.contextmanager
def stage(name: str):
    """Tag any exception with the stage that raised it."""
    t0 = time.perf_counter()
    log.info("stage %s: start", name)
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
            log.error("stage %s failed: %s: %s", name, type(exc).__name__, exc)
        raise
    log.info("stage %s: done in %.1f s", name, time.perf_counter() - t0)


def qspec_for(cfg: ExperimentConfig) -> QuantizerSpec:
    return QuantizerSpec(cfg.channel.bits_per_element, cfg.quantizer.clip)


def _write_jsonl(path, rows):
    with open(path, "w") as fh:
        for epoch, loss, acc in rows:
            fh.write(json.dumps({"epoch": epoch, "loss": loss, "accuracy": acc}) + "\n")


def _read_jsonl(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        r = json.loads(line)
        rows.append([r["epoch"], r["loss"], r["accuracy"]])
    return rows


def _record_time(run_dir: Path, key: str, seconds: float):
    path = run_dir / "timings.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data[key] = seconds
    path.write_text(json.dumps(data, sort_keys=True, indent=1))


def compute_spectrograms(cfg: ExperimentConfig, events=None) -> tuple:
    """(K, n, S_T, S_F) spectrogram power for the configured dataset, plus labels."""
    ds = make_dataset(cfg.scene, cfg.n_events, cfg.base_seed)
    idx = range(len(ds)) if events is None else events
    K = cfg.scene.num_devices
    n_t, n_f = cfg.spectro_shape
    X = np.empty((K, len(idx), n_t, n_f))
    f_s = cfg.scene.sample_rate_hz
    for j, i in enumerate(idx):
        ev = ds[i]
        for k, csi in enumerate(ev.views):
            X[k, j] = dfs_spectrogram(csi, f_s, cfg.pipeline).data
    return X, ds.labels[np.asarray(idx, dtype=np.int64)]


def _save_latents(path, z, meta):
    arr = z.values if z.indices is None else z.indices
    tio.save_tensor(path, arr)
    entries = dict(meta)
    entries.update(mode="float" if z.indices is None else "index", bits=z.spec.bits,
                   clip=repr(z.spec.clip), dim=z.dim, n_samples=arr.shape[0],
                   sha256=tio.file_sha256(path))
    tio.write_manifest(tio.manifest_path(path), entries)


def load_latents(path):
    """Decode a latent upload from its file and manifest alone."""
    man = tio.read_manifest(tio.manifest_path(path))
    if tio.file_sha256(path) != man["sha256"]:
        raise DomainError(f"{path}: checksum mismatch")
    arr = tio.load_tensor(path)
    spec = QuantizerSpec(int(man["bits"]), float(man["clip"]))
    if man["mode"] == "index":
        return from_indices(arr, spec), man
    return LatentVector(arr, None, spec), man


# ---------------------------------------------------------------- stages

def stage_synth(cfg: ExperimentConfig, run_dir) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with stage("synth"):
        t0 = time.perf_counter()
        (run_dir / "config.yaml").write_text(dump_config(cfg))
        seeds = {"dataset": cfg.base_seed, "split": cfg.base_seed,
                 "server": cfg.server_train_config().seed}
        for k in range(cfg.scene.num_devices):
            seeds[f"device.{k}"] = cfg.device_train_config(k).seed
        for b in cfg.baselines:
            seeds[f"baseline.{b}"] = cfg.baseline_train_config(BASELINE_TAGS[b]).seed
        tio.write_manifest(run_dir / "seeds.manifest", seeds)
        X, labels = compute_spectrograms(cfg)
        split = split_dataset(labels, cfg.split_ratio, cfg.base_seed)
        tio.save_tensor(run_dir / "labels.bin", labels)
        tio.save_tensor(run_dir / "split_train.bin", split.train)
        tio.save_tensor(run_dir / "split_test.bin", split.test)
        for k in range(X.shape[0]):
            tio.save_tensor(run_dir / f"spectro_{k}.bin", X[k])
        _record_time(run_dir, "synth", time.perf_counter() - t0)


def _load_split(run_dir):
    labels = tio.load_tensor(run_dir / "labels.bin")
    split = Split(tio.load_tensor(run_dir / "split_train.bin"), tio.load_tensor(run_dir / "split_test.bin"))
    return labels, split


def stage_train_device(cfg: ExperimentConfig, run_dir, device_id: int) -> None:
    run_dir = Path(run_dir)
    if not 0 <= device_id < cfg.scene.num_devices:
        raise DomainError(f"device {device_id} out of range")
    with stage(f"train-device-{device_id}"):
        t0 = time.perf_counter()
        labels, split = _load_split(run_dir)
        X = tio.load_tensor(run_dir / f"spectro_{device_id}.bin")
        lb = link_budget(cfg.channel)
        q = qspec_for(cfg)
        tcfg = cfg.device_train_config(device_id)
        res = train_device(X[split.train], labels[split.train], lb.dim, tcfg, q, device_id)
        meta = {"device_id": device_id, "dim": lb.dim, "seed": tcfg.seed,
                "snr_db": repr(cfg.channel.snr_db), "capacity_bps": repr(lb.capacity_bps)}
        state = dict(res.model.theta.state_dict())
        state.update(res.model.phi.state_dict())
        tio.save_checkpoint(run_dir / f"device_{device_id}.bin", state,
                            dict(meta, input_shape="x".join(map(str, X.shape[1:]))))
        _save_latents(run_dir / f"latents_{device_id}.bin", res.latents, meta)
        z_test = encode(res.model, X[split.test], q)
        _save_latents(run_dir / f"latents_test_{device_id}.bin", z_test, meta)
        _write_jsonl(run_dir / f"device_{device_id}_metrics.jsonl", res.curve)
        _record_time(run_dir, f"device_{device_id}", time.perf_counter() - t0)


def load_device(run_dir, device_id: int) -> DeviceModel:
    state, man = tio.load_checkpoint(Path(run_dir) / f"device_{device_id}.bin")
    hw = tuple(int(v) for v in man["input_shape"].split("x"))
    model = DeviceModel(hw, int(man["dim"]))
    model.theta.load_state_dict({k: v for k, v in state.items() if k in model.theta.params})
    model.phi.load_state_dict({k: v for k, v in state.items() if k in model.phi.params})
    return model


def gather_latents(run_dir, num_devices: int, prefix="latents") -> np.ndarray:
    views = {}
    for k in range(num_devices):
        z, man = load_latents(Path(run_dir) / f"{prefix}_{k}.bin")
        views[int(man["device_id"])] = z
    return concat_latents(views, range(num_devices))


def stage_train_server(cfg: ExperimentConfig, run_dir) -> None:
    """Reads only the uploaded latent files and the training labels."""
    run_dir = Path(run_dir)
    with stage("train-server"):
        t0 = time.perf_counter()
        K = cfg.scene.num_devices
        Z = gather_latents(run_dir, K)
        labels, split = _load_split(run_dir)
        y = labels[split.train]
        tcfg = cfg.server_train_config()
        res = train_server(Z, y, tcfg)
        inputs = {f"input.{k}.sha256": tio.file_sha256(run_dir / f"latents_{k}.bin") for k in range(K)}
        tio.save_checkpoint(run_dir / "server_model.bin", res.model.psi.state_dict(),
                            dict(inputs, input_width=Z.shape[1], seed=tcfg.seed))
        _write_jsonl(run_dir / "server_metrics.jsonl", res.curve)
        _record_time(run_dir, "server", time.perf_counter() - t0)


def load_server(run_dir) -> ServerModel:
    state, man = tio.load_checkpoint(Path(run_dir) / "server_model.bin")
    model = ServerModel(int(man["input_width"]))
    model.psi.load_state_dict(state)
    return model


def _scheme_costs(cfg: ExperimentConfig, spectro_shape=None):
    """Per-sample upload latency and payload bits for each scheme."""
    ch = cfg.channel
    raw = raw_payload_bits(*(spectro_shape or cfg.spectro_shape), ch.bits_per_element)
    lb = link_budget(ch)
    cap_full = shannon_capacity(ch.total_bandwidth_hz, ch.snr_db)
    K = ch.num_devices
    latency = {"single": upload_latency(raw, cap_full),
               "multi": upload_latency(raw, lb.capacity_bps),
               "ade-mi": lb.latency_s}
    bits = {"single": raw, "multi": K * raw, "ade-mi": K * lb.payload_bits}
    return latency, bits, lb


def stage_eval(cfg: ExperimentConfig, run_dir) -> MetricsReport:
    run_dir = Path(run_dir)
    with stage("eval"):
        K = cfg.scene.num_devices
        labels, split = _load_split(run_dir)
        y_test = labels[split.test]
        server = load_server(run_dir)
        Zt = gather_latents(run_dir, K, "latents_test")
        pred = predict(server, Zt).argmax(axis=1)
        cm = confusion_matrix(pred, y_test)
        accuracy = {"ade-mi": float(np.trace(cm) / cm.sum())}
        q = qspec_for(cfg)
        local = []
        curves = {"ade-mi.server": _read_jsonl(run_dir / "server_metrics.jsonl")}
        X = np.stack([tio.load_tensor(run_dir / f"spectro_{k}.bin") for k in range(K)])
        for k in range(K):
            model = load_device(run_dir, k)
            p = predict_local(model, X[k][split.test], q).argmax(axis=1)
            local.append(float(np.mean(p == y_test)))
            curves[f"device.{k}"] = _read_jsonl(run_dir / f"device_{k}_metrics.jsonl")
        base_cm = {}
        for mode in cfg.baselines:
            name = SCHEME_NAMES[mode]
            with stage(f"baseline-{name}"):
                t0 = time.perf_counter()
                tcfg = cfg.baseline_train_config(BASELINE_TAGS[mode])
                view = cfg.single_view_device if mode == "single_view" else None
                res = train_baseline(X[:, split.train], labels[split.train], mode, tcfg, view)
                tio.save_checkpoint(run_dir / f"baseline_{mode}.bin", res.model.store.state_dict(),
                                    {"mode": mode, "seed": tcfg.seed, "view": view})
                _write_jsonl(run_dir / f"baseline_{mode}_metrics.jsonl", res.curve)
                bp = predict_baseline(res.model, X[:, split.test]).argmax(axis=1)
                bcm = confusion_matrix(bp, y_test)
                accuracy[name] = float(np.trace(bcm) / bcm.sum())
                base_cm[name] = bcm.tolist()
                curves[name] = [list(r) for r in res.curve]
                _record_time(run_dir, f"baseline_{mode}", time.perf_counter() - t0)
        latency, bits, lb = _scheme_costs(cfg)
        report = MetricsReport(
            accuracy=accuracy, confusion=cm.tolist(), per_class_recall=per_class_recall(cm),
            local_accuracy=local, upload_latency_s=latency, payload_bits=bits,
            dims=[lb.dim] * K, n_train=int(split.train.size), n_test=int(split.test.size),
            baseline_confusion=base_cm, curves=curves)
        (run_dir / "report.json").write_text(report.to_json())
        np.savetxt(run_dir / "confusion.csv", cm, fmt="%d", delimiter=",")
        write_checksums(run_dir)
        return report


# ---------------------------------------------------------------- integrity

_VOLATILE = {"timings.json", "checksums.manifest"}


def write_checksums(run_dir) -> dict:
    run_dir = Path(run_dir)
    sums = {p.name: tio.file_sha256(p) for p in sorted(run_dir.iterdir())
            if p.is_file() and p.name not in _VOLATILE}
    tio.write_manifest(run_dir / "checksums.manifest", sums)
    return sums


def verify_run(run_dir) -> list:
    """Names of artifacts whose checksum no longer matches (empty if intact)."""
    run_dir = Path(run_dir)
    sums = tio.read_manifest(run_dir / "checksums.manifest")
    bad = []
    for name, digest in sums.items():
        p = run_dir / name
        if not p.exists() or tio.file_sha256(p) != digest:
            bad.append(name)
    return bad


# ---------------------------------------------------------------- runs and sweeps

def run_experiment(cfg: ExperimentConfig, run_dir) -> MetricsReport:
    """synth -> per-device training -> one-shot upload -> server -> eval."""
    run_dir = Path(run_dir)
    stage_synth(cfg, run_dir)
    for k in range(cfg.scene.num_devices):
        stage_train_device(cfg, run_dir, k)
    stage_train_server(cfg, run_dir)
    return stage_eval(cfg, run_dir)


def _with_interval(cfg: ExperimentConfig, dt: float) -> ExperimentConfig:
    return dataclasses.replace(cfg, scene=dataclasses.replace(cfg.scene, sample_interval_s=dt))


def sweep_interval(cfg: ExperimentConfig, intervals, out_root) -> list:
    """One full run per sampling interval; rows of (interval_s, scheme, accuracy)."""
    intervals = list(intervals)
    if not intervals:
        raise DomainError("need at least one interval")
    cfgs = [_with_interval(cfg, dt) for dt in intervals]  # validates every point first
    rows = []
    for dt, c in zip(intervals, cfgs):
        rep = run_experiment(c, Path(out_root) / f"dt_{dt:g}")
        for scheme in ("single", "multi", "ade-mi"):
            if scheme in rep.accuracy:
                rows.append({"interval_s": dt, "scheme": scheme, "accuracy": rep.accuracy[scheme]})
    return rows


def samples_within(budget_s: float, per_sample_s: float, n_max: int) -> int:
    if budget_s <= 0:
        raise DomainError("budgets must be positive")
    return min(n_max, math.floor(budget_s / per_sample_s * (1 + 1e-12)))


def sweep_upload_time(cfg: ExperimentConfig, budgets, run_dir, schemes=("ade-mi", "multi", "single")) -> list:
    """Accuracy vs training-upload budget.

    Each budget admits ``floor(budget / per-sample latency)`` training events
    (a prefix of the upload order); the server or baseline is retrained on
    that prefix. A budget admitting nothing yields accuracy 1/6.
    """
    budgets = [float(b) for b in budgets]
    if not budgets or min(budgets) <= 0:
        raise DomainError("budgets must be positive")
    run_dir = Path(run_dir)
    if not (run_dir / "latents_test_0.bin").exists():
        stage_synth(cfg, run_dir)
        for k in range(cfg.scene.num_devices):
            stage_train_device(cfg, run_dir, k)
    K = cfg.scene.num_devices
    labels, split = _load_split(run_dir)
    y_tr, y_te = labels[split.train], labels[split.test]
    n_tr = y_tr.size
    latency, _, _ = _scheme_costs(cfg)
    Z, Zt = gather_latents(run_dir, K), gather_latents(run_dir, K, "latents_test")
    X = None
    cache = {}

    def accuracy(scheme, n):
        nonlocal X
        if n == 0:
            return 1.0 / NUM_CLASSES
        if (scheme, n) in cache:
            return cache[scheme, n]
        with stage(f"sweep-upload-{scheme}-{n}"):
            if scheme == "ade-mi":
                res = train_server(Z[:n], y_tr[:n], cfg.server_train_config())
                pred = predict(res.model, Zt).argmax(axis=1)
            else:
                if X is None:
                    X = np.stack([tio.load_tensor(run_dir / f"spectro_{k}.bin") for k in range(K)])
                mode = "single_view" if scheme == "single" else "multi_view"
                res = train_baseline(X[:, split.train[:n]], y_tr[:n], mode,
                                     cfg.baseline_train_config(BASELINE_TAGS[mode]),
                                     cfg.single_view_device if mode == "single_view" else None)
                pred = predict_baseline(res.model, X[:, split.test]).argmax(axis=1)
        cache[scheme, n] = float(np.mean(pred == y_te))
        return cache[scheme, n]

    rows = []
    for scheme in schemes:
        if scheme not in latency:
            raise DomainError(f"unknown scheme {scheme!r}")
        for b in budgets:
            n = samples_within(b, latency[scheme], n_tr)
            rows.append({"budget_s": b, "scheme": scheme, "n_samples": n,
                         "accuracy": accuracy(scheme, n)})
    return rows


def budget_to_reach(rows, scheme: str, fraction: float = 0.9):
    """Smallest budget at which ``scheme`` reaches ``fraction`` of its final accuracy."""
    pts = sorted((r["budget_s"], r["accuracy"]) for r in rows if r["scheme"] == scheme)
    if not pts:
        raise DomainError(f"no rows for scheme {scheme!r}")
    target = fraction * pts[-1][1]
    for b, acc in pts:
        if acc >= target:
            return b
    return pts[-1][0]


def rows_to_csv(rows) -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    lines = [",".join(keys)]
    lines += [",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) for r in rows]
    return "\n".join(lines) + "\n"
