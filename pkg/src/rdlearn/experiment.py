"""Experiment pipeline: data generation, training, sampling, evaluation.

Output directory layout (``<out>`` is ``ExperimentConfig.output_path()``)::

    <out>/config.yaml                      resolved config echo
    <out>/data/<key>/model.json            target model (key: "shared" or "s<seed>")
    <out>/data/<key>/train.rbd, val.rbd    datasets (+ .json sidecars)
    <out>/checkpoints/<obj>_s<seed>.rbm    final parameters
    <out>/checkpoints/<obj>_s<seed>_init.rbm
    <out>/checkpoints/<obj>_s<seed>_e<epoch>.rbm   optional intermediate
    <out>/metrics/<obj>_s<seed>.csv        epoch,objective_value,r_theta
    <out>/metrics/<obj>_s<seed>.timing.csv epoch,wall_clock_s   (not reproducible)
    <out>/samples/<obj>_s<seed>.rbd        generated samples
    <out>/report/metrics.csv               metric,method,seed,value
    <out>/report/summary.csv               metric,method,n_seeds,mean,stderr
    <out>/report/hamming.csv               method,seed,distance
    <out>/report/pca.csv                   method,seed,index,pc1,pc2
    <out>/manifest.json                    config echo + SHA-256 of every artifact
    <out>/run_log.jsonl                    timestamps per command   (not reproducible)

Everything except the ``.timing.csv`` files and ``run_log.jsonl`` is
byte-identical across re-runs with the same config.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import yaml

from . import __version__
from .config import ExperimentConfig
from .data import Dataset, file_sha256
from .evaluation import (
    EmpiricalEnergyDist,
    fit_pca,
    hamming_histogram,
    mean_stderr,
    project,
    r_theta,
    wasserstein_1d,
)
from .rbm import load_params, params_to_bytes
from .rng import stream
from .targets import TargetModel, exact_samples
from .tempering import generate_dataset
from .training import ObjectiveKind, generate_samples, train

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "objective_value", "r_theta"]
TIMING_COLUMNS = ["epoch", "wall_clock_s"]
REPORT_COLUMNS = ["metric", "method", "seed", "value"]
SUMMARY_COLUMNS = ["metric", "method", "n_seeds", "mean", "stderr"]
HAMMING_COLUMNS = ["method", "seed", "distance"]
PCA_COLUMNS = ["method", "seed", "index", "pc1", "pc2"]
TRAINING_METHOD = "training"
_UNTRACKED_SUFFIXES = (".timing.csv", "run_log.jsonl", "manifest.json")


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


@contextmanager
def atomic_outputs():
    """Collect ``(path, bytes)`` writes and commit them only if the block succeeds."""
    pending: list[tuple[Path, bytes]] = []
    yield pending
    tmp_paths = []
    try:
        for path, payload in pending:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            tmp_paths.append((tmp, path))
        for tmp, path in tmp_paths:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in tmp_paths:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


class Layout:
    def __init__(self, root: Path):
        self.root = Path(root)

    def data_dir(self, key: str) -> Path:
        return self.root / "data" / key

    def model(self, key: str) -> Path:
        return self.data_dir(key) / "model.json"

    def train_set(self, key: str) -> Path:
        return self.data_dir(key) / "train.rbd"

    def val_set(self, key: str) -> Path:
        return self.data_dir(key) / "val.rbd"

    def checkpoint(self, objective: str, seed: int, tag: str = "") -> Path:
        return self.root / "checkpoints" / f"{objective}_s{seed}{tag}.rbm"

    def metrics(self, objective: str, seed: int) -> Path:
        return self.root / "metrics" / f"{objective}_s{seed}.csv"

    def timing(self, objective: str, seed: int) -> Path:
        return self.root / "metrics" / f"{objective}_s{seed}.timing.csv"

    def samples(self, objective: str, seed: int) -> Path:
        return self.root / "samples" / f"{objective}_s{seed}.rbd"

    @property
    def report(self) -> Path:
        return self.root / "report"


def _stage_dataset(pending, path: Path, ds: Dataset) -> None:
    raw = ds.to_bytes()
    pending.append((path, raw))
    pending.append((Path(str(path) + ".json"), ds.sidecar_bytes(raw)))


def _log_event(cfg: ExperimentConfig, command: str, **info) -> None:
    root = cfg.output_path()
    root.mkdir(parents=True, exist_ok=True)
    rec = {"command": command, "time": _dt.datetime.now(_dt.timezone.utc).isoformat(), **info}
    with open(root / "run_log.jsonl", "a") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_manifest(cfg: ExperimentConfig) -> Path:
    """Hash every reproducible artifact under the output directory."""
    root = cfg.output_path()
    artifacts = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and not p.name.startswith(".tmp-") and not str(p).endswith(_UNTRACKED_SUFFIXES):
            artifacts[p.relative_to(root).as_posix()] = file_sha256(p)
    manifest = {"tool": "rdlearn", "version": __version__, "config": cfg.to_dict(), "artifacts": artifacts}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _config_echo(cfg: ExperimentConfig) -> bytes:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True).encode()


# -- commands ----------------------------------------------------------------

def generate_data(cfg: ExperimentConfig, keys=None) -> dict[str, tuple[Path, Path]]:
    """Build the target model(s) and train/val datasets; returns paths per instance key."""
    lay = Layout(cfg.output_path())
    keys = keys or sorted({cfg.instance_key(s) for s in cfg.seeds})
    out = {}
    for key in keys:
        iseed = cfg.instance_seed(key)
        model = cfg.build_model(iseed)
        if cfg.data.source == "exact":
            rng = stream(iseed, "data", "exact")
            d = cfg.data
            meta = {"source": "exact", "model_hash": model.content_hash(), "model_kind": model.kind}
            train_ds = Dataset(exact_samples(model, d.train_size, rng), dict(meta, split="train"))
            val_ds = Dataset(exact_samples(model, d.val_size, rng), dict(meta, split="val"))
        else:
            train_ds, val_ds = generate_dataset(model, cfg.pt_config(iseed))
        with atomic_outputs() as pending:
            pending.append((lay.root / "config.yaml", _config_echo(cfg)))
            pending.append((lay.model(key), (model.to_json() + "\n").encode()))
            _stage_dataset(pending, lay.train_set(key), train_ds)
            _stage_dataset(pending, lay.val_set(key), val_ds)
        out[key] = (lay.train_set(key), lay.val_set(key))
    write_manifest(cfg)
    _log_event(cfg, "generate-data", keys=list(keys))
    return out


def _load_instance(cfg: ExperimentConfig, seed: int) -> tuple[TargetModel, Dataset, Dataset]:
    lay = Layout(cfg.output_path())
    key = cfg.instance_key(seed)
    for p in (lay.model(key), lay.train_set(key), lay.val_set(key)):
        if not p.is_file():
            raise FileNotFoundError(f"missing {p}; run generate-data first")
    return TargetModel.load(lay.model(key)), Dataset.load(lay.train_set(key)), Dataset.load(lay.val_set(key))


def train_one(cfg: ExperimentConfig, objective: str, seed: int, epochs: int | None = None):
    """Train one (objective, seed) cell and write its checkpoint and metrics."""
    objective = ObjectiveKind.parse(objective).value
    lay = Layout(cfg.output_path())
    model, train_ds, val_ds = _load_instance(cfg, seed)
    overrides = {} if epochs is None else {"epochs": epochs}
    tcfg = cfg.train_config(objective, seed, **overrides)
    result = train(train_ds, model, tcfg, val=val_ds)
    rows = [[m.epoch, _fmt(m.objective_value), _fmt(m.r_theta)] for m in result.metrics]
    timing = [[m.epoch, f"{m.wall_clock:.3f}"] for m in result.metrics]
    with atomic_outputs() as pending:
        pending.append((lay.checkpoint(objective, seed), params_to_bytes(result.params)))
        pending.append((lay.checkpoint(objective, seed, "_init"), params_to_bytes(result.initial_params)))
        for ep, p in result.checkpoints.items():
            pending.append((lay.checkpoint(objective, seed, f"_e{ep}"), params_to_bytes(p)))
        pending.append((lay.metrics(objective, seed), _csv_text(METRICS_COLUMNS, rows).encode()))
    lay.timing(objective, seed).write_text(_csv_text(TIMING_COLUMNS, timing))
    write_manifest(cfg)
    _log_event(cfg, "train", objective=objective, seed=seed)
    return result


def sample_from_checkpoint(checkpoint, init_path, steps: int, count: int | None, seed: int, out_path) -> Dataset:
    params = load_params(checkpoint)
    init = Dataset.load(init_path)
    if init.n_visible != params.n_visible:
        raise ValueError(f"checkpoint has Nx={params.n_visible} but {init_path} has Nx={init.n_visible}")
    gen = generate_samples(params, init, steps, stream(seed, "sample"), count=count)
    with atomic_outputs() as pending:
        _stage_dataset(pending, Path(out_path), gen)
    return gen


def sample_one(cfg: ExperimentConfig, objective: str, seed: int) -> Path:
    objective = ObjectiveKind.parse(objective).value
    lay = Layout(cfg.output_path())
    ckpt = lay.checkpoint(objective, seed)
    if not ckpt.is_file():
        raise FileNotFoundError(f"missing checkpoint {ckpt}; run train first")
    key = cfg.instance_key(seed)
    out = lay.samples(objective, seed)
    sample_from_checkpoint(ckpt, lay.train_set(key), cfg.sampling.steps, cfg.sampling.count, seed, out)
    write_manifest(cfg)
    _log_event(cfg, "sample", objective=objective, seed=seed)
    return out


def evaluate_runs(cfg: ExperimentConfig) -> dict[str, Path]:
    """Wasserstein, R, Hamming and PCA dumps for every (objective, seed) with samples on disk."""
    lay = Layout(cfg.output_path())
    metric_rows, ham_rows, pca_rows = [], [], []
    per_metric: dict[tuple[str, str], list[float]] = {}
    k = cfg.evaluation.hamming_k
    pcas: dict[str, object] = {}
    for seed in cfg.seeds:
        model, train_ds, val_ds = _load_instance(cfg, seed)
        key = cfg.instance_key(seed)
        ref = EmpiricalEnergyDist.of(model, train_ds)
        if key not in pcas:
            pcas[key] = fit_pca(train_ds)
            kk = min(k, len(train_ds))
            for d in hamming_histogram(train_ds, kk, stream(cfg.instance_seed(key), "hamming", TRAINING_METHOD)):
                ham_rows.append([TRAINING_METHOD, cfg.instance_seed(key), _fmt(d)])
            for i, (a, b) in enumerate(project(pcas[key], train_ds)):
                pca_rows.append([TRAINING_METHOD, cfg.instance_seed(key), i, _fmt(a), _fmt(b)])
        for obj in cfg.objectives:
            obj = ObjectiveKind.parse(obj).value
            sp = lay.samples(obj, seed)
            if not sp.is_file():
                continue
            gen = Dataset.load(sp)
            if gen.n_visible != model.n:
                raise ValueError(f"{sp} has Nx={gen.n_visible}, model has {model.n}")
            w = wasserstein_1d(EmpiricalEnergyDist.of(model, gen), ref)
            metric_rows.append(["wasserstein", obj, seed, _fmt(w)])
            per_metric.setdefault(("wasserstein", obj), []).append(w)
            ck = lay.checkpoint(obj, seed)
            if ck.is_file():
                r = r_theta(load_params(ck), model, val_ds)
                metric_rows.append(["r_theta", obj, seed, _fmt(r)])
                per_metric.setdefault(("r_theta", obj), []).append(r)
            kk = min(k, len(gen))
            for d in hamming_histogram(gen, kk, stream(seed, "hamming", obj)):
                ham_rows.append([obj, seed, _fmt(d)])
            for i, (a, b) in enumerate(project(pcas[key], gen)):
                pca_rows.append([obj, seed, i, _fmt(a), _fmt(b)])
    summary = []
    for (metric, method), vals in sorted(per_metric.items()):
        mu, se = mean_stderr(vals)
        summary.append([metric, method, len(vals), _fmt(mu), _fmt(se)])
    paths = {
        "metrics": lay.report / "metrics.csv",
        "summary": lay.report / "summary.csv",
        "hamming": lay.report / "hamming.csv",
        "pca": lay.report / "pca.csv",
    }
    with atomic_outputs() as pending:
        pending.append((paths["metrics"], _csv_text(REPORT_COLUMNS, metric_rows).encode()))
        pending.append((paths["summary"], _csv_text(SUMMARY_COLUMNS, summary).encode()))
        pending.append((paths["hamming"], _csv_text(HAMMING_COLUMNS, ham_rows).encode()))
        pending.append((paths["pca"], _csv_text(PCA_COLUMNS, pca_rows).encode()))
    write_manifest(cfg)
    _log_event(cfg, "evaluate")
    return paths


def run_all(cfg: ExperimentConfig, progress=None) -> Path:
    """Every stage in order; existing datasets are reused."""
    lay = Layout(cfg.output_path())
    keys = sorted({cfg.instance_key(s) for s in cfg.seeds})
    missing = [k for k in keys if not (lay.train_set(k).is_file() and lay.val_set(k).is_file())]
    if missing:
        generate_data(cfg, missing)
    for seed in cfg.seeds:
        for obj in cfg.objectives:
            if progress:
                progress(f"train {obj} seed {seed}")
            train_one(cfg, obj, seed)
            sample_one(cfg, obj, seed)
    evaluate_runs(cfg)
    return write_manifest(cfg)


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
