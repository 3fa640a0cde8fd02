"""Pipeline stages behind the command line: extract, train, evaluate, analyze.

Everything a run writes lives under one output directory::

    features/<utt>.formants.csv          raw F1-F3 track and transforms
    features/<utt>.<SET>.csv             normalized feature series per set
    features/<utt>.binned.<SET>.csv      10-bin rhotic segment per set
    features/labels.csv                  successfully extracted utterances
    features/failures.csv                utterances that failed extraction
    models/<SET>/<participant>.json      fold checkpoints
    reports/<SET>/<participant>.json     fold reports
    evaluation/                          aggregate.json, per_participant.csv, age_auroc_<SET>.csv
    analysis/                            effect_sizes.json, trajectory.csv
    manifests/<stage>.json               config snapshot and file hashes
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DatasetError,
    UtteranceRecord,
    class_weights,
    lopo_splits,
    read_manifest,
    read_participants,
    window_sequence,
)
from .formants import NormTable, normalize_formants, track_formants, write_formant_csv
from .inversion import estimate_source_features, load_tv_track, pseudo_invert, znorm_utterance
from .neural import Architecture, TrainConfig, grid_search, train
from .neural.checkpoint import checkpoint_document, dumps
from .neural.search import SEARCH_GRID
from .segmentation import bin_segment, extract_rhotic_interval, read_binned_csv, read_textgrid, write_binned_csv
from .series import FEATURE_SETS, concat_channels, format_float, read_series_csv, write_series_csv
from .signal_io import read_wav
from .stats import (
    FoldReport,
    StatsError,
    auroc,
    cohens_d,
    confusion_metrics,
    spearman_exact,
    summarize,
    trajectory_with_ci,
)

log = logging.getLogger(__name__)

THREADS_ENV = "RHOTIC_MDX_THREADS"
LABELS_HEADER = ("utterance_id", "participant_id", "avg_rating", "label", "has_interval")

ASSUMPTIONS = {
    "threshold": 0.5,
    "precision_recall_averaging": "support-weighted",
    "validation_sampling": "unstratified uniform per fold, seed = base seed + fold index",
}


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    arch = Architecture().to_dict()
    del arch["input_channels"]
    train_cfg = TrainConfig().to_dict()
    del train_cfg["seed"]
    return {
        "manifest": None,
        "participants": None,
        "norms": None,
        "feature_sets": ["FORMANTS5", "TV6"],
        "tv_source": "auto",
        "rhotic_tier": "rhotic",
        "n_bins": 10,
        "failure_tolerance": 0.10,
        "seed": 7,
        "val_fraction": 0.15,
        "architecture": arch,
        "train": train_cfg,
        "grid": False,
        "grid_values": copy.deepcopy(SEARCH_GRID),
        "analyze_feature_set": "TV6",
    }


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> None:
    """Apply one ``key=value`` override; dotted keys reach nested sections."""
    if "=" not in item:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r} in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(value)


def _merge(base: dict, update: dict, prefix="") -> None:
    for k, v in update.items():
        if k not in base:
            raise ConfigError(f"unknown config key {prefix}{k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k != "grid_values":
            _merge(base[k], v, f"{prefix}{k}.")
        else:
            base[k] = v


def load_config(path=None, overrides=(), **flags) -> dict:
    """Defaults, then the JSON file, then ``--set`` items, then explicit flags.

    Relative paths in a config file are taken relative to that file.
    """
    cfg = default_config()
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        for key in ("manifest", "participants", "norms"):
            if doc.get(key) and not Path(doc[key]).is_absolute():
                doc[key] = str(path.parent / doc[key])
        _merge(cfg, doc)
    for item in overrides:
        apply_override(cfg, item)
    for key, value in flags.items():
        if value is not None:
            cfg[key] = value
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    sets = cfg["feature_sets"]
    if isinstance(sets, str):
        cfg["feature_sets"] = sets = [sets]
    for name in list(sets) + [cfg["analyze_feature_set"]]:
        if name not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {name!r}; expected one of {sorted(FEATURE_SETS)}")
    if cfg["tv_source"] not in ("auto", "file", "pseudo"):
        raise ConfigError("tv_source must be auto, file or pseudo")
    if not 0 <= float(cfg["failure_tolerance"]) < 1:
        raise ConfigError("failure_tolerance must be in [0, 1)")
    try:
        Architecture(input_channels=1, **cfg["architecture"])
        TrainConfig(seed=int(cfg["seed"]), **cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model settings: {exc}") from None


def _require_path(cfg, key) -> Path:
    value = cfg.get(key)
    if not value:
        raise ConfigError(f"config needs {key!r}")
    p = Path(value)
    if not p.exists():
        raise ConfigError(f"{key} not found: {p}")
    return p


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _map(fn, items, threads: int):
    """Ordered map, in worker processes when ``threads > 1``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


# -- hashing and run manifests ----------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunManifest:
    stage: str
    config: dict
    out_dir: Path
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    started: float = field(default_factory=time.time)

    def add_input(self, path) -> None:
        if path and Path(path).is_file():
            self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs.append(Path(path))

    def write(self) -> Path:
        path = self.out_dir / "manifests" / f"{self.stage}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        outputs = {}
        for p in sorted(set(self.outputs)):
            if p.is_file():
                outputs[str(p.relative_to(self.out_dir))] = sha256_file(p)
        doc = {
            "stage": self.stage,
            "code_version": __version__,
            "config": self.config,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outputs,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(self.started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        }
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


# -- extract ----------------------------------------------------------------


@dataclass
class Extracted:
    record: UtteranceRecord
    track: object = None
    series: dict = field(default_factory=dict)  # set name -> FrameSeries
    binned: dict = field(default_factory=dict)  # set name -> BinnedSegment
    error: str | None = None


def _needs(sets, *names) -> bool:
    return any(s in names for s in sets)


def extract_utterance(record, profile, norms, cfg) -> Extracted:
    """All feature products for one utterance, computed in memory."""
    sets = cfg["feature_sets"]
    buf = read_wav(record.audio_path)
    track = track_formants(buf, profile)
    if not track.present.any():
        raise DatasetError("no frames with three formants")
    formants5 = normalize_formants(track, norms, profile)
    out = Extracted(record, track)
    if "FORMANTS5" in sets:
        out.series["FORMANTS5"] = formants5

    if _needs(sets, "TV6", "TV9", "FUSED14"):
        use_file = cfg["tv_source"] == "file" or (cfg["tv_source"] == "auto" and record.tv_path)
        if use_file:
            if not record.tv_path:
                raise DatasetError("tv_source is 'file' but the manifest row has no tv_path")
            tv = load_tv_track(record.tv_path)
        else:
            tv = pseudo_invert(formants5)
        if "TV6" in sets:
            out.series["TV6"] = znorm_utterance(tv.replace(values=tv.values[:, :6], channels=tv.channels[:6], feature_set="TV6"))
        if _needs(sets, "TV9", "FUSED14"):
            if tv.n_channels == 6:
                tv = concat_channels([tv, estimate_source_features(buf)], "TV9")
            tv9 = znorm_utterance(tv.replace(feature_set="TV9"))
            if "TV9" in sets:
                out.series["TV9"] = tv9
            if "FUSED14" in sets:
                out.series["FUSED14"] = concat_channels([formants5, tv9], "FUSED14")

    if record.textgrid_path:
        interval = extract_rhotic_interval(read_textgrid(record.textgrid_path), cfg["rhotic_tier"])
        for name, series in out.series.items():
            out.binned[name] = bin_segment(series, interval, int(cfg["n_bins"]))
    return out


def _extract_job(args):
    record, profile, norms, cfg = args
    try:
        if profile is None:
            raise DatasetError(f"participant {record.participant_id!r} missing from the registry")
        return extract_utterance(record, profile, norms, cfg)
    except Exception as exc:  # isolate per-utterance failures
        return Extracted(record, error=f"{type(exc).__name__}: {exc}")


def write_labels(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELS_HEADER)
        for r in rows:
            w.writerow(r)


def read_labels(path) -> list[UtteranceRecord]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"feature cache has no labels file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LABELS_HEADER:
            raise DatasetError(f"{path}: header must be {','.join(LABELS_HEADER)}")
        return [UtteranceRecord(r["utterance_id"], r["participant_id"], float(r["avg_rating"])) for r in reader]


def cmd_extract(cfg: dict, out_dir) -> int:
    out = Path(out_dir)
    manifest_path = _require_path(cfg, "manifest")
    participants_path = _require_path(cfg, "participants")
    norms_path = _require_path(cfg, "norms")
    norms = NormTable.read_csv(norms_path)
    registry = read_participants(participants_path)
    records = read_manifest(manifest_path)
    if not records:
        raise DatasetError(f"{manifest_path}: no utterances")

    run = RunManifest("extract", cfg, out)
    for p in (manifest_path, participants_path, norms_path):
        run.add_input(p)
    for r in records:
        for p in (r.audio_path, r.textgrid_path, r.tv_path):
            run.add_input(p)

    jobs = [(r, registry.get(r.participant_id), norms, cfg) for r in records]
    results = _map(_extract_job, jobs, thread_count())

    feat = out / "features"
    feat.mkdir(parents=True, exist_ok=True)
    label_rows, failures = [], []
    for res in results:
        rec = res.record
        if res.error:
            log.warning("extract failed for %s: %s", rec.utterance_id, res.error)
            failures.append((rec.utterance_id, res.error))
            continue
        p = feat / f"{rec.utterance_id}.formants.csv"
        write_formant_csv(res.track, p)
        run.add_output(p)
        for name, series in res.series.items():
            p = feat / f"{rec.utterance_id}.{name}.csv"
            write_series_csv(series, p)
            run.add_output(p)
        for name, seg in res.binned.items():
            p = feat / f"{rec.utterance_id}.binned.{name}.csv"
            write_binned_csv(seg, p)
            run.add_output(p)
        label_rows.append((rec.utterance_id, rec.participant_id, repr(rec.avg_rating), rec.label, int(bool(res.binned))))
    write_labels(label_rows, feat / "labels.csv")
    run.add_output(feat / "labels.csv")
    with (feat / "failures.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("utterance_id", "error"))
        w.writerows(failures)
    run.add_output(feat / "failures.csv")
    run.write()

    rate = len(failures) / len(records)
    log.info("extracted %d of %d utterances", len(label_rows), len(records))
    if rate > float(cfg["failure_tolerance"]):
        log.error("%d of %d utterances failed (over the %.0f%% tolerance)", len(failures), len(records), 100 * cfg["failure_tolerance"])
        return 2
    return 0


# -- train ------------------------------------------------------------------


def load_examples(feat_dir: Path, records, feature_set: str) -> dict:
    """utterance_id -> (200, C) window, failing on any missing cache file."""
    channels = FEATURE_SETS[feature_set]
    out = {}
    for r in records:
        p = feat_dir / f"{r.utterance_id}.{feature_set}.csv"
        if not p.exists():
            raise DatasetError(f"incomplete feature cache: {p.name} missing")
        series = read_series_csv(p, feature_set)
        if series.channels != channels:
            raise DatasetError(f"{p.name}: channels {series.channels} do not match {feature_set}")
        out[r.utterance_id] = window_sequence(series)
    return out


def _arrays(ids, windows, labels):
    return np.stack([windows[i] for i in ids]), np.array([labels[i] for i in ids], dtype=np.float64)


def _fold_input_hash(arch, tcfg, fold, feat_dir, feature_set, labels) -> str:
    files = {}
    for uid in fold.train + fold.validation + fold.test:
        files[uid] = sha256_file(feat_dir / f"{uid}.{feature_set}.csv")
    doc = {
        "architecture": arch.to_dict(),
        "train": tcfg.to_dict(),
        "feature_set": feature_set,
        "fold": {"test": fold.test_participant, "train": fold.train, "validation": fold.validation, "test_ids": fold.test},
        "files": files,
        "labels": {uid: labels[uid] for uid in sorted(files)},
    }
    return sha256_text(json.dumps(doc, sort_keys=True))


def fold_report_document(model, fold, feature_set, scores, y_test, checkpoint_hash, input_hash) -> dict:
    metrics = confusion_metrics(scores, y_test)
    try:
        auc = auroc(scores, y_test)
    except StatsError:
        auc = None  # held-out participant with a single class
    return {
        "participant_id": fold.test_participant,
        "feature_set": feature_set,
        "n_test": len(fold.test),
        "n_train": len(fold.train),
        "n_validation": len(fold.validation),
        "metrics": {
            "f1_weighted": metrics["f1_weighted"],
            "precision_weighted": metrics["precision_weighted"],
            "recall_weighted": metrics["recall_weighted"],
            "auroc": auc,
            "accuracy": metrics["accuracy"],
        },
        "predictions": [
            {"utterance_id": uid, "score": float(s), "label": int(y)} for uid, s, y in zip(fold.test, scores, y_test)
        ],
        "training": {
            "best_epoch": model.best_epoch,
            "stopped_epoch": model.stopped_epoch,
            "best_val_loss": model.best_val_loss,
            "class_weights": list(model.weights),
            "fold_seed": fold.seed,
        },
        "architecture": model.architecture.to_dict(),
        "train_config": model.config.to_dict(),
        "assumptions": ASSUMPTIONS,
        "checkpoint_sha256": checkpoint_hash,
        "input_hash": input_hash,
    }


def _train_fold_job(args):
    arch, tcfg, tr, va = args
    return train(arch, tcfg, tr, va)


def cmd_train(cfg: dict, out_dir) -> int:
    out = Path(out_dir)
    feat = out / "features"
    records = read_labels(feat / "labels.csv")
    labels = {r.utterance_id: r.label for r in records}
    folds = lopo_splits(records, float(cfg["val_fraction"]), int(cfg["seed"]))
    run = RunManifest("train", cfg, out)
    run.add_input(feat / "labels.csv")
    threads = thread_count()

    for feature_set in cfg["feature_sets"]:
        windows = load_examples(feat, records, feature_set)
        for uid in windows:
            run.add_input(feat / f"{uid}.{feature_set}.csv")
        arch = Architecture(input_channels=len(FEATURE_SETS[feature_set]), **cfg["architecture"])
        tcfg = TrainConfig(seed=int(cfg["seed"]), **cfg["train"])
        model_dir = out / "models" / feature_set
        report_dir = out / "reports" / feature_set
        model_dir.mkdir(parents=True, exist_ok=True)
        report_dir.mkdir(parents=True, exist_ok=True)
        data = [
            (_arrays(f.train, windows, labels), _arrays(f.validation, windows, labels), _arrays(f.test, windows, labels))
            for f in folds
        ]
        for f, (tr, _, _) in zip(folds, data):
            class_weights(tr[1])  # both classes must be present in every training split

        if cfg["grid"]:
            result = grid_search(
                cfg["grid_values"], arch, tcfg, [(tr, va) for tr, va, _ in data], train_fn=train
            )
            arch, tcfg, models = result.architecture, result.config, result.models
            grid_path = report_dir / "grid.json"
            grid_path.write_text(json.dumps({"rows": result.rows, "best": {"architecture": arch.to_dict(), "train": tcfg.to_dict()}}, indent=1, sort_keys=True) + "\n")
            run.add_output(grid_path)
            pending = list(range(len(folds)))
        else:
            models = [None] * len(folds)
            pending = []
        hashes = [_fold_input_hash(arch, tcfg, f, feat, feature_set, labels) for f in folds]

        if not cfg["grid"]:
            for k, f in enumerate(folds):
                ck = model_dir / f"{f.test_participant}.json"
                rp = report_dir / f"{f.test_participant}.json"
                if ck.exists() and rp.exists():
                    try:
                        prev = json.loads(rp.read_text())
                        if prev.get("input_hash") == hashes[k] and prev.get("checkpoint_sha256") == sha256_file(ck):
                            log.info("%s fold %s up to date; skipped", feature_set, f.test_participant)
                            continue
                    except json.JSONDecodeError:
                        pass
                pending.append(k)
            trained = _map(_train_fold_job, [(arch, tcfg, data[k][0], data[k][1]) for k in pending], threads)
            for k, m in zip(pending, trained):
                models[k] = m

        for k in pending:
            f, model = folds[k], models[k]
            ck = model_dir / f"{f.test_participant}.json"
            ck.write_text(dumps(checkpoint_document(model)))
            x_te, y_te = data[k][2]
            scores = model.predict(x_te)
            doc = fold_report_document(model, f, feature_set, scores, y_te, sha256_file(ck), hashes[k])
            (report_dir / f"{f.test_participant}.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
            log.info("%s fold %s: F1 %.3f", feature_set, f.test_participant, doc["metrics"]["f1_weighted"])
        for f in folds:
            run.add_output(model_dir / f"{f.test_participant}.json")
            run.add_output(report_dir / f"{f.test_participant}.json")
    run.write()
    return 0


# -- evaluate ---------------------------------------------------------------


def _report_from_doc(doc) -> FoldReport:
    m = doc["metrics"]
    preds = [(p["utterance_id"], p["score"], p["label"]) for p in doc["predictions"]]
    return FoldReport(
        doc["participant_id"], m["f1_weighted"], m["precision_weighted"], m["recall_weighted"], m["auroc"], preds, doc["feature_set"]
    )


def load_reports(out: Path) -> dict:
    """feature set -> FoldReports sorted by participant."""
    by_set = {}
    for path in sorted((out / "reports").glob("*/*.json")):
        if path.name == "grid.json":
            continue
        doc = json.loads(path.read_text())
        by_set.setdefault(doc["feature_set"], []).append(_report_from_doc(doc))
    if not by_set:
        raise DatasetError(f"no fold reports found under {out / 'reports'}")
    return {k: sorted(v, key=lambda r: r.participant_id) for k, v in sorted(by_set.items())}


def _summary_dict(s) -> dict:
    return {"mean": s.mean, "sd": s.sd, "median": s.median, "n": s.n, "sd_defined": s.sd_defined}


def cmd_evaluate(cfg: dict, out_dir) -> int:
    out = Path(out_dir)
    by_set = load_reports(out)
    registry = {}
    if cfg.get("participants") and Path(cfg["participants"]).exists():
        registry = read_participants(cfg["participants"])
    ev = out / "evaluation"
    ev.mkdir(parents=True, exist_ok=True)
    run = RunManifest("evaluate", cfg, out)
    for path in sorted((out / "reports").glob("*/*.json")):
        run.add_input(path)

    doc = {"assumptions": ASSUMPTIONS, "feature_sets": {}}
    per_rows = []
    for name, reports in by_set.items():
        block = {"n_folds": len(reports), "metrics": {}}
        for metric in FoldReport.METRICS:
            vals = [r.metric(metric) for r in reports if r.metric(metric) is not None]
            block["metrics"][metric] = _summary_dict(summarize(vals)) if vals else None
        rows = [(r.participant_id, registry[r.participant_id]) for r in reports if r.participant_id in registry and r.auroc is not None]
        if rows:
            p = ev / f"age_auroc_{name}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("participant", "age", "sex", "auroc"))
                aucs = {r.participant_id: r.auroc for r in reports}
                for pid, prof in rows:
                    w.writerow((pid, format_float(prof.age), prof.sex, format_float(aucs[pid])))
            run.add_output(p)
            if 2 <= len(rows) <= 10:
                rho, pval = spearman_exact([prof.age for _, prof in rows], [aucs[pid] for pid, _ in rows])
                block["age_auroc_spearman"] = {"rho": rho, "p_two_sided": pval, "n": len(rows), "method": "exact permutation"}
            else:
                block["age_auroc_spearman"] = None
        doc["feature_sets"][name] = block
        for r in reports:
            per_rows.append((name, r.participant_id, r.f1_weighted, r.precision_weighted, r.recall_weighted, r.auroc, len(r.predictions)))

    agg_path = ev / "aggregate.json"
    agg_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    per_path = ev / "per_participant.csv"
    with per_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("feature_set", "participant", "f1_weighted", "precision_weighted", "recall_weighted", "auroc", "n_test"))
        for row in per_rows:
            w.writerow([row[0], row[1]] + [format_float(v) if v is not None else "" for v in row[2:6]] + [row[6]])
    run.add_output(agg_path)
    run.add_output(per_path)
    run.write()
    return 0


# -- analyze ----------------------------------------------------------------


def load_binned(feat: Path, records, feature_set: str):
    """(channels, {label: array (n_segments, n_bins, C)}) for records with a segment."""
    groups = {0: [], 1: []}
    channels = None
    for r in records:
        p = feat / f"{r.utterance_id}.binned.{feature_set}.csv"
        if not p.exists():
            continue
        ch, values = read_binned_csv(p)
        if channels is None:
            channels = ch
        elif ch != channels:
            raise DatasetError(f"{p.name}: channel mismatch")
        groups[r.label].append(values)
    if channels is None:
        raise DatasetError(f"no binned {feature_set} segments in {feat}")
    return channels, {k: np.array(v) for k, v in groups.items()}


def effect_sizes(channels, groups) -> list[dict]:
    """Cohen's d per channel over all bin values, derhotic minus rhotic."""
    for cls in (0, 1):
        if len(groups[cls]) == 0:
            raise DatasetError(f"class {cls} absent; effect sizes need both classes")
    rows = []
    for c, name in enumerate(channels):
        res = cohens_d(groups[0][:, :, c].ravel(), groups[1][:, :, c].ravel())
        rows.append({"channel": name, "d": res.d, "ci_low": res.ci_low, "ci_high": res.ci_high, "n0": res.n0, "n1": res.n1, "label": res.label})
    return rows


def cmd_analyze(cfg: dict, out_dir) -> int:
    out = Path(out_dir)
    feat = out / "features"
    records = read_labels(feat / "labels.csv")
    name = cfg["analyze_feature_set"]
    channels, groups = load_binned(feat, records, name)
    rows = effect_sizes(channels, groups)
    ranking = [r["channel"] for r in sorted(rows, key=lambda r: -abs(r["d"]))]

    an = out / "analysis"
    an.mkdir(parents=True, exist_ok=True)
    run = RunManifest("analyze", cfg, out)
    run.add_input(feat / "labels.csv")
    doc = {
        "feature_set": name,
        "sign_convention": "mean(derhotic) - mean(fully rhotic), pooled SD",
        "pooling": "all bin values of all segments per class",
        "ci_method": "normal approximation, d +- 1.96 SE",
        "n_segments": {"0": int(len(groups[0])), "1": int(len(groups[1]))},
        "channels": rows,
        "ranking_by_abs_d": ranking,
    }
    es_path = an / "effect_sizes.json"
    es_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    traj = trajectory_with_ci(groups)
    tr_path = an / "trajectory.csv"
    with tr_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bin", "channel", "class", "mean", "ci_low", "ci_high"))
        n_bins = groups[0].shape[1]
        for k in range(n_bins):
            for c, ch in enumerate(channels):
                for cls in (0, 1):
                    t = traj[cls]
                    w.writerow((k, ch, cls, format_float(t["mean"][k, c]), format_float(t["ci_low"][k, c]), format_float(t["ci_high"][k, c])))
    run.add_output(es_path)
    run.add_output(tr_path)
    run.write()
    return 0
