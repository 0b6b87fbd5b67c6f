"""End-to-end orchestration shared by the command-line entry points.

Artifact formats written here:

* prediction CSV: ``smiles,protein_id,task_id[,value],prediction[,in_ad]``;
* report CSV: ``#`` comment lines carrying the config snapshot, then
  ``scheme,seed,repetition,fold,task_id,n_records,rmse,r2,ci,leakage_audit``
  rows, per-fold first, then ``mean``/``std`` summary rows (sample standard
  deviation across folds and repetitions);
* per-molecule graph features: magic ``MOLGRAF1``, uint32 version, uint32
  molecule count, then per molecule uint32 atom count, uint32 feature width,
  float32 feature rows, and per atom a uint32 neighbor count plus uint32
  neighbor indices.

A run directory is owned by a single process at a time, enforced with a
lock file.
"""

from __future__ import annotations

import csv
import logging
import os
import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import proteins
from .compounds import atom_features, ecfp
from .domain import check_ad, fit_ad_per_task
from .metrics import EvalReport, evaluate_predictions
from .model import FeatureStore, Model
from .runconfig import RunConfig
from .smiles import parse_smiles
from .splits import (
    FoldAssignment,
    audit_clusters,
    audit_cold,
    audit_warm,
    cluster_compounds,
    cold_cluster_split,
    cold_entity_split,
    fold_views,
    hyperopt_holdout,
    random_split,
    warm_split,
    write_folds,
)
from .training import history_rows, train
from .tuning import (
    default_search_space,
    gp_ei_search,
    load_space,
    make_composite_objective,
    random_search,
)

__all__ = ["PipelineError", "SmokeError", "DirectoryLock", "load_pair_dataset",
           "build_assignment", "run_training", "run_cv", "run_predict",
           "run_evaluate", "run_tune", "write_fingerprint_csv",
           "write_graph_features", "read_graph_features", "write_report",
           "read_report", "end_to_end_smoke"]

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


class SmokeError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"smoke pipeline failed at stage '{stage}': {cause}")


class DirectoryLock:
    """Exclusive ownership of a run directory via an O_EXCL lock file."""

    def __init__(self, directory: str | Path):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(
                f"run directory {self.path.parent} is locked by another "
                f"process (remove {self.path} if that process is gone)") from None
        os.close(fd)
        return self

    def __exit__(self, *_exc):
        self.path.unlink(missing_ok=True)
        return False


def load_pair_dataset(cfg: RunConfig, data_dir: str | Path) -> data_mod.PairDataset:
    return data_mod.load_dataset(**cfg.data_kwargs(Path(data_dir)))


# -- splits ---------------------------------------------------------------


def build_assignment(dataset: data_mod.PairDataset, scheme: str, k: int,
                     seed: int, cluster_threshold: float = 0.7,
                     fp_radius: int = 2, fp_bits: int = 2048) -> FoldAssignment:
    drug_ids = [dataset.compounds[i] for i in dataset.pairs[:, 0]]
    target_ids = [dataset.protein_ids[i] for i in dataset.pairs[:, 1]]
    if scheme == "warm":
        return warm_split(drug_ids, target_ids, k, seed)
    if scheme == "cold-drug":
        return cold_entity_split(drug_ids, target_ids, k, seed, axis="drug")
    if scheme == "cold-target":
        return cold_entity_split(drug_ids, target_ids, k, seed, axis="target")
    if scheme == "cold-cluster":
        fingerprints = [ecfp(parse_smiles(s), fp_radius, fp_bits)
                        for s in dataset.compounds]
        clustering = cluster_compounds(fingerprints, cluster_threshold)
        return cold_cluster_split(dataset.pairs[:, 0], clustering, k, seed)
    if scheme == "random":
        return random_split(dataset.n_pairs, k, seed)
    raise PipelineError(f"unknown scheme {scheme!r}")


def _leakage_audit(assignment: FoldAssignment,
                   dataset: data_mod.PairDataset,
                   cluster_threshold: float) -> str:
    drug_ids = [dataset.compounds[i] for i in dataset.pairs[:, 0]]
    target_ids = [dataset.protein_ids[i] for i in dataset.pairs[:, 1]]
    if assignment.scheme == "warm":
        return "pass" if not audit_warm(assignment, drug_ids, target_ids) else "FAIL"
    if assignment.scheme == "cold-drug":
        leaks = audit_cold(assignment, drug_ids)
    elif assignment.scheme == "cold-target":
        leaks = audit_cold(assignment, target_ids)
    elif assignment.scheme == "cold-cluster":
        fingerprints = [ecfp(parse_smiles(s)) for s in dataset.compounds]
        clustering = cluster_compounds(fingerprints, cluster_threshold)
        spanning = audit_clusters(
            assignment, clustering.labels[dataset.pairs[:, 0]])
        return "pass" if not spanning else "FAIL"
    else:
        return "n/a"
    return "pass" if all(not v for v in leaks.values()) else "FAIL"


# -- training -----------------------------------------------------------------


def run_training(cfg: RunConfig, dataset: data_mod.PairDataset,
                 out_checkpoint: str | Path,
                 seed: int | None = None) -> Path:
    """Train on a seeded 90/10 holdout of the dataset; write the checkpoint."""
    out_checkpoint = Path(out_checkpoint)
    model_cfg = cfg.model_config(n_tasks=dataset.n_tasks)
    train_cfg = cfg.train_config()
    if seed is not None:
        model_cfg = replace(model_cfg, seed=seed)
        train_cfg = replace(train_cfg, seed=seed)
    store = FeatureStore(dataset, model_cfg)
    model = store.build_model()
    train_idx, val_idx = hyperopt_holdout(
        dataset.n_pairs, seed=train_cfg.seed,
        fraction=cfg.holdout_fraction())
    result = train(model, store, train_idx, val_idx, train_cfg)
    model.save(out_checkpoint, optimizer_step=result.best_optimizer_step,
               optimizer_arrays=result.best_optimizer,
               run_config_text=cfg.snapshot())
    history_path = out_checkpoint.with_suffix(out_checkpoint.suffix + ".history.csv")
    history_path.write_text("\n".join(history_rows(result)) + "\n",
                            encoding="utf-8")
    log.info("best composite %.4f at epoch %d", result.best_score,
             result.best_epoch)
    return out_checkpoint


# -- cross-validation -----------------------------------------------------------


def run_cv(cfg: RunConfig, dataset: data_mod.PairDataset,
           out_dir: str | Path, scheme: str | None = None,
           k: int | None = None, repetitions: int | None = None,
           seed: int | None = None,
           folds_path: str | Path | None = None) -> Path:
    """Repeated k-fold cross-validation; writes a report and per-fold checkpoints.

    ``folds_path`` replays a fold CSV written by the ``split`` command for a
    single repetition instead of building fresh assignments.
    """
    params = cfg.split_params()
    precomputed = None
    if folds_path is not None:
        from .splits import read_folds

        precomputed = read_folds(folds_path)
        if precomputed.n_records != dataset.n_pairs:
            raise PipelineError(
                f"{folds_path} covers {precomputed.n_records} records, the "
                f"dataset has {dataset.n_pairs}")
        scheme = precomputed.scheme
        k = precomputed.k
        repetitions = 1
        seed = precomputed.seed
    scheme = scheme or params["scheme"]
    k = k or params["k"]
    repetitions = repetitions or params["repetitions"]
    seed = params["seed"] if seed is None else seed
    out_dir = Path(out_dir)
    model_cfg = cfg.model_config(n_tasks=dataset.n_tasks)
    if model_cfg.compound_only and scheme == "cold-target":
        raise PipelineError(
            "compound-only variants cannot be evaluated under cold-target "
            "splits: their outputs are indexed by the training proteins")
    train_cfg = cfg.train_config()
    rows: list[dict] = []
    fold_metrics: list[EvalReport] = []
    with DirectoryLock(out_dir):
        for rep in range(repetitions):
            rep_seed = seed + rep
            if precomputed is not None:
                assignment = precomputed
            else:
                assignment = build_assignment(
                    dataset, scheme, k, rep_seed,
                    cluster_threshold=params["cluster_threshold"],
                    fp_radius=model_cfg.fp_radius, fp_bits=model_cfg.fp_bits)
            audit = _leakage_audit(assignment, dataset,
                                   params["cluster_threshold"])
            write_folds(out_dir / f"folds_{scheme}_rep{rep}.csv", assignment)
            _, holdout = hyperopt_holdout(dataset.n_pairs, seed=rep_seed,
                                          fraction=cfg.holdout_fraction())
            store = FeatureStore(dataset, model_cfg)
            for fold, (train_view, val_view) in enumerate(
                    fold_views(assignment, holdout)):
                if val_view.size == 0:
                    log.warning("fold %d has no validation records after "
                                "holdout exclusion; skipped", fold)
                    continue
                model = store.build_model(seed=model_cfg.seed + rep)
                result = train(model, store, train_view, val_view,
                               replace(train_cfg, seed=train_cfg.seed + rep))
                ckpt = out_dir / f"model_{scheme}_rep{rep}_fold{fold}.ckpt"
                model.save(ckpt, optimizer_step=result.best_optimizer_step,
                           optimizer_arrays=result.best_optimizer,
                           run_config_text=cfg.snapshot())
                predicted = store.predict(model, val_view)
                y, w = store.pair_targets(val_view)
                report = evaluate_predictions(y, predicted, w, scheme=scheme,
                                              seed=rep_seed)
                fold_metrics.append(report)
                rows.append({"repetition": rep, "fold": fold,
                             "report": report, "audit": audit})
        report_path = out_dir / f"report_{scheme}.csv"
        write_report(report_path, cfg, rows, fold_metrics, scheme, seed)
    return report_path


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6g}"


def write_report(path: str | Path, cfg: RunConfig, rows: list[dict],
                 fold_metrics: list[EvalReport], scheme: str,
                 seed: int) -> None:
    config_lines = [f"# config.{line}" for line in cfg.snapshot().splitlines()
                    if line and not line.startswith("[")]
    header = ("scheme,seed,repetition,fold,task_id,n_records,"
              "rmse,r2,ci,leakage_audit")
    out = [f"# scheme={scheme}", f"# seed={seed}"]
    out.extend(config_lines)
    out.append(header)
    for row in rows:
        report: EvalReport = row["report"]
        for task in report.tasks:
            out.append(
                f"{scheme},{report.seed},{row['repetition']},{row['fold']},"
                f"{task.task_id},{task.n_records},{_fmt(task.rmse)},"
                f"{_fmt(task.r2)},{_fmt(task.ci)},{row['audit']}")
        out.append(
            f"{scheme},{report.seed},{row['repetition']},{row['fold']},"
            f"aggregate,{report.n_records},{_fmt(report.rmse)},"
            f"{_fmt(report.r2)},{_fmt(report.ci)},{row['audit']}")
    for metric in ("rmse", "r2", "ci"):
        values = [getattr(r, metric) for r in fold_metrics
                  if getattr(r, metric) is not None]
        if not values:
            continue
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        out.append(f"{scheme},{seed},mean,,{metric},,{mean:.6g},,,")
        out.append(f"{scheme},{seed},std,,{metric},,{std:.6g},,,")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Report file -> (comment lines, data rows); inverse of ``write_report``."""
    comments: list[str] = []
    rows: list[list[str]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line)
            elif line:
                rows.append(line.split(","))
    return comments, rows


def rewrite_report(path: str | Path, comments: list[str],
                   rows: list[list[str]]) -> None:
    """Serialize parsed report content back to its exact file form."""
    lines = list(comments) + [",".join(row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- prediction -----------------------------------------------------------------


def _read_pairs_csv(path: str | Path):
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or header[:2] != ["smiles", "protein_id"]:
            raise PipelineError(
                f"{path}: expected header starting 'smiles,protein_id'")
        has_task = "task_id" in header
        has_value = "value" in header
        task_col = header.index("task_id") if has_task else None
        value_col = header.index("value") if has_value else None
        rows = []
        for row in reader:
            if not row:
                continue
            task = int(row[task_col]) if has_task else 0
            value = row[value_col] if has_value else None
            rows.append((row[0].strip(), row[1].strip(), task, value))
    return rows, has_value


def run_predict(model_path: str | Path, pairs_csv: str | Path,
                proteins_path: str | Path, out_csv: str | Path,
                ad_from: str | Path | None = None) -> Path:
    """Predict interaction strengths for (compound, protein) pairs.

    ``ad_from`` points at a training-format CSV; when given, an ``in_ad``
    column reports whether each *predicted* value falls in the per-task
    response range fitted on those training responses.
    """
    model, _extras = Model.load(model_path)
    rows, has_value = _read_pairs_csv(pairs_csv)
    n_tasks = 1 if model.cfg.compound_only else model.cfg.n_tasks
    bad = next((r for r in rows if not 0 <= r[2] < n_tasks), None)
    if bad is not None:
        raise PipelineError(
            f"{pairs_csv}: task_id {bad[2]} outside the model's "
            f"0..{n_tasks - 1}")
    sequences = proteins.read_sequence_table(proteins_path)
    compounds = list(dict.fromkeys(r[0] for r in rows))
    compound_index = {s: i for i, s in enumerate(compounds)}
    cfg = model.cfg
    if cfg.uses_graphconv:
        mols = [parse_smiles(s) for s in compounds]
        feats = [atom_features(m, cfg.atom_vocabulary, cfg.max_degree)
                 for m in mols]
    else:
        fp = np.asarray([ecfp(parse_smiles(s), cfg.fp_radius, cfg.fp_bits).bits
                         for s in compounds], dtype=np.float64)
    if not cfg.compound_only:
        needed = list(dict.fromkeys(r[1] for r in rows))
        missing = [p for p in needed if p not in sequences]
        if missing:
            raise PipelineError(
                f"{pairs_csv}: no sequence for protein id {missing[0]!r}")
        protein_vectors = {p: proteins.psc(*sequences[p]) for p in needed}
    from .graphconv import pack_graphs

    predictions = np.empty((len(rows), n_tasks))
    batch = 256
    for start in range(0, len(rows), batch):
        chunk = rows[start:start + batch]
        c_idx = [compound_index[r[0]] for r in chunk]
        if cfg.uses_graphconv:
            rows_m, packed = pack_graphs([mols[i] for i in c_idx],
                                         [feats[i] for i in c_idx],
                                         cfg.max_degree)
            feeds = {"atom_features": rows_m, "graph_batch": packed}
        else:
            feeds = {"compound": fp[c_idx]}
        if not cfg.compound_only:
            feeds["protein"] = np.stack([protein_vectors[r[1]] for r in chunk])
        out = model.predict_feeds(feeds)
        if cfg.compound_only:
            cols = model.output_columns([r[1] for r in chunk])
            out = out[np.arange(len(chunk)), cols][:, None]
        predictions[start:start + len(chunk)] = out
    ad_ranges = None
    if ad_from is not None:
        ad_rows, ad_has_value = _read_pairs_csv(ad_from)
        if not ad_has_value:
            raise PipelineError(f"{ad_from}: needs a 'value' column to fit the "
                                f"reliable response range")
        y = np.zeros((len(ad_rows), n_tasks))
        w = np.zeros((len(ad_rows), n_tasks))
        for i, (_s, _p, task, value) in enumerate(ad_rows):
            y[i, task] = 4.0 - np.log10(float(value))
            w[i, task] = 1.0
        ad_ranges = fit_ad_per_task(y, w)
    header = ["smiles", "protein_id", "task_id"]
    if has_value:
        header.append("value")
    header.append("prediction")
    if ad_ranges is not None:
        header.append("in_ad")
    lines = [",".join(header)]
    for i, (smiles, protein_id, task, value) in enumerate(rows):
        pred = predictions[i, task if not cfg.compound_only else 0]
        fields = [smiles, protein_id, str(task)]
        if has_value:
            fields.append(value if value is not None else "")
        fields.append(f"{pred:.6g}")
        if ad_ranges is not None:
            ad = ad_ranges[task if task < len(ad_ranges) else 0]
            fields.append("1" if ad is not None and check_ad(ad, pred) else "0")
        lines.append(",".join(fields))
    Path(out_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(out_csv)


def run_evaluate(predictions_csv: str | Path, out_csv: str | Path,
                 scheme: str = "", seed: int = 0) -> EvalReport:
    """Score a prediction CSV that carries both value and prediction columns."""
    with open(predictions_csv, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or "prediction" not in header or "value" not in header:
            raise PipelineError(
                f"{predictions_csv}: needs 'value' and 'prediction' columns")
        task_col = header.index("task_id") if "task_id" in header else None
        value_col = header.index("value")
        pred_col = header.index("prediction")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            task = int(row[task_col]) if task_col is not None else 0
            try:
                raw = float(row[value_col])
            except ValueError:
                raise PipelineError(
                    f"{predictions_csv}: line {lineno}: value "
                    f"{row[value_col]!r} is not a number") from None
            if raw <= 0:
                raise PipelineError(
                    f"{predictions_csv}: line {lineno}: non-positive raw "
                    f"value {raw}")
            entries.append((task, 4.0 - np.log10(raw), float(row[pred_col])))
    if not entries:
        raise PipelineError(f"{predictions_csv}: no prediction rows")
    n_tasks = max(e[0] for e in entries) + 1
    y = np.zeros((len(entries), n_tasks))
    f = np.zeros((len(entries), n_tasks))
    w = np.zeros((len(entries), n_tasks))
    for i, (task, value, pred) in enumerate(entries):
        y[i, task] = value
        f[i, task] = pred
        w[i, task] = 1.0
    report = evaluate_predictions(y, f, w, scheme=scheme, seed=seed)
    lines = ["task_id,n_records,rmse,r2,ci"]
    for task in report.tasks:
        lines.append(f"{task.task_id},{task.n_records},{_fmt(task.rmse)},"
                     f"{_fmt(task.r2)},{_fmt(task.ci)}")
    lines.append(f"aggregate,{report.n_records},{_fmt(report.rmse)},"
                 f"{_fmt(report.r2)},{_fmt(report.ci)}")
    Path(out_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


# -- tuning -----------------------------------------------------------------


def run_tune(cfg: RunConfig, dataset: data_mod.PairDataset,
             out_dir: str | Path, budget: int | None = None,
             strategy: str | None = None,
             space_path: str | Path | None = None) -> Path:
    params = cfg.tune_params()
    budget = budget or params["budget"]
    strategy = strategy or params["strategy"]
    space = load_space(space_path) if space_path else default_search_space()
    out_dir = Path(out_dir)
    variant = cfg.get("model", "variant")
    objective = make_composite_objective(dataset, variant, seed=params["seed"],
                                         max_epochs=cfg.train_config().max_epochs,
                                         patience=cfg.train_config().patience)
    with DirectoryLock(out_dir):
        if strategy == "random":
            result = random_search(space, objective, budget, seed=params["seed"])
        else:
            result = gp_ei_search(space, objective, budget,
                                  n_init=min(params["n_init"], budget - 1),
                                  seed=params["seed"])
        lines = ["trial,status,value," + ",".join(space.dimensions)]
        for t in result.trials:
            point = ",".join(str(t.point[name]) for name in space.dimensions)
            value = "" if t.value is None else f"{t.value:.6g}"
            lines.append(f"{t.index},{t.status},{value},{point}")
        (out_dir / "trials.csv").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")
        best = result.best
        best_path = out_dir / "best_config.cfg"
        best_path.write_text(_best_config_text(cfg, best.point),
                             encoding="utf-8")
    return best_path


def _best_config_text(cfg: RunConfig, point: dict) -> str:
    width = int(point.get("layer_width", 128))
    layers = ",".join([str(width)] * int(point.get("n_layers", 2)))
    lines = ["[model]",
             f"variant={cfg.get('model', 'variant')}",
             f"hidden_layers={layers}",
             f"dropout={float(point.get('dropout', 0.1)):.6g}",
             "",
             "[train]",
             f"learning_rate={float(point.get('learning_rate', 1e-3)):.6g}",
             f"batch_size={int(point.get('batch_size', 32))}"]
    return "\n".join(lines) + "\n"


# -- featurize artifacts -----------------------------------------------------


def write_fingerprint_csv(smiles_list: list[str], out_csv: str | Path,
                          radius: int = 2, n_bits: int = 2048) -> None:
    lines = ["smiles,fingerprint_hex"]
    for s in smiles_list:
        lines.append(f"{s},{ecfp(parse_smiles(s), radius, n_bits).to_hex()}")
    Path(out_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")


_GRAPH_MAGIC = b"MOLGRAF1"


def write_graph_features(smiles_list: list[str], out_path: str | Path,
                         max_degree: int = 6) -> None:
    with open(out_path, "wb") as handle:
        handle.write(_GRAPH_MAGIC)
        handle.write(struct.pack("<II", 1, len(smiles_list)))
        for s in smiles_list:
            mol = parse_smiles(s)
            feats = atom_features(mol, max_degree=max_degree)
            handle.write(struct.pack("<II", mol.n_atoms, feats.width))
            handle.write(feats.rows.astype("<f4").tobytes())
            for i in range(mol.n_atoms):
                nbrs = mol.adjacency[i]
                handle.write(struct.pack("<I", len(nbrs)))
                handle.write(struct.pack(f"<{len(nbrs)}I", *nbrs)
                             if nbrs else b"")


def read_graph_features(path: str | Path) -> list[tuple[np.ndarray, list[list[int]]]]:
    out = []
    with open(path, "rb") as handle:
        if handle.read(8) != _GRAPH_MAGIC:
            raise PipelineError(f"{path}: not a graph feature file")
        version, count = struct.unpack("<II", handle.read(8))
        if version != 1:
            raise PipelineError(f"{path}: unsupported version {version}")
        for _ in range(count):
            n_atoms, width = struct.unpack("<II", handle.read(8))
            rows = np.frombuffer(handle.read(n_atoms * width * 4),
                                 dtype="<f4").reshape(n_atoms, width).copy()
            adjacency = []
            for _ in range(n_atoms):
                (deg,) = struct.unpack("<I", handle.read(4))
                nbrs = list(struct.unpack(f"<{deg}I", handle.read(4 * deg))
                            if deg else ())
                adjacency.append(nbrs)
            out.append((rows, adjacency))
    return out


# -- smoke ---------------------------------------------------------------------


def end_to_end_smoke(fixture_dir: str | Path, work_dir: str | Path,
                     seed: int = 0) -> list[str]:
    """featurize -> split (all four schemes) -> train -> predict -> evaluate.

    Runs on the bundled fixture format with a deliberately tiny model; every
    artifact written is read back. Returns the completed stage names and
    raises :class:`SmokeError` naming the first failing stage.
    """
    from .runconfig import parse_run_config

    fixture_dir = Path(fixture_dir)
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    stages: list[str] = []
    cfg = parse_run_config(None, overrides={
        "model.hidden_layers": "16",
        "model.fp_bits": "512",
        "train.max_epochs": "3",
        "train.batch_size": "16",
        "split.repetitions": "1",
    })

    def stage(name: str, fn):
        try:
            value = fn()
        except Exception as exc:
            raise SmokeError(name, exc) from exc
        stages.append(name)
        return value

    dataset = stage("ingest", lambda: load_pair_dataset(cfg, fixture_dir))
    smiles_list = list(dataset.compounds)

    def do_featurize():
        fp_csv = work_dir / "fingerprints.csv"
        write_fingerprint_csv(smiles_list, fp_csv, radius=2, n_bits=512)
        parsed = fp_csv.read_text(encoding="utf-8").splitlines()
        assert len(parsed) == len(smiles_list) + 1
        graph_path = work_dir / "graphs.bin"
        write_graph_features(smiles_list, graph_path)
        readback = read_graph_features(graph_path)
        assert len(readback) == len(smiles_list)
        psc_path = work_dir / "descriptors.bin"
        matrix = np.stack([proteins.psc(*dataset.sequences[p])
                           for p in dataset.protein_ids])
        proteins.write_descriptor_matrix(psc_path, list(dataset.protein_ids),
                                         matrix)
        ids, loaded = proteins.read_descriptor_matrix(psc_path)
        assert ids == list(dataset.protein_ids)
        assert np.array_equal(loaded, matrix)

    stage("featurize", do_featurize)

    def do_splits():
        from .splits import read_folds
        for scheme in ("warm", "cold-drug", "cold-target", "cold-cluster"):
            assignment = build_assignment(dataset, scheme, k=3, seed=seed,
                                          fp_bits=512)
            path = work_dir / f"folds_{scheme}.csv"
            write_folds(path, assignment)
            loaded = read_folds(path)
            assert np.array_equal(loaded.folds, assignment.folds)
            audit = _leakage_audit(assignment, dataset, 0.7)
            assert audit == "pass", f"{scheme} leakage audit failed"

    stage("split", do_splits)
    ckpt = stage("train", lambda: run_training(cfg, dataset,
                                               work_dir / "model.ckpt",
                                               seed=seed))

    def do_predict():
        pairs_csv = work_dir / "pairs.csv"
        lines = ["smiles,protein_id,task_id,value"]
        for row in range(dataset.n_pairs):
            ci, pi = dataset.pairs[row]
            raw = data_mod.inverse_transform(dataset.y[row, 0])
            lines.append(f"{dataset.compounds[ci]},{dataset.protein_ids[pi]},"
                         f"0,{raw:.6g}")
        pairs_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return run_predict(ckpt, pairs_csv, fixture_dir / "proteins.tsv",
                           work_dir / "predictions.csv", ad_from=pairs_csv)

    preds = stage("predict", do_predict)
    stage("evaluate", lambda: run_evaluate(preds, work_dir / "report.csv"))
    return stages
