"""Network assembly for the four model variants, plus checkpoints.

A model concatenates a compound vector with a protein descriptor into one
combined input vector and regresses it through a stack of
dense -> batchnorm -> relu -> dropout blocks onto one output per task:

* ``padme-ecfp``        fingerprint bits | protein descriptor
* ``padme-graphconv``   conv/pool stack + sum readout | protein descriptor
* ``compound-only-*``   compound vector only, one output per known protein

The compound-only variants cannot see new proteins (a prediction for an
unknown protein id is a hard error); the paired variants accept any protein
sequence, which is what makes cold-start prediction possible.

Checkpoints are a small binary container: magic ``DTNCKPT1``, uint32 format
version, uint64 JSON header length, a JSON header (config snapshot,
featurization layout version, tensor manifest, optional optimizer state
metadata and run-config snapshot), then the float64 little-endian tensor
payloads in manifest order. Loading refuses featurization layouts other
than the one this code produces.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import proteins
from .compounds import (
    DEFAULT_ATOM_VOCABULARY,
    atom_feature_width,
    atom_features,
    ecfp,
)
from .data import PairDataset
from .engine import Graph
from .graphconv import GraphConv, GraphGather, GraphPool, pack_graphs
from .smiles import MolGraph, parse_smiles

__all__ = ["ModelError", "ModelConfig", "Model", "FeatureStore", "VARIANTS",
           "FEATURIZATION_VERSION"]

VARIANTS = ("padme-ecfp", "padme-graphconv",
            "compound-only-ecfp", "compound-only-graphconv")

FEATURIZATION_VERSION = 1

_MAGIC = b"DTNCKPT1"
_FORMAT_VERSION = 1


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "padme-ecfp"
    n_tasks: int = 1
    hidden_layers: tuple[int, ...] = (256, 256)
    dropout_rates: tuple[float, ...] = (0.1,)
    use_batchnorm: bool = True
    fp_radius: int = 2
    fp_bits: int = 2048
    max_degree: int = 6
    conv_widths: tuple[int, ...] = (64, 64)
    conv_dense: int = 128
    atom_vocabulary: tuple[str, ...] = DEFAULT_ATOM_VOCABULARY
    seed: int = 0

    def normalized(self) -> "ModelConfig":
        """Validate and broadcast per-layer settings."""
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}; "
                             f"expected one of {VARIANTS}")
        if not 1 <= len(self.hidden_layers) <= 5:
            raise ModelError("hidden_layers must have 1..5 entries")
        if any(w < 1 for w in self.hidden_layers):
            raise ModelError("hidden layer widths must be positive")
        if self.n_tasks < 1:
            raise ModelError("n_tasks must be >= 1")
        rates = self.dropout_rates
        if len(rates) == 1:
            rates = rates * len(self.hidden_layers)
        if len(rates) != len(self.hidden_layers):
            raise ModelError("need one dropout rate (or one per hidden layer)")
        if any(not 0.0 <= r < 1.0 for r in rates):
            raise ModelError("dropout rates must be in [0, 1)")
        return replace(self, dropout_rates=tuple(rates),
                       hidden_layers=tuple(self.hidden_layers),
                       conv_widths=tuple(self.conv_widths),
                       atom_vocabulary=tuple(self.atom_vocabulary))

    @property
    def uses_graphconv(self) -> bool:
        return self.variant.endswith("graphconv")

    @property
    def compound_only(self) -> bool:
        return self.variant.startswith("compound-only")

    def compound_width(self) -> int:
        return self.conv_dense if self.uses_graphconv else self.fp_bits

    def input_width(self) -> int:
        if self.compound_only:
            return self.compound_width()
        return self.compound_width() + proteins.DESCRIPTOR_LENGTH

    def featurization_signature(self) -> dict:
        """Everything that shapes the inputs; stored in checkpoints."""
        return {
            "layout_version": FEATURIZATION_VERSION,
            "variant": self.variant,
            "fp_radius": self.fp_radius,
            "fp_bits": self.fp_bits,
            "max_degree": self.max_degree,
            "atom_vocabulary": list(self.atom_vocabulary),
            "protein_layout": proteins.LAYOUT_VERSION,
            "protein_dim": proteins.DESCRIPTOR_LENGTH,
        }

    def featurization_fingerprint(self) -> str:
        payload = json.dumps(self.featurization_signature(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Model:
    """A built network: the graph plus handles to its named inputs."""

    def __init__(self, cfg: ModelConfig, graph: Graph, output, loss,
                 protein_index: dict[str, int] | None):
        self.cfg = cfg
        self.graph = graph
        self.output = output
        self.loss = loss
        self.protein_index = protein_index

    @classmethod
    def build(cls, cfg: ModelConfig,
              protein_ids: tuple[str, ...] | None = None) -> "Model":
        """Construct the network; deterministic under ``cfg.seed``."""
        cfg = cfg.normalized()
        protein_index = None
        n_outputs = cfg.n_tasks
        if cfg.compound_only:
            if not protein_ids:
                raise ModelError(
                    "compound-only variants need the training protein ids "
                    "(one output unit per protein)")
            if cfg.n_tasks != 1:
                raise ModelError(
                    "compound-only variants support single-measurement data "
                    "only (n_tasks must be 1)")
            protein_index = {p: i for i, p in enumerate(protein_ids)}
            n_outputs = len(protein_ids)
        rng = np.random.default_rng(cfg.seed)
        graph = Graph()
        if cfg.uses_graphconv:
            compound_vec = cls._build_conv_stack(graph, cfg, rng)
        else:
            compound_vec = graph.placeholder("compound")
        if cfg.compound_only:
            civ = compound_vec
        else:
            protein = graph.placeholder("protein")
            civ = graph.concat([compound_vec, protein], name="civ")
        x = civ
        width = cfg.input_width()
        for li, (hidden, rate) in enumerate(zip(cfg.hidden_layers,
                                                cfg.dropout_rates)):
            w = graph.parameter(f"dense{li}.W", _he_uniform(rng, width, hidden))
            b = graph.parameter(f"dense{li}.b", np.zeros(hidden))
            x = graph.add_bias(graph.matmul(x, w), b)
            if cfg.use_batchnorm:
                gamma = graph.parameter(f"bn{li}.gamma", np.ones(hidden))
                beta = graph.parameter(f"bn{li}.beta", np.zeros(hidden))
                x = graph.batch_norm(x, gamma, beta, name=f"bn{li}")
            x = graph.relu(x)
            x = graph.dropout(x, rate)
            width = hidden
        w_out = graph.parameter("output.W", _he_uniform(rng, width, n_outputs))
        b_out = graph.parameter("output.b", np.zeros(n_outputs))
        output = graph.add_bias(graph.matmul(x, w_out), b_out, name="output")
        target = graph.placeholder("target")
        weight = graph.placeholder("weight")
        loss = graph.weighted_mse(output, target, weight, name="loss")
        return cls(cfg, graph, output, loss, protein_index)

    @staticmethod
    def _build_conv_stack(graph: Graph, cfg: ModelConfig,
                          rng: np.random.Generator):
        h = graph.placeholder("atom_features")
        structure = graph.object_input("graph_batch")
        width = atom_feature_width(cfg.atom_vocabulary, cfg.max_degree)
        for li, out_width in enumerate(cfg.conv_widths):
            w_self = [graph.parameter(f"conv{li}.wself{d}",
                                      _he_uniform(rng, width, out_width))
                      for d in range(cfg.max_degree + 1)]
            w_nbr = [graph.parameter(f"conv{li}.wnbr{d}",
                                     _he_uniform(rng, width, out_width))
                     for d in range(cfg.max_degree + 1)]
            bias = [graph.parameter(f"conv{li}.b{d}", np.zeros(out_width))
                    for d in range(cfg.max_degree + 1)]
            conv = GraphConv(h, structure, w_self, w_nbr, bias)
            conv.name = f"conv{li}"
            h = graph.add(conv)
            pool = GraphPool(h, structure)
            pool.name = f"pool{li}"
            h = graph.add(pool)
            width = out_width
        w = graph.parameter("convdense.W", _he_uniform(rng, width, cfg.conv_dense))
        b = graph.parameter("convdense.b", np.zeros(cfg.conv_dense))
        h = graph.relu(graph.add_bias(graph.matmul(h, w), b))
        gather = GraphGather(h, structure)
        gather.name = "gather"
        return graph.add(gather)

    # -- inference ----------------------------------------------------------

    def predict_feeds(self, feeds: dict) -> np.ndarray:
        """Eval-mode forward pass: dropout off, batchnorm on running stats."""
        (out,) = self.graph.forward(feeds, [self.output], training=False)
        return out

    def output_columns(self, protein_ids) -> np.ndarray:
        """Output-unit indices for ``protein_ids`` (compound-only variants)."""
        if self.protein_index is None:
            raise ModelError("paired variants have per-task outputs, not "
                             "per-protein outputs")
        columns = []
        for pid in protein_ids:
            if pid not in self.protein_index:
                raise ModelError(
                    f"unknown protein id {pid!r}: compound-only models can "
                    f"only predict for proteins seen in training")
            columns.append(self.protein_index[pid])
        return np.asarray(columns, dtype=np.int64)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path, optimizer_step: int = 0,
             optimizer_arrays: dict[str, np.ndarray] | None = None,
             run_config_text: str | None = None) -> None:
        state = dict(self.graph.state_dict())
        if optimizer_arrays:
            state.update(optimizer_arrays)
        manifest = []
        offset = 0
        for name in sorted(state):
            array = np.ascontiguousarray(state[name], dtype=np.float64)
            manifest.append({"name": name, "shape": list(array.shape),
                             "offset": offset})
            offset += array.size * 8
        header = {
            "format_version": _FORMAT_VERSION,
            "featurization": self.cfg.featurization_signature(),
            "featurization_fingerprint": self.cfg.featurization_fingerprint(),
            "config": _config_to_json(self.cfg),
            "protein_index": self.protein_index,
            "optimizer_step": optimizer_step,
            "run_config": run_config_text,
            "tensors": manifest,
        }
        blob = json.dumps(header, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as handle:
            handle.write(_MAGIC)
            handle.write(struct.pack("<IQ", _FORMAT_VERSION, len(blob)))
            handle.write(blob)
            for entry in manifest:
                array = np.ascontiguousarray(state[entry["name"]],
                                             dtype="<f8")
                handle.write(array.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> tuple["Model", dict]:
        with open(path, "rb") as handle:
            magic = handle.read(8)
            if magic != _MAGIC:
                raise ModelError(f"{path}: not a model checkpoint")
            version, header_len = struct.unpack("<IQ", handle.read(12))
            if version != _FORMAT_VERSION:
                raise ModelError(
                    f"{path}: checkpoint format {version} not supported")
            header = json.loads(handle.read(header_len).decode("utf-8"))
            payload = handle.read()
        layout = header["featurization"]["layout_version"]
        if layout != FEATURIZATION_VERSION:
            raise ModelError(
                f"{path}: featurization layout {layout} is incompatible "
                f"with this build ({FEATURIZATION_VERSION})")
        cfg = _config_from_json(header["config"])
        protein_index = header["protein_index"]
        protein_ids = None
        if protein_index is not None:
            ordered = sorted(protein_index, key=protein_index.get)
            protein_ids = tuple(ordered)
        model = cls.build(cfg, protein_ids=protein_ids)
        if model.cfg.featurization_fingerprint() != header["featurization_fingerprint"]:
            raise ModelError(f"{path}: featurization fingerprint mismatch")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            array = np.frombuffer(payload, dtype="<f8", count=size,
                                  offset=start).reshape(shape).copy()
            tensors[entry["name"]] = array
        model_state = {k: v for k, v in tensors.items()
                       if not k.startswith("adam.")}
        adam_state = {k: v for k, v in tensors.items() if k.startswith("adam.")}
        model.graph.load_state(model_state)
        extras = {
            "optimizer_arrays": adam_state,
            "optimizer_step": header["optimizer_step"],
            "run_config": header["run_config"],
        }
        return model, extras


def _config_to_json(cfg: ModelConfig) -> dict:
    payload = asdict(cfg)
    payload["hidden_layers"] = list(cfg.hidden_layers)
    payload["dropout_rates"] = list(cfg.dropout_rates)
    payload["conv_widths"] = list(cfg.conv_widths)
    payload["atom_vocabulary"] = list(cfg.atom_vocabulary)
    return payload


def _config_from_json(payload: dict) -> ModelConfig:
    return ModelConfig(
        variant=payload["variant"],
        n_tasks=payload["n_tasks"],
        hidden_layers=tuple(payload["hidden_layers"]),
        dropout_rates=tuple(payload["dropout_rates"]),
        use_batchnorm=payload["use_batchnorm"],
        fp_radius=payload["fp_radius"],
        fp_bits=payload["fp_bits"],
        max_degree=payload["max_degree"],
        conv_widths=tuple(payload["conv_widths"]),
        conv_dense=payload["conv_dense"],
        atom_vocabulary=tuple(payload["atom_vocabulary"]),
        seed=payload["seed"],
    )


class FeatureStore:
    """Precomputed featurizations of a :class:`PairDataset` for one config.

    Fingerprints and protein descriptors are computed once and reused across
    epochs; batches are assembled as index views. For graph-convolution
    variants the per-molecule graphs are packed per batch.
    """

    def __init__(self, dataset: PairDataset, cfg: ModelConfig):
        self.dataset = dataset
        self.cfg = cfg.normalized()
        self._mols: list[MolGraph] | None = None
        self._atom_feats = None
        self.fingerprint_matrix: np.ndarray | None = None
        if self.cfg.uses_graphconv:
            self._mols = [parse_smiles(s) for s in dataset.compounds]
            self._atom_feats = [
                atom_features(m, self.cfg.atom_vocabulary, self.cfg.max_degree)
                for m in self._mols
            ]
        else:
            rows = [
                ecfp(parse_smiles(s), self.cfg.fp_radius, self.cfg.fp_bits).bits
                for s in dataset.compounds
            ]
            self.fingerprint_matrix = np.asarray(rows, dtype=np.float64)
        if self.cfg.compound_only:
            self.protein_matrix = None
            if dataset.n_tasks != 1:
                raise ModelError(
                    "compound-only variants support single-measurement data only")
        else:
            self.protein_matrix = np.stack([
                proteins.psc(*dataset.sequences[pid])
                for pid in dataset.protein_ids
            ])

    def build_model(self, seed: int | None = None) -> Model:
        cfg = self.cfg if seed is None else replace(self.cfg, seed=seed)
        protein_ids = self.dataset.protein_ids if cfg.compound_only else None
        return Model.build(cfg, protein_ids=protein_ids)

    def n_records(self) -> int:
        return self.dataset.n_pairs

    def _compound_feeds(self, compound_idx: np.ndarray) -> dict:
        if self.cfg.uses_graphconv:
            mols = [self._mols[i] for i in compound_idx]
            feats = [self._atom_feats[i] for i in compound_idx]
            rows, batch = pack_graphs(mols, feats, self.cfg.max_degree)
            return {"atom_features": rows, "graph_batch": batch}
        return {"compound": self.fingerprint_matrix[compound_idx]}

    def feeds(self, indices, with_targets: bool = True,
              model: Model | None = None) -> dict:
        indices = np.asarray(indices, dtype=np.int64)
        compound_idx = self.dataset.pairs[indices, 0]
        protein_idx = self.dataset.pairs[indices, 1]
        feeds = self._compound_feeds(compound_idx)
        if not self.cfg.compound_only:
            feeds["protein"] = self.protein_matrix[protein_idx]
        if with_targets:
            if self.cfg.compound_only:
                if model is None or model.protein_index is None:
                    raise ModelError(
                        "compound-only targets need the built model (for its "
                        "protein output mapping)")
                n_out = len(model.protein_index)
                target = np.zeros((indices.size, n_out))
                weight = np.zeros((indices.size, n_out))
                cols = model.output_columns(
                    [self.dataset.protein_ids[i] for i in protein_idx])
                rows = np.arange(indices.size)
                target[rows, cols] = self.dataset.y[indices, 0]
                weight[rows, cols] = self.dataset.w[indices, 0]
            else:
                target = self.dataset.y[indices]
                weight = self.dataset.w[indices]
            feeds["target"] = target
            feeds["weight"] = weight
        return feeds

    def pair_targets(self, indices) -> tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=np.int64)
        return self.dataset.y[indices], self.dataset.w[indices]

    def predict(self, model: Model, indices, batch_size: int = 256) -> np.ndarray:
        """Per-pair predictions with one column per task."""
        indices = np.asarray(indices, dtype=np.int64)
        chunks = []
        for start in range(0, indices.size, batch_size):
            part = indices[start:start + batch_size]
            feeds = self.feeds(part, with_targets=False)
            out = model.predict_feeds(feeds)
            if self.cfg.compound_only:
                protein_idx = self.dataset.pairs[part, 1]
                cols = model.output_columns(
                    [self.dataset.protein_ids[i] for i in protein_idx])
                out = out[np.arange(part.size), cols][:, None]
            chunks.append(out)
        return np.concatenate(chunks, axis=0)
