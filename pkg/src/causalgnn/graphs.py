"""Graph data model, the two-motif synthetic benchmark, file I/O and batching.

The synthetic benchmark attaches either a house-shaped motif (label 0) or a
five-cycle (label 1) to a small preferential-attachment base graph; the
motif's internal edges are the ground-truth explanation for the label.
Datasets round-trip through a line-oriented JSON format that is easy to
parse from any language.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor

FORMAT_VERSION = 1

BASE_NODES = 20
MOTIF_NODES = 5
FEATURE_DIM = 10

# motif edges in local node coordinates 0..4: a 4-cycle with a roof node
# over one side, and a plain 5-cycle
HOUSE_EDGES = ((0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4))
CYCLE_EDGES = ((0, 1), (1, 2), (2, 3), (3, 4), (0, 4))


class DatasetFormatError(ValueError):
    """Malformed dataset file; message names the offending line and field."""


class ValidationError(ValueError):
    """A graph or dataset violates a structural invariant."""


@dataclass
class Graph:
    """One undirected graph: weights, node features, label, optional ground truth."""

    n: int
    adjacency: np.ndarray
    features: np.ndarray
    label: int
    mask: np.ndarray | None = None

    def validate(self) -> None:
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise ValidationError(f"adjacency shape {a.shape} != ({self.n}, {self.n})")
        if self.features.shape[0] != self.n:
            raise ValidationError("feature row count differs from node count")
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(self.features)):
            raise ValidationError("non-finite values in graph data")
        if np.max(np.abs(a - a.T)) > 0:
            raise ValidationError("adjacency must be symmetric")
        if np.any(a < 0):
            raise ValidationError("adjacency weights must be nonnegative")
        if np.any(np.diagonal(a) != 0):
            raise ValidationError("adjacency diagonal must be zero")
        if self.mask is not None:
            if self.mask.shape != a.shape:
                raise ValidationError("mask shape differs from adjacency")
            if np.any((self.mask != 0) & (a == 0)):
                raise ValidationError("mask marks edges absent from the adjacency")

    def edge_list(self) -> list[tuple[int, int]]:
        """Upper-triangle (i < j) indices of present edges."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def mask_edge_list(self) -> list[tuple[int, int]]:
        if self.mask is None:
            return []
        i, j = np.nonzero(np.triu(self.mask, k=1))
        return list(zip(i.tolist(), j.tolist()))


@dataclass
class Dataset:
    graphs: list[Graph]
    n_classes: int
    feature_dim: int
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    def validate(self) -> None:
        for idx, g in enumerate(self.graphs):
            try:
                g.validate()
            except ValidationError as err:
                raise ValidationError(f"graph {idx}: {err}") from err
            if g.features.shape[1] != self.feature_dim:
                raise ValidationError(
                    f"graph {idx}: feature dim {g.features.shape[1]} != {self.feature_dim}")
            if not 0 <= g.label < self.n_classes:
                raise ValidationError(f"graph {idx}: label {g.label} out of range")


@dataclass
class Split:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int


def _graph_rng(seed: int, index: int) -> np.random.Generator:
    # per-graph streams, so generation order (or parallelism) cannot matter
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def _ba_tree_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Preferential attachment with one edge per new node (a random tree)."""
    edges = [(0, 1)]
    endpoints = [0, 1]  # node repeated once per incident edge
    for new in range(2, n):
        target = int(endpoints[rng.integers(0, len(endpoints))])
        edges.append((target, new))
        endpoints.extend((target, new))
    return edges


def generate_ba2motif(count: int, seed: int) -> Dataset:
    """Balanced two-class benchmark of 25-node graphs with known explanations.

    Each graph is a 20-node preferential-attachment tree plus a 5-node motif
    on nodes 20..24 (house for label 0, cycle for label 1), connected by a
    single bridge edge from a uniformly chosen base node.  Node features are
    all-ones 10-dim vectors; the mask marks exactly the motif's internal
    edges (not the bridge).  Labels alternate, so even counts are balanced.
    """
    if count % 2 != 0:
        raise ContractError("count must be even so the classes stay balanced")
    n = BASE_NODES + MOTIF_NODES
    graphs = []
    for idx in range(count):
        rng = _graph_rng(seed, idx)
        label = idx % 2
        adj = np.zeros((n, n))
        for i, j in _ba_tree_edges(BASE_NODES, rng):
            adj[i, j] = adj[j, i] = 1.0
        mask = np.zeros((n, n))
        motif = HOUSE_EDGES if label == 0 else CYCLE_EDGES
        for i, j in motif:
            a, b = BASE_NODES + i, BASE_NODES + j
            adj[a, b] = adj[b, a] = 1.0
            mask[a, b] = mask[b, a] = 1.0
        bridge_from = int(rng.integers(0, BASE_NODES))
        adj[bridge_from, BASE_NODES] = adj[BASE_NODES, bridge_from] = 1.0
        graphs.append(Graph(n=n, adjacency=adj,
                            features=np.ones((n, FEATURE_DIM)),
                            label=label, mask=mask))
    dataset = Dataset(graphs=graphs, n_classes=2, feature_dim=FEATURE_DIM,
                      provenance={"generator": "ba2motif", "count": count,
                                  "seed": seed})
    dataset.validate()
    return dataset


def normalize_adjacency(adjacency: np.ndarray) -> Tensor:
    """Symmetrically normalized adjacency with self-loops.

    A_hat = A + I, D = diag(rowsum(A_hat)); returns D^-1/2 A_hat D^-1/2.
    The self-loop keeps isolated nodes at degree one, so no division by zero.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    a_hat = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return Tensor(a_hat * inv_sqrt[:, None] * inv_sqrt[None, :])


# -- dataset file format --------------------------------------------------------


def _graph_record(g: Graph) -> str:
    edges = [[i, j, float(g.adjacency[i, j])] for i, j in g.edge_list()]
    record = {
        "n": g.n,
        "edges": edges,
        "features": g.features.tolist(),
        "label": int(g.label),
    }
    if g.mask is not None:
        record["mask_edges"] = [[i, j] for i, j in g.mask_edge_list()]
    return json.dumps(record, separators=(",", ":"))


def save_dataset(dataset: Dataset, path) -> None:
    """Write the line-oriented JSON form: one header line, one line per graph."""
    dataset.validate()
    header = {"format_version": FORMAT_VERSION, "n_classes": dataset.n_classes,
              "feature_dim": dataset.feature_dim}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for g in dataset.graphs:
            fh.write(_graph_record(g) + "\n")


def _require(record: dict, key: str, line: int):
    if key not in record:
        raise DatasetFormatError(f"line {line}: missing field {key!r}")
    return record[key]


def load_dataset(path) -> Dataset:
    """Read a dataset file, validating structure as it streams in.

    Graphs whose weights include negative values (correlation-style inputs)
    are affinely rescaled edge-wise to [0, 1]: the downstream reconstruction
    squashes through a sigmoid, which cannot reach negative targets.
    """
    graphs: list[Graph] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise DatasetFormatError(f"line 1: not valid JSON ({err})") from err
    n_classes = int(_require(header, "n_classes", 1))
    feature_dim = int(_require(header, "feature_dim", 1))
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as err:
            raise DatasetFormatError(f"line {lineno}: not valid JSON ({err})") from err
        n = int(_require(record, "n", lineno))
        adj = np.zeros((n, n))
        for e, entry in enumerate(_require(record, "edges", lineno)):
            if len(entry) != 3:
                raise DatasetFormatError(
                    f"line {lineno}: field 'edges'[{e}] must be [i, j, weight]")
            i, j, w = int(entry[0]), int(entry[1]), float(entry[2])
            if not 0 <= i < j < n:
                raise DatasetFormatError(
                    f"line {lineno}: field 'edges'[{e}] needs 0 <= i < j < n")
            adj[i, j] = adj[j, i] = w
        feats = np.asarray(_require(record, "features", lineno), dtype=np.float64)
        if feats.shape != (n, feature_dim):
            raise DatasetFormatError(
                f"line {lineno}: field 'features' has shape {feats.shape}, "
                f"expected ({n}, {feature_dim})")
        label = int(_require(record, "label", lineno))
        if not 0 <= label < n_classes:
            raise DatasetFormatError(
                f"line {lineno}: field 'label' value {label} out of range")
        mask = None
        if "mask_edges" in record:
            mask = np.zeros((n, n))
            for e, entry in enumerate(record["mask_edges"]):
                i, j = int(entry[0]), int(entry[1])
                if adj[i, j] == 0:
                    raise DatasetFormatError(
                        f"line {lineno}: field 'mask_edges'[{e}] not an edge")
                mask[i, j] = mask[j, i] = 1.0
        lo = adj.min()
        if lo < 0:
            scale = adj.max() - lo
            nz = adj != 0
            adj[nz] = (adj[nz] - lo) / (scale if scale > 0 else 1.0)
        g = Graph(n=n, adjacency=adj, features=feats, label=label, mask=mask)
        try:
            g.validate()
        except ValidationError as err:
            raise ValidationError(f"line {lineno}: {err}") from err
        graphs.append(g)
    dataset = Dataset(graphs=graphs, n_classes=n_classes, feature_dim=feature_dim,
                      provenance={"source": str(path)})
    dataset.validate()
    return dataset


# -- splitting and batching ------------------------------------------------------


def split(dataset: Dataset, seed: int) -> Split:
    """Disjoint covering 0.8/0.1/0.1 index split, remainder going to train."""
    n = len(dataset)
    if n == 0:
        raise ContractError("cannot split an empty dataset")
    order = np.random.default_rng(np.random.SeedSequence((seed, 101))).permutation(n)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return Split(train=order[:n_train].tolist(),
                 val=order[n_train:n_train + n_val].tolist(),
                 test=order[n_train + n_val:].tolist(),
                 seed=seed)


def batches(dataset: Dataset, indices: list[int], batch_size: int, seed: int,
            epoch: int = 0) -> list[list[int]]:
    """Shuffled mini-batch index lists for one epoch; the last short batch stays."""
    if batch_size < 2:
        raise ContractError("batch size must be at least 2 (Gram matrices need it)")
    if not indices:
        raise ContractError("cannot batch an empty index list")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 202, epoch)))
    order = [indices[i] for i in rng.permutation(len(indices))]
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
