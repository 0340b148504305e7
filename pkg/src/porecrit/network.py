"""Percentile-thresholded Euclidean proximity graph over pore centroids."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import EmptyNetwork, FormatError, IoError


@dataclass(frozen=True)
class NetworkConfig:
    percentile: float = 20.0
    top_k: int = 500

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must lie in (0, 100]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    def to_dict(self) -> dict:
        return {"percentile": self.percentile, "top_k": self.top_k}


@dataclass(frozen=True)
class Node:
    pore_id: int
    centroid: tuple[float, float, float]
    size: int
    normalized_size: float


@dataclass(frozen=True)
class PoreNetwork:
    nodes: list[Node]
    edges: list[tuple[int, int, float]]  # node indices i < j, distance
    d_thr: float
    n_pairs: int
    percentile_used: float


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def _pair_arrays(centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(centroids)
    i, j = np.triu_indices(n, k=1)
    diff = centroids[i] - centroids[j]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return i, j, d


def pairwise_distances(centroids) -> list[tuple[int, int, float]]:
    """All ``n(n-1)/2`` pairs ``(i, j, ||c_i - c_j||)`` with ``i < j``, lexicographic order."""
    c = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    i, j, d = _pair_arrays(c)
    return list(zip(i.tolist(), j.tolist(), d.tolist()))


def edge_budget(n_pairs: int, percentile: float) -> int:
    # exact rational floor(p/100 * n_pairs); float products like 0.2 * 124750 can round down
    return math.floor(Fraction(percentile) * n_pairs / 100)


def build_network(pores, config: NetworkConfig = NetworkConfig()) -> PoreNetwork:
    """Keep the ``top_k`` largest pores, connect the smallest ``percentile`` % of pair distances.

    ``pores`` is any sequence of objects with ``id``, ``centroid`` and
    ``voxel_count``. Nodes are ordered by descending size then ascending id;
    exactly ``floor(percentile/100 * n_pairs)`` edges are kept, ties at the
    cut broken by the lexicographic node-index pair.
    """
    if len(pores) == 0:
        raise EmptyNetwork("cannot build a network without pores")
    chosen = sorted(pores, key=lambda p: (-int(p.voxel_count), int(p.id)))[: config.top_k]
    max_size = max(int(p.voxel_count) for p in chosen)
    nodes = [
        Node(int(p.id), tuple(float(v) for v in p.centroid), int(p.voxel_count),
             int(p.voxel_count) / max_size)
        for p in chosen
    ]
    centroids = np.array([n.centroid for n in nodes], dtype=np.float64)
    i, j, d = _pair_arrays(centroids)
    n_pairs = len(d)
    k = edge_budget(n_pairs, config.percentile)
    # stable sort keeps lexicographic (i, j) order among equal distances
    order = np.argsort(d, kind="stable")[:k]
    d_thr = float(d[order[-1]]) if k else 0.0
    order = np.sort(order)
    edges = list(zip(i[order].tolist(), j[order].tolist(), d[order].tolist()))
    return PoreNetwork(nodes=nodes, edges=edges, d_thr=d_thr, n_pairs=n_pairs,
                       percentile_used=float(config.percentile))


def network_to_json(network: PoreNetwork) -> str:
    doc = {
        "metadata": {
            "d_thr": network.d_thr,
            "percentile": network.percentile_used,
            "n_pairs": network.n_pairs,
            "n_nodes": len(network.nodes),
            "n_edges": len(network.edges),
        },
        "nodes": [
            {"id": n.pore_id, "z": n.centroid[0], "y": n.centroid[1], "x": n.centroid[2],
             "size": n.size, "normalized_size": n.normalized_size}
            for n in network.nodes
        ],
        "edges": [
            {"source": network.nodes[a].pore_id, "target": network.nodes[b].pore_id, "distance": dist}
            for a, b, dist in network.edges
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def network_from_json(text: str) -> PoreNetwork:
    try:
        doc = json.loads(text)
        meta = doc["metadata"]
        nodes = [Node(int(n["id"]), (float(n["z"]), float(n["y"]), float(n["x"])),
                      int(n["size"]), float(n["normalized_size"])) for n in doc["nodes"]]
        index = {n.pore_id: k for k, n in enumerate(nodes)}
        edges = [(index[e["source"]], index[e["target"]], float(e["distance"])) for e in doc["edges"]]
        return PoreNetwork(nodes, edges, float(meta["d_thr"]), int(meta["n_pairs"]),
                           float(meta["percentile"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed network document: {exc}") from exc


def edges_to_csv(network: PoreNetwork) -> str:
    buf = io.StringIO()
    buf.write("source,target,distance\n")
    for a, b, dist in network.edges:
        buf.write(f"{network.nodes[a].pore_id},{network.nodes[b].pore_id},{dist!r}\n")
    return buf.getvalue()


def edges_from_csv(text: str) -> list[tuple[int, int, float]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["source", "target", "distance"]:
        raise FormatError(f"unexpected edge CSV header {header}")
    return [(int(r[0]), int(r[1]), float(r[2])) for r in reader if r]


def export_network(network: PoreNetwork, path: str | Path, format: str = "json_nodelink") -> Path:
    if format == "json_nodelink":
        text = network_to_json(network)
    elif format == "csv_edges":
        text = edges_to_csv(network)
    else:
        raise ValueError(f"unknown network export format {format!r}")
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path
