"""KNN graph construction over feature-grid nodes.

Nodes are cells of an H_f x W_f feature grid (row-major indexing). Edges are
chosen per center node by the K smallest distances, where the distance is
either the plain squared feature distance or the fused form

    dist(i, j) = ||x_i - x_j||^2 + lambda_g * (gm_i - gm_j)^2 * gm_i

whose gaze term is weighted by the *center* node's gaze value, so it is not
symmetric. Selection is deterministic: ties break toward the smaller node
index. Neighbor indices are discrete; no gradient flows through selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import ConfigError, resample2d
from .tensor import Tensor


@dataclass
class NodeGrid:
    """Feature rows for every grid cell; node i sits at (i // grid_w, i % grid_w)."""

    features: Tensor
    grid_h: int
    grid_w: int

    def __post_init__(self):
        n = self.features.shape[0]
        if n != self.grid_h * self.grid_w:
            raise ConfigError(
                f"node count {n} != grid {self.grid_h}x{self.grid_w}"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class GazeGrid:
    """Per-node gaze intensity in [0,1], aligned with NodeGrid indexing."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError(
                f"gaze values outside [0,1]: min={self.values.min()}, max={self.values.max()}"
            )


@dataclass
class NeighborGraph:
    """K directed neighbor indices per center node."""

    neighbors: np.ndarray
    k: int

    def __post_init__(self):
        self.neighbors = np.asarray(self.neighbors, dtype=np.intp)
        if self.neighbors.ndim != 2 or self.neighbors.shape[1] != self.k:
            raise ValueError(f"neighbor table shape {self.neighbors.shape} != (N,{self.k})")

    def validate(self, n: int) -> None:
        if self.neighbors.min(initial=0) < 0 or self.neighbors.max(initial=0) >= n:
            raise ValueError("neighbor index out of range")
        for i, row in enumerate(self.neighbors):
            if len(set(row.tolist())) != self.k:
                raise ValueError(f"duplicate neighbor in row {i}")


@dataclass
class GraphConfig:
    k: int
    lambda_g: float = 0.0
    use_gaze: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.lambda_g < 0:
            raise ConfigError(f"lambda_g must be >= 0, got {self.lambda_g}")


def feature_distance(nodes: NodeGrid, i: int, j: int) -> float:
    """Squared Euclidean distance between the feature rows of nodes i and j."""
    diff = nodes.features.data[i] - nodes.features.data[j]
    return float((diff * diff).sum())


def gaze_distance(gaze: GazeGrid, i: int, j: int, lambda_g: float) -> float:
    """The gaze term alone: lambda_g * (gm_i - gm_j)^2 * gm_i."""
    g = gaze.values
    return float(lambda_g * (g[i] - g[j]) ** 2 * g[i])


def fused_distance(nodes: NodeGrid, gaze: GazeGrid, i: int, j: int, lambda_g: float) -> float:
    """Feature distance plus the center-weighted gaze term."""
    return feature_distance(nodes, i, j) + gaze_distance(gaze, i, j, lambda_g)


def _distance_matrix(features: np.ndarray, gaze: np.ndarray | None, lambda_g: float) -> np.ndarray:
    # Gram identity: ||xi-xj||^2 = ||xi||^2 + ||xj||^2 - 2 xi.xj
    sq = np.einsum("nc,nc->n", features, features)
    d = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    if gaze is not None and lambda_g > 0.0:
        diff = gaze[:, None] - gaze[None, :]
        d = d + lambda_g * diff * diff * gaze[:, None]
    return d


def knn_build(nodes: NodeGrid, gaze: GazeGrid | None, cfg: GraphConfig) -> NeighborGraph:
    """K nearest neighbors per center, self excluded, index tie-break."""
    n = nodes.n
    if cfg.k >= n:
        raise ConfigError(f"k={cfg.k} must be smaller than node count {n}")
    if cfg.use_gaze:
        if gaze is None:
            raise ConfigError("graph config requests gaze but no gaze grid was given")
        if gaze.values.shape != (n,):
            raise ValueError(f"gaze grid size {gaze.values.shape} != node count {n}")
        gvals = gaze.values
    else:
        gvals = None

    d = _distance_matrix(nodes.features.data, gvals, cfg.lambda_g)
    np.fill_diagonal(d, np.inf)

    if n <= 512:
        order = np.argsort(d, axis=1, kind="stable")
        nbrs = order[:, : cfg.k]
    else:
        nbrs = np.empty((n, cfg.k), dtype=np.intp)
        part = np.argpartition(d, cfg.k - 1, axis=1)[:, : cfg.k]
        for i in range(n):
            row = d[i]
            kth = row[part[i]].max()
            cand = np.flatnonzero(row <= kth)
            cand = cand[np.argsort(row[cand], kind="stable")]
            nbrs[i] = cand[: cfg.k]
    return NeighborGraph(neighbors=np.ascontiguousarray(nbrs), k=cfg.k)


def downsample_gaze(gaze_map: np.ndarray, grid_h: int, grid_w: int) -> GazeGrid:
    """Area-average an H,W gaze map onto the node grid; dims must divide."""
    gm = np.asarray(gaze_map, dtype=np.float64)
    h, w = gm.shape
    if h % grid_h != 0 or w % grid_w != 0:
        raise ConfigError(
            f"gaze map {h}x{w} does not divide into grid {grid_h}x{grid_w}"
        )
    pooled = resample2d(Tensor(gm), grid_h, grid_w, mode="area").data
    return GazeGrid(values=np.clip(pooled, 0.0, 1.0).reshape(-1))


def downsample_gaze_tensor(gaze_map: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Differentiable variant used inside model forwards."""
    h, w = gaze_map.shape
    if h % grid_h != 0 or w % grid_w != 0:
        raise ConfigError(
            f"gaze map {h}x{w} does not divide into grid {grid_h}x{grid_w}"
        )
    return resample2d(gaze_map, grid_h, grid_w, mode="area")


# ---------------------------------------------------------------------------
# text dump format
# ---------------------------------------------------------------------------

def format_graph_dump(
    graph: NeighborGraph, grid_h: int, grid_w: int, lambda_g: float, mode: str
) -> str:
    """One `center: n1,...,nK` line per node plus a header with the build params."""
    lines = [
        f"# knn-graph mode={mode} lambda_g={lambda_g!r} k={graph.k} "
        f"grid_h={grid_h} grid_w={grid_w}"
    ]
    for i, row in enumerate(graph.neighbors):
        lines.append(f"{i}: " + ",".join(str(int(j)) for j in row))
    return "\n".join(lines) + "\n"


def parse_graph_dump(text: str) -> tuple[dict, NeighborGraph]:
    """Inverse of format_graph_dump; returns (header fields, graph)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# knn-graph"):
        raise ValueError("missing knn-graph header")
    header = {}
    for token in lines[0].split()[2:]:
        key, val = token.split("=", 1)
        header[key] = val
    rows = []
    for ln in lines[1:]:
        _, rest = ln.split(":", 1)
        rows.append([int(tok) for tok in rest.strip().split(",")])
    k = int(header["k"])
    return header, NeighborGraph(neighbors=np.asarray(rows, dtype=np.intp), k=k)
