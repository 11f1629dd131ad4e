"""Point clouds and neighbor graphs for verification and benchmarking.

Determinism contract: clouds come from a counter-based RNG (Philox), so the
same (N, seed) is bit-identical on every platform. Neighbor search is brute
force O(N^2) (desk scale; the benchmark isolates convolution time, not
neighbor-search time). Neighbor lists are ordered by (distance, index), so
ties go to the lower node index; kNN is directed (no symmetric closure),
because the convolutions sum over N(i) exactly as given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PointCloud",
    "NeighborGraph",
    "random_cloud",
    "knn",
    "dense",
    "radius",
    "save_cloud",
    "load_cloud",
]


@dataclass(frozen=True)
class PointCloud:
    """N positions in a cubic box; seed/box retained for reproducibility."""

    positions: np.ndarray
    seed: int | None = None
    box_side: float | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N>=1, 3) array")
        if not np.isfinite(pos).all():
            raise ValueError("positions must be finite")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class NeighborGraph:
    """Per-node neighbor index lists, ordered by (distance, index).

    ``kind`` records the construction (dense, knn(k), radius(r_cut, max)).
    """

    neighbors: tuple
    kind: str

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    @property
    def n_edges(self) -> int:
        return sum(len(lst) for lst in self.neighbors)

    def edge_arrays(self):
        """Flat (centers, sources) edge enumeration.

        Centers ascend; within one center the sources are re-sorted to
        ascending node index, the frozen accumulation order for the
        convolutions (graph storage order is by distance instead).
        """
        centers, sources = [], []
        for i, lst in enumerate(self.neighbors):
            if len(lst):
                centers.append(np.full(len(lst), i, dtype=np.int64))
                sources.append(np.sort(np.asarray(lst, dtype=np.int64)))
        if not centers:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(centers), np.concatenate(sources)


def random_cloud(n: int, seed: int, density: float = 1.0) -> PointCloud:
    """Uniform cloud of n points in a cube of side (n / density)^(1/3).

    Constant density keeps kNN geometry scale-stable as n grows.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if density <= 0:
        raise ValueError("density must be positive")
    side = float((n / density) ** (1.0 / 3.0))
    gen = np.random.Generator(np.random.Philox(key=seed))
    pos = gen.random((n, 3)) * side
    return PointCloud(positions=pos, seed=seed, box_side=side)


def _ordered_candidates(cloud: PointCloud):
    # For each node: other nodes ordered by (squared distance, index).
    pos = cloud.positions
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    idx = np.arange(cloud.n_nodes)
    order = np.lexsort((np.broadcast_to(idx, d2.shape), d2), axis=1)
    return d2, order


def knn(cloud: PointCloud, k: int) -> NeighborGraph:
    """Directed k-nearest-neighbor graph; ties to the lower node index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    kk = min(k, cloud.n_nodes - 1)
    _, order = _ordered_candidates(cloud)
    neigh = tuple(order[i, :kk].copy() for i in range(cloud.n_nodes))
    return NeighborGraph(neighbors=neigh, kind=f"knn({k})")


def dense(n: int) -> NeighborGraph:
    """Every node connected to all other nodes (no self-loops)."""
    idx = np.arange(n, dtype=np.int64)
    neigh = tuple(np.delete(idx, i) for i in range(n))
    return NeighborGraph(neighbors=neigh, kind="dense")


def radius(cloud: PointCloud, r_cut: float, max_neighbors: int) -> NeighborGraph:
    """Up to max_neighbors nearest nodes within r_cut; same tie-break as knn."""
    d2, order = _ordered_candidates(cloud)
    cut = float(r_cut) ** 2 if np.isfinite(r_cut) else np.inf
    neigh = []
    for i in range(cloud.n_nodes):
        row = order[i]
        # the center itself sits at d2 = inf; drop it explicitly so an
        # infinite cutoff cannot sneak in a self loop
        row = row[(d2[i, row] <= cut) & (row != i)]
        neigh.append(row[:max_neighbors].copy())
    return NeighborGraph(neighbors=tuple(neigh), kind=f"radius({r_cut},{max_neighbors})")


def save_cloud(cloud: PointCloud, path) -> None:
    """Plain-text format: one 'x y z' line per node at 17 significant digits.

    Header comments keep seed and box side so a load round-trips the whole
    record; any other '#' line is ignored by the loader.
    """
    with open(path, "w") as fh:
        if cloud.seed is not None:
            fh.write(f"# seed={cloud.seed}\n")
        if cloud.box_side is not None:
            fh.write(f"# box_side={cloud.box_side:.17g}\n")
        for p in cloud.positions:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def load_cloud(path) -> PointCloud:
    """Read the plain-text cloud format written by save_cloud."""
    seed = None
    box = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("seed="):
                    seed = int(body[5:])
                elif body.startswith("box_side="):
                    box = float(body[9:])
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected three columns, got {len(parts)}")
            rows.append([float(x) for x in parts])
    if not rows:
        raise ValueError(f"{path}: no positions found")
    return PointCloud(positions=np.array(rows), seed=seed, box_side=box)
