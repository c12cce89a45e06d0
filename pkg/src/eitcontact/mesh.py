"""Triangle-mesh container with boundary arclength indexing and electrode placement.

The mesh module does not generate meshes; it validates raw node/triangle data,
extracts the (single, counterclockwise) boundary loop, parametrizes it by
arclength and places extended electrodes as unions of whole boundary edges.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "MeshError",
    "TriMesh",
    "ExtendedElectrode",
    "build_boundary",
    "locate_electrodes",
    "refine_uniform",
    "read_mesh",
    "write_mesh",
    "read_electrode_intervals",
    "write_electrode_intervals",
]


class MeshError(ValueError):
    """Invalid mesh topology or electrode layout."""


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class TriMesh:
    """Immutable 2D triangle mesh with an arclength-parametrized boundary loop.

    Parameters
    ----------
    nodes : (N, 2) array
        Node coordinates in meters.
    triangles : (T, 3) int array
        Vertex indices per triangle. Clockwise triangles are silently
        reoriented to counterclockwise.

    Attributes
    ----------
    boundary_nodes : (B,) int array
        Boundary node ids ordered counterclockwise, starting at the boundary
        node with the smallest id.
    boundary_loop : (B, 2) int array
        Directed boundary edges ``(boundary_nodes[i], boundary_nodes[i+1])``.
    arclength : (B,) array
        Cumulative boundary arclength of each node in ``boundary_nodes``;
        ``arclength[0] == 0``.
    perimeter : float
        Total boundary length.

    Raises
    ------
    MeshError
        On out-of-range indices, degenerate triangles, non-manifold edges
        or a boundary with more than one component.
    """

    def __init__(self, nodes, triangles):
        nodes = np.ascontiguousarray(np.asarray(nodes, dtype=float))
        triangles = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (N, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError("triangles must be a nonempty (T, 3) array")
        if triangles.min() < 0 or triangles.max() >= len(nodes):
            raise MeshError("triangle indices out of range")

        # Canonical counterclockwise orientation.
        v0, v1, v2 = (nodes[triangles[:, k]] for k in range(3))
        area2 = _cross2(v1 - v0, v2 - v0)
        if np.any(area2 == 0.0):
            raise MeshError("degenerate triangle with zero area")
        flip = area2 < 0.0
        triangles = triangles.copy()
        triangles[flip, 1], triangles[flip, 2] = (
            triangles[flip, 2].copy(),
            triangles[flip, 1].copy(),
        )

        self.nodes = nodes
        self.triangles = triangles
        self.nodes.setflags(write=False)
        self.triangles.setflags(write=False)

        self._extract_boundary()

    def _extract_boundary(self):
        tris = self.triangles
        directed = np.concatenate(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]
        )
        undirected = np.sort(directed, axis=1)
        _, inverse, counts = np.unique(
            undirected, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two triangles")
        boundary_edges = directed[counts[inverse] == 1]

        succ: dict[int, int] = {}
        for a, b in boundary_edges:
            if int(a) in succ:
                raise MeshError("multiple boundary components (pinched boundary vertex)")
            succ[int(a)] = int(b)

        start = min(succ)
        loop = [start]
        cur = succ[start]
        while cur != start:
            loop.append(cur)
            cur = succ[cur]
            if len(loop) > len(boundary_edges):
                raise MeshError("boundary loop does not close")
        if len(loop) != len(boundary_edges):
            raise MeshError("multiple boundary components")

        self.boundary_nodes = np.asarray(loop, dtype=np.int64)
        self.boundary_nodes.setflags(write=False)
        nxt = np.roll(self.boundary_nodes, -1)
        self.boundary_loop = np.column_stack([self.boundary_nodes, nxt])
        self.boundary_loop.setflags(write=False)

        seg = self.nodes[nxt] - self.nodes[self.boundary_nodes]
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self.arclength = cum[:-1]
        self.arclength.setflags(write=False)
        self.perimeter = float(cum[-1])

        # All-CCW triangles imply a CCW boundary; guard against silent bugs.
        x = self.nodes[self.boundary_nodes]
        if np.sum(_cross2(x, np.roll(x, -1, axis=0))) <= 0.0:
            raise MeshError("boundary loop is not counterclockwise")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        v0, v1, v2 = (self.nodes[self.triangles[:, k]] for k in range(3))
        return 0.5 * _cross2(v1 - v0, v2 - v0)

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(self.nodes.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()

    def __repr__(self):
        return f"TriMesh({self.n_nodes} nodes, {self.n_triangles} triangles)"


@dataclass(frozen=True)
class ExtendedElectrode:
    """A boundary arclength interval owning a run of boundary nodes.

    ``interval`` endpoints are snapped to boundary nodes, so the electrode is
    a union of whole boundary edges. ``node_arclengths`` are ascending and
    may end at the perimeter value when the electrode touches the loop start.
    """

    index: int  # 1-based
    interval: tuple[float, float]
    node_ids: np.ndarray
    node_arclengths: np.ndarray

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def to_t(self, s):
        """Map boundary arclength to the normalized local coordinate."""
        return (np.asarray(s, dtype=float) - self.interval[0]) / self.length

    def to_arclength(self, t):
        """Map normalized local coordinate to boundary arclength."""
        return self.interval[0] + np.asarray(t, dtype=float) * self.length

    @property
    def node_t(self) -> np.ndarray:
        return self.to_t(self.node_arclengths)

    def edges(self):
        """Yield (node_p, node_q, s_p, s_q) for the electrode's boundary edges."""
        for k in range(len(self.node_ids) - 1):
            yield (
                int(self.node_ids[k]),
                int(self.node_ids[k + 1]),
                float(self.node_arclengths[k]),
                float(self.node_arclengths[k + 1]),
            )


def build_boundary(nodes, triangles) -> TriMesh:
    """Validate raw node/triangle arrays and index the boundary loop."""
    return TriMesh(nodes, triangles)


def _snap_index(s_ext: np.ndarray, x: float) -> int:
    return int(np.argmin(np.abs(s_ext - x)))


def locate_electrodes(mesh: TriMesh, intervals) -> list[ExtendedElectrode]:
    """Place extended electrodes on the boundary by arclength intervals.

    Interval endpoints are snapped to the nearest boundary node. Each
    resulting electrode must contain at least one interior boundary node, and
    adjacent electrodes must leave at least one boundary node in between.

    Parameters
    ----------
    intervals : sequence of (a, b)
        Sorted, disjoint arclength intervals within ``[0, perimeter]``.

    Raises
    ------
    MeshError
        For unsorted/overlapping intervals, an interval without an interior
        boundary node, or a missing separating node between neighbors.
    """
    P = mesh.perimeter
    iv = [(float(a), float(b)) for a, b in intervals]
    if not iv:
        raise MeshError("no electrode intervals given")
    for a, b in iv:
        if not (0.0 <= a < b <= P):
            raise MeshError(f"interval ({a:g}, {b:g}) outside [0, perimeter={P:g}]")
    for m in range(len(iv) - 1):
        if iv[m][0] > iv[m + 1][0]:
            raise MeshError("intervals must be sorted by start arclength")
        if iv[m][1] > iv[m + 1][0]:
            raise MeshError(
                f"overlapping intervals for electrodes {m + 1} and {m + 2}"
            )

    B = len(mesh.boundary_nodes)
    # Virtual node at arclength P duplicates the loop start node.
    s_ext = np.concatenate([mesh.arclength, [P]])

    snapped = []
    for m, (a, b) in enumerate(iv):
        ia, ib = _snap_index(s_ext, a), _snap_index(s_ext, b)
        if ib - ia < 2:
            raise MeshError(
                f"electrode {m + 1}: no interior boundary node in ({a:g}, {b:g})"
            )
        snapped.append((ia, ib))

    for m in range(len(snapped)):
        m_next = (m + 1) % len(snapped)
        ib_here = snapped[m][1]
        ia_next = snapped[m_next][0] + (B if m == len(snapped) - 1 else 0)
        if ia_next - ib_here < 2:
            raise MeshError(
                f"missing separating node between electrodes {m + 1} and {m_next + 1}"
            )

    electrodes = []
    ids_ext = np.concatenate([mesh.boundary_nodes, mesh.boundary_nodes[:1]])
    for m, (ia, ib) in enumerate(snapped):
        node_ids = ids_ext[ia : ib + 1].copy()
        node_s = s_ext[ia : ib + 1].copy()
        node_ids.setflags(write=False)
        node_s.setflags(write=False)
        electrodes.append(
            ExtendedElectrode(
                index=m + 1,
                interval=(float(s_ext[ia]), float(s_ext[ib])),
                node_ids=node_ids,
                node_arclengths=node_s,
            )
        )
    return electrodes


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four by edge midpoints.

    Boundary midpoints land on the boundary polyline, so the polygonal domain
    and its perimeter are preserved.
    """
    tris = mesh.triangles
    T = len(tris)
    pair = np.sort(
        np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1
    )
    uniq, inverse = np.unique(pair, axis=0, return_inverse=True)
    midpoints = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    new_nodes = np.vstack([mesh.nodes, midpoints])

    m01 = mesh.n_nodes + inverse[:T]
    m12 = mesh.n_nodes + inverse[T : 2 * T]
    m20 = mesh.n_nodes + inverse[2 * T :]
    children = np.concatenate(
        [
            np.column_stack([tris[:, 0], m01, m20]),
            np.column_stack([m01, tris[:, 1], m12]),
            np.column_stack([m20, m12, tris[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ]
    )
    return TriMesh(new_nodes, children)


def write_mesh(mesh: TriMesh, path) -> None:
    """Write the text format: ``nodes <N> triangles <T>``, coordinates, indices."""
    with open(path, "w") as f:
        f.write(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}\n")
        for x, y in mesh.nodes:
            f.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def read_mesh(path) -> TriMesh:
    """Read the text mesh format written by :func:`write_mesh`."""
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != "nodes" or header[2] != "triangles":
            raise MeshError(f"bad mesh header in {path}")
        n, t = int(header[1]), int(header[3])
        nodes = np.array(
            [[float(v) for v in f.readline().split()] for _ in range(n)]
        )
        triangles = np.array(
            [[int(v) for v in f.readline().split()] for _ in range(t)], dtype=np.int64
        )
    return TriMesh(nodes, triangles)


def write_electrode_intervals(intervals, path) -> None:
    with open(path, "w") as f:
        for a, b in intervals:
            f.write(f"{a:.17g} {b:.17g}\n")


def read_electrode_intervals(path) -> list[tuple[float, float]]:
    intervals = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, b = line.split()
            intervals.append((float(a), float(b)))
    return intervals
