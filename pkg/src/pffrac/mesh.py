"""Hierarchical rectangular meshes on the slit square domain.

The computational domain is the 10 mm x 10 mm square with a horizontal slit
from the midpoint (5, 5) to the right edge.  The slit is realized
topologically: vertices strictly inside the slit segment are duplicated into
a lower and an upper twin, so cells on either side of the slit are decoupled
even though they coincide geometrically.  The slit tip (5, 5) and the mouth
vertex (10, 5) are shared.

Meshes are immutable.  ``refine`` returns a new mesh in which every marked
cell is split into four congruent children (red refinement); a closure sweep
keeps the level gap across any edge at most one, which realizes the
one-hanging-node-per-edge rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

DOMAIN_SIZE = 10.0
SLIT_Y = 5.0
SLIT_X_MIN = 5.0
COARSE_DIVS = 4

# side markers
INTERIOR = 0
BOTTOM = 1
TOP = 2
LEFT = 3
RIGHT = 4
SLIT_LOWER = 5
SLIT_UPPER = 6

BOUNDARY_MARKERS = (BOTTOM, TOP, LEFT, RIGHT, SLIT_LOWER, SLIT_UPPER)

MARKER_NAMES = {
    INTERIOR: "interior",
    BOTTOM: "bottom",
    TOP: "top",
    LEFT: "left",
    RIGHT: "right",
    SLIT_LOWER: "slit_lower",
    SLIT_UPPER: "slit_upper",
}

# child ordering of a red-refined cell (lower-left, lower-right,
# upper-right, upper-left quadrant)
_CHILD_SW, _CHILD_SE, _CHILD_NE, _CHILD_NW = 0, 1, 2, 3


class MeshError(Exception):
    """Raised for invalid mesh queries or construction arguments."""


def _slit_face(x: float, y: float, cell_below: bool) -> int:
    """Face tag for a vertex position: -1 lower face, +1 upper, 0 shared.

    The notch is open at the boundary, so the mouth vertex (10, 5) is
    duplicated like the interior slit vertices; only the tip is shared.
    """
    if y == SLIT_Y and SLIT_X_MIN < x <= DOMAIN_SIZE:
        return -1 if cell_below else 1
    return 0


@dataclass(frozen=True)
class Side:
    """One mesh side at the finest granularity (half-edges are split).

    ``adj`` holds (cell, local edge, t0, t1) for each adjacent active cell,
    where (t0, t1) is the parameter range of this side within the cell's
    edge (x-increasing for horizontal edges, y-increasing for vertical).
    """

    v_lo: int
    v_hi: int
    adj: tuple
    marker: int

    @property
    def is_boundary(self) -> bool:
        return self.marker != INTERIOR


@dataclass(frozen=True)
class Patch:
    """Cells sharing a node, with the estimator's side decomposition."""

    node: int
    cells: np.ndarray
    interior_sides: np.ndarray
    boundary_sides: np.ndarray
    h_p: float


class Mesh:
    """Immutable hierarchical rectangular mesh over the slit square."""

    def __init__(self, verts, vert_face, vert_twin, conn, level, parent,
                 children, active):
        self.verts = verts            # (nv, 2) float
        self.vert_face = vert_face    # (nv,) int8: -1 lower, +1 upper, 0 none
        self.vert_twin = vert_twin    # (nv,) int64, -1 if no twin
        self.conn = conn              # (nc, 4) vertex ids, CCW from lower-left
        self.level = level            # (nc,) int
        self.parent = parent          # (nc,) int, -1 at coarse level
        self.children = children      # (nc, 4) int, -1 where leaf
        self.active = active          # (nc,) bool

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.verts)

    @cached_property
    def active_cells(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    @cached_property
    def cell_geom(self) -> tuple:
        """(x0, y0, hx, hy) arrays for active cells (active-local order)."""
        c = self.conn[self.active_cells]
        ll = self.verts[c[:, 0]]
        ur = self.verts[c[:, 2]]
        return ll[:, 0], ll[:, 1], ur[:, 0] - ll[:, 0], ur[:, 1] - ll[:, 1]

    @cached_property
    def active_index(self) -> np.ndarray:
        """Map cell id -> position in ``active_cells`` (-1 if inactive)."""
        idx = np.full(len(self.conn), -1, dtype=np.int64)
        idx[self.active_cells] = np.arange(len(self.active_cells))
        return idx

    @cached_property
    def used_vertices(self) -> np.ndarray:
        return np.unique(self.conn[self.active_cells])

    @cached_property
    def _vertex_key_map(self) -> dict:
        return {
            (self.verts[v, 0], self.verts[v, 1], int(self.vert_face[v])): v
            for v in range(len(self.verts))
        }

    def total_area(self) -> float:
        _, _, hx, hy = self.cell_geom
        return float(np.sum(hx * hy))

    # ------------------------------------------------------------------
    # sides and hanging vertices
    # ------------------------------------------------------------------
    @cached_property
    def _side_data(self) -> tuple:
        """Build the fine-granularity side table and the hanging-node table.

        Returns (sides, hanging) where ``hanging`` maps vertex id ->
        (master_a, master_b).
        """
        verts = self.verts
        vkey = self._vertex_key_map
        used = set(self.used_vertices.tolist())
        segments: dict = {}
        hanging: dict = {}

        def endpoint_id(x, y, below):
            # slit-line endpoints resolve to the cell's own face; the tip
            # and mouth vertices are shared (face 0)
            v = vkey.get((x, y, _slit_face(x, y, below)))
            if v is None:
                v = vkey.get((x, y, 0))
            if v is None:
                raise MeshError(f"missing vertex at ({x}, {y})")
            return v

        for c in self.active_cells:
            v = self.conn[c]
            x0, y0 = verts[v[0]]
            x1, y1 = verts[v[2]]
            below = 0.5 * (y0 + y1) < SLIT_Y
            # edges: (axis, line, lo, hi); axis 0 = horizontal (along x)
            edges = (
                (0, y0, x0, x1, 0),  # bottom
                (1, x1, y0, y1, 1),  # right
                (0, y1, x0, x1, 2),  # top
                (1, x0, y0, y1, 3),  # left
            )
            for axis, line, lo, hi, ledge in edges:
                face = 0
                if axis == 0 and line == SLIT_Y and hi > SLIT_X_MIN:
                    face = -1 if below else 1
                mid = 0.5 * (lo + hi)
                mid_xy = (mid, line) if axis == 0 else (line, mid)
                mv = vkey.get((mid_xy[0], mid_xy[1], face))
                if mv is not None and mv in used:
                    # neighbor across this edge is finer: register halves
                    a_xy = (lo, line) if axis == 0 else (line, lo)
                    b_xy = (hi, line) if axis == 0 else (line, hi)
                    va = endpoint_id(a_xy[0], a_xy[1], below)
                    vb = endpoint_id(b_xy[0], b_xy[1], below)
                    hanging[mv] = (va, vb)
                    halves = (((lo, mid), va, mv, 0.0, 0.5),
                              ((mid, hi), mv, vb, 0.5, 1.0))
                    for (slo, shi), sa, sb, t0, t1 in halves:
                        key = (axis, line, slo, shi, face)
                        segments.setdefault(key, ((sa, sb), []))[1].append(
                            (int(c), ledge, t0, t1))
                else:
                    a_xy = (lo, line) if axis == 0 else (line, lo)
                    b_xy = (hi, line) if axis == 0 else (line, hi)
                    va = endpoint_id(a_xy[0], a_xy[1], below)
                    vb = endpoint_id(b_xy[0], b_xy[1], below)
                    key = (axis, line, lo, hi, face)
                    segments.setdefault(key, ((va, vb), []))[1].append(
                        (int(c), ledge, 0.0, 1.0))

        sides = []
        for (axis, line, lo, hi, face), ((va, vb), adj) in sorted(
                segments.items()):
            if len(adj) > 2:
                raise MeshError("side shared by more than two cells")
            marker = INTERIOR
            if len(adj) == 1:
                if axis == 0 and line == 0.0:
                    marker = BOTTOM
                elif axis == 0 and line == DOMAIN_SIZE:
                    marker = TOP
                elif axis == 1 and line == 0.0:
                    marker = LEFT
                elif axis == 1 and line == DOMAIN_SIZE:
                    marker = RIGHT
                elif face == -1:
                    marker = SLIT_LOWER
                elif face == 1:
                    marker = SLIT_UPPER
                else:
                    raise MeshError(
                        f"interior side with one neighbor at {(axis, line, lo, hi)}")
            sides.append(Side(va, vb, tuple(adj), marker))
        return tuple(sides), hanging

    @property
    def sides(self) -> tuple:
        return self._side_data[0]

    @property
    def hanging(self) -> dict:
        """Hanging vertex id -> (master vertex a, master vertex b)."""
        return self._side_data[1]

    @cached_property
    def vertex_markers(self) -> dict:
        """Vertex id -> set of boundary markers of incident sides."""
        out: dict = {}
        for s in self.sides:
            if s.marker == INTERIOR:
                continue
            for v in (s.v_lo, s.v_hi):
                out.setdefault(v, set()).add(s.marker)
        return out

    @cached_property
    def _vertex_cells(self) -> dict:
        """Vertex id -> list of active cells having it as a corner."""
        out: dict = {}
        for c in self.active_cells:
            for v in self.conn[c]:
                out.setdefault(int(v), []).append(int(c))
        return out

    def patch_of(self, node: int) -> Patch:
        """Patch of a non-hanging active vertex: cells, skeleton, diameter."""
        if node in self.hanging:
            raise MeshError(f"vertex {node} is hanging")
        cells = self._vertex_cells.get(int(node))
        if cells is None:
            raise MeshError(f"vertex {node} not used by any active cell")
        cellset = set(cells)
        interior, boundary = [], []
        for i, s in enumerate(self.sides):
            if s.marker == INTERIOR:
                if len(s.adj) == 2 and {s.adj[0][0], s.adj[1][0]} <= cellset:
                    interior.append(i)
            elif s.adj[0][0] in cellset:
                boundary.append(i)
        pts = self.verts[self.conn[np.asarray(cells, dtype=np.int64)]]
        pts = pts.reshape(-1, 2)
        d = pts[:, None, :] - pts[None, :, :]
        h_p = float(np.sqrt((d ** 2).sum(axis=2).max()))
        return Patch(int(node), np.asarray(sorted(cellset), dtype=np.int64),
                     np.asarray(interior, dtype=np.int64),
                     np.asarray(boundary, dtype=np.int64), h_p)

    # ------------------------------------------------------------------
    # point location
    # ------------------------------------------------------------------
    def locate(self, point, hint: int = 0):
        """Active cell containing ``point`` and its reference coordinates.

        ``hint`` selects the face for points on the slit line with x > 5:
        negative for below, positive for above.
        """
        pts = np.asarray([point], dtype=float)
        cells, ref = self.locate_many(pts, np.asarray([hint], dtype=np.int8))
        return int(cells[0]), (float(ref[0, 0]), float(ref[0, 1]))

    def locate_many(self, points: np.ndarray, hints: Optional[np.ndarray] = None):
        """Vectorized hierarchy descent for a batch of points."""
        pts = np.asarray(points, dtype=float)
        n = len(pts)
        if hints is None:
            hints = np.zeros(n, dtype=np.int8)
        x, y = pts[:, 0], pts[:, 1]
        if np.any((x < 0) | (x > DOMAIN_SIZE) | (y < 0) | (y > DOMAIN_SIZE)):
            raise MeshError("point outside domain")
        h0 = DOMAIN_SIZE / COARSE_DIVS
        ix = np.minimum((x // h0).astype(np.int64), COARSE_DIVS - 1)
        iy = np.minimum((y // h0).astype(np.int64), COARSE_DIVS - 1)
        # tie rule: points exactly on a horizontal grid line go to the lower
        # cell unless the hint says above
        on_line = (y == iy * h0) & (iy > 0) & (hints <= 0)
        iy = iy - on_line
        cur = (iy * COARSE_DIVS + ix).astype(np.int64)
        up_hint = hints > 0
        while True:
            kids = self.children[cur, 0]
            todo = kids >= 0
            if not np.any(todo):
                break
            c = cur[todo]
            v = self.conn[c]
            cx = 0.5 * (self.verts[v[:, 0], 0] + self.verts[v[:, 2], 0])
            cy = 0.5 * (self.verts[v[:, 0], 1] + self.verts[v[:, 2], 1])
            go_right = x[todo] > cx
            go_up = (y[todo] > cy) | ((y[todo] == cy) & up_hint[todo])
            idx = np.where(go_up, np.where(go_right, _CHILD_NE, _CHILD_NW),
                           np.where(go_right, _CHILD_SE, _CHILD_SW))
            cur[todo] = self.children[c, idx]
        v0 = self.conn[cur, 0]
        v2 = self.conn[cur, 2]
        x0 = self.verts[v0, 0]
        y0 = self.verts[v0, 1]
        hx = self.verts[v2, 0] - x0
        hy = self.verts[v2, 1] - y0
        ref = np.stack(((x - x0) / hx, (y - y0) / hy), axis=1)
        return cur, ref

    # ------------------------------------------------------------------
    # output
    # ------------------------------------------------------------------
    def dump(self) -> str:
        """Plain-text listing: vertices (id x y twin), active cells."""
        lines = []
        for v in self.used_vertices:
            lines.append(f"v {v} {self.verts[v, 0]:.17g} "
                         f"{self.verts[v, 1]:.17g} {self.vert_twin[v]}")
        for c in self.active_cells:
            v = self.conn[c]
            lines.append(f"c {c} {v[0]} {v[1]} {v[2]} {v[3]} {self.level[c]}")
        return "\n".join(lines) + "\n"


class _MeshBuilder:
    """Mutable construction state; finalized into an immutable Mesh."""

    def __init__(self):
        self.verts: list = []
        self.vert_face: list = []
        self.vert_twin: list = []
        self.vkey: dict = {}
        self.conn: list = []
        self.level: list = []
        self.parent: list = []
        self.children: list = []
        self.active: list = []

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "_MeshBuilder":
        b = cls()
        b.verts = [tuple(p) for p in mesh.verts]
        b.vert_face = list(mesh.vert_face)
        b.vert_twin = list(mesh.vert_twin)
        b.vkey = dict(mesh._vertex_key_map)
        b.conn = [tuple(r) for r in mesh.conn]
        b.level = list(mesh.level)
        b.parent = list(mesh.parent)
        b.children = [tuple(r) for r in mesh.children]
        b.active = list(mesh.active)
        return b

    def vertex(self, x: float, y: float, cell_below: bool) -> int:
        face = _slit_face(x, y, cell_below)
        key = (x, y, face)
        v = self.vkey.get(key)
        if v is not None:
            return v
        v = len(self.verts)
        self.verts.append((x, y))
        self.vert_face.append(face)
        self.vert_twin.append(-1)
        self.vkey[key] = v
        if face != 0:
            other = self.vkey.get((x, y, -face))
            if other is not None:
                self.vert_twin[v] = other
                self.vert_twin[other] = v
        return v

    def add_cell(self, v, lvl, parent=-1) -> int:
        c = len(self.conn)
        self.conn.append(tuple(v))
        self.level.append(lvl)
        self.parent.append(parent)
        self.children.append((-1, -1, -1, -1))
        self.active.append(True)
        return c

    def split(self, c: int) -> None:
        if not self.active[c]:
            return
        v0, v1, v2, v3 = self.conn[c]
        x0, y0 = self.verts[v0]
        x1, y1 = self.verts[v2]
        xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        below = ym < SLIT_Y
        mb = self.vertex(xm, y0, below)
        mr = self.vertex(x1, ym, below)
        mt = self.vertex(xm, y1, below)
        ml = self.vertex(x0, ym, below)
        mc = self.vertex(xm, ym, below)
        lvl = self.level[c] + 1
        sw = self.add_cell((v0, mb, mc, ml), lvl, c)
        se = self.add_cell((mb, v1, mr, mc), lvl, c)
        ne = self.add_cell((mc, mr, v2, mt), lvl, c)
        nw = self.add_cell((ml, mc, mt, v3), lvl, c)
        self.children[c] = (sw, se, ne, nw)
        self.active[c] = False

    def _used(self) -> set:
        used = set()
        for c, act in enumerate(self.active):
            if act:
                used.update(self.conn[c])
        return used

    def closure_violations(self) -> list:
        """Active cells with an edge whose neighbor side is two levels finer."""
        used = self._used()
        out = []
        for c, act in enumerate(self.active):
            if not act:
                continue
            v = self.conn[c]
            x0, y0 = self.verts[v[0]]
            x1, y1 = self.verts[v[2]]
            below = 0.5 * (y0 + y1) < SLIT_Y
            edges = ((0, y0, x0, x1), (1, x1, y0, y1),
                     (0, y1, x0, x1), (1, x0, y0, y1))
            for axis, line, lo, hi in edges:
                mid = 0.5 * (lo + hi)
                if self._occupied(axis, line, mid, below, used):
                    q1 = 0.5 * (lo + mid)
                    q2 = 0.5 * (mid + hi)
                    if (self._occupied(axis, line, q1, below, used)
                            or self._occupied(axis, line, q2, below, used)):
                        out.append(c)
                        break
        return out

    def _occupied(self, axis, line, t, below, used) -> bool:
        # points on the slit interior are keyed by the cell's own face, so
        # refinement on the other face never forces closure across the slit
        xy = (t, line) if axis == 0 else (line, t)
        face = _slit_face(xy[0], xy[1], below)
        v = self.vkey.get((xy[0], xy[1], face))
        return v is not None and v in used

    def finalize(self) -> Mesh:
        return Mesh(
            np.asarray(self.verts, dtype=float),
            np.asarray(self.vert_face, dtype=np.int8),
            np.asarray(self.vert_twin, dtype=np.int64),
            np.asarray(self.conn, dtype=np.int64),
            np.asarray(self.level, dtype=np.int64),
            np.asarray(self.parent, dtype=np.int64),
            np.asarray(self.children, dtype=np.int64),
            np.asarray(self.active, dtype=bool),
        )


def coarse_mesh(geometry: str = "slit_square") -> Mesh:
    """The common 4 x 4 coarse mesh of the slit square.

    Both benchmark scenarios share this geometry; every other mesh in a run
    derives from it by refinement.
    """
    if geometry not in ("slit_square", "shear", "tension"):
        raise MeshError(f"unsupported geometry {geometry!r}")
    b = _MeshBuilder()
    h = DOMAIN_SIZE / COARSE_DIVS
    for iy in range(COARSE_DIVS):
        for ix in range(COARSE_DIVS):
            x0, y0 = ix * h, iy * h
            x1, y1 = x0 + h, y0 + h
            below = 0.5 * (y0 + y1) < SLIT_Y
            v0 = b.vertex(x0, y0, below)
            v1 = b.vertex(x1, y0, below)
            v2 = b.vertex(x1, y1, below)
            v3 = b.vertex(x0, y1, below)
            b.add_cell((v0, v1, v2, v3), 0)
    return b.finalize()


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Red-refine the marked active cells, then close to one hanging node
    per edge.  Returns the input mesh unchanged for an empty marking."""
    marked = sorted(set(int(m) for m in marked))
    if not marked:
        return mesh
    for m in marked:
        if m < 0 or m >= len(mesh.conn) or not mesh.active[m]:
            raise MeshError(f"cell {m} is not an active cell")
    b = _MeshBuilder.from_mesh(mesh)
    for m in marked:
        b.split(m)
    while True:
        viol = b.closure_violations()
        if not viol:
            break
        for c in sorted(viol):
            b.split(c)
    return b.finalize()


def uniform_refine(mesh: Mesh, levels: int) -> Mesh:
    """Refine every active cell ``levels`` times."""
    if levels < 0:
        raise MeshError("levels must be >= 0")
    for _ in range(levels):
        mesh = refine(mesh, mesh.active_cells)
    return mesh
