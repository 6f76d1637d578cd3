"""Hexagonal cell grid, planar polygons and the protected-zone compiler.

Cells are pointy-top hexagons addressed by axial coordinates ``(q, r)``.
All lengths are metres in a local planar frame.

The zone compiler turns a protected-zone polygon into the layered cell
structure used by the network side:

* ``cover``  -- connected, hole-free set of cells intersecting the zone
* ``c1``     -- boundary cells of ``cover``
* ``c0``     -- cells outside ``cover`` adjacent to ``c1``
* ``outer_layers`` -- successive rings ``c-1, c-2, ...`` around ``c0``
* ``sp``     -- surveillance perimeter, the outer outline of ``c1``
* ``op``     -- outbound perimeter, the zone scaled until it clears ``c1``
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .errors import InvalidPolygon, NoPerimeter, OpOutOfGrid, OutOfGrid

EPS = 1e-9
SQRT3 = math.sqrt(3.0)

Point = tuple[float, float]

# Order matters: direction d shares the cell edge between corners
# (6 - d) % 6 and (7 - d) % 6.
DIRECTIONS: tuple[tuple[int, int], ...] = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))


@dataclass(frozen=True, order=True)
class CellId:
    q: int
    r: int

    def __add__(self, other: CellId) -> CellId:
        return CellId(self.q + other.q, self.r + other.r)

    def as_pair(self) -> list[int]:
        return [self.q, self.r]

    def __str__(self) -> str:
        return f"({self.q},{self.r})"


def neighbors(cell: CellId) -> set[CellId]:
    return {CellId(cell.q + dq, cell.r + dr) for dq, dr in DIRECTIONS}


def hex_distance(a: CellId, b: CellId) -> int:
    dq, dr = a.q - b.q, a.r - b.r
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


def _cube_round(qf: float, rf: float) -> CellId:
    sf = -qf - rf
    q, r, s = round(qf), round(rf), round(sf)
    dq, dr, ds = abs(q - qf), abs(r - rf), abs(s - sf)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return CellId(int(q), int(r))


def hex_line(a: CellId, b: CellId) -> list[CellId]:
    """Cells on the straight hex line from ``a`` to ``b`` inclusive."""
    n = hex_distance(a, b)
    if n == 0:
        return [a]
    # nudge avoids ties landing exactly on cell edges
    aq, ar = a.q + 1e-6, a.r + 1e-6
    bq, br = b.q + 1e-6, b.r + 1e-6
    return [_cube_round(aq + (bq - aq) * i / n, ar + (br - ar) * i / n) for i in range(n + 1)]


# ---------------------------------------------------------------------------
# planar primitives


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def point_segment_distance(p: Point, a: Point, b: Point) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return math.hypot(p[0] - ax, p[1] - ay)
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def segments_intersect(a: Point, b: Point, c: Point, d: Point, eps: float = EPS) -> bool:
    """True if closed segments ab and cd share at least one point (within eps)."""
    if (max(a[0], b[0]) + eps < min(c[0], d[0]) or max(c[0], d[0]) + eps < min(a[0], b[0])
            or max(a[1], b[1]) + eps < min(c[1], d[1]) or max(c[1], d[1]) + eps < min(a[1], b[1])):
        return False
    d1 = _cross(c, d, a)
    d2 = _cross(c, d, b)
    d3 = _cross(a, b, c)
    d4 = _cross(a, b, d)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
            ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True
    return (point_segment_distance(a, c, d) <= eps or point_segment_distance(b, c, d) <= eps
            or point_segment_distance(c, a, b) <= eps or point_segment_distance(d, a, b) <= eps)


def segment_distance(a: Point, b: Point, c: Point, d: Point) -> float:
    if segments_intersect(a, b, c, d):
        return 0.0
    return min(point_segment_distance(a, c, d), point_segment_distance(b, c, d),
               point_segment_distance(c, a, b), point_segment_distance(d, a, b))


def _signed_area(vertices: Sequence[Point]) -> float:
    s = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


@dataclass(frozen=True)
class Polygon:
    """Simple polygon; the closing edge from the last vertex to the first is implicit."""

    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise InvalidPolygon(f"polygon needs at least 3 vertices, got {len(verts)}")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise InvalidPolygon("polygon vertices must be finite")
        if abs(_signed_area(verts)) <= EPS:
            raise InvalidPolygon("polygon has zero area")
        if not _is_simple(verts):
            raise InvalidPolygon("polygon is self-intersecting")

    @classmethod
    def of(cls, points: Iterable[Sequence[float]]) -> Polygon:
        return cls(tuple((float(p[0]), float(p[1])) for p in points))

    @property
    def area(self) -> float:
        return abs(_signed_area(self.vertices))

    @property
    def centroid(self) -> Point:
        a = _signed_area(self.vertices)
        cx = cy = 0.0
        n = len(self.vertices)
        for i in range(n):
            x0, y0 = self.vertices[i]
            x1, y1 = self.vertices[(i + 1) % n]
            w = x0 * y1 - x1 * y0
            cx += (x0 + x1) * w
            cy += (y0 + y1) * w
        return (cx / (6.0 * a), cy / (6.0 * a))

    def edges(self) -> list[tuple[Point, Point]]:
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    @cached_property
    def _bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.vertices]
        ys = [p[1] for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def bbox(self) -> tuple[float, float, float, float]:
        return self._bbox

    def far_from(self, p: Sequence[float], d: float) -> bool:
        """True when ``p`` lies more than ``d`` outside the bounding box (a cheap rejection)."""
        x0, y0, x1, y1 = self._bbox
        return p[0] < x0 - d or p[0] > x1 + d or p[1] < y0 - d or p[1] > y1 + d

    def as_lists(self) -> list[list[float]]:
        return [[x, y] for x, y in self.vertices]


def _is_simple(verts: Sequence[Point]) -> bool:
    n = len(verts)
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        a, b = edges[i]
        if math.hypot(b[0] - a[0], b[1] - a[1]) <= EPS:
            return False
        for j in range(i + 1, n):
            c, d = edges[j]
            if j == i + 1:
                # consecutive edges share b; they must not fold back onto each other
                if point_segment_distance(d, a, b) <= EPS or point_segment_distance(a, c, d) <= EPS:
                    return False
            elif i == 0 and j == n - 1:
                if point_segment_distance(c, a, b) <= EPS or point_segment_distance(b, c, d) <= EPS:
                    return False
            elif segments_intersect(a, b, c, d):
                return False
    return True


def point_in_polygon(p: Sequence[float], poly: Polygon) -> bool:
    """Even-odd test; points on the boundary count as inside."""
    if not isinstance(poly, Polygon):
        poly = Polygon.of(poly)
    x, y = float(p[0]), float(p[1])
    if poly.far_from((x, y), EPS):
        return False
    inside = False
    for a, b in poly.edges():
        if point_segment_distance((x, y), a, b) <= EPS:
            return True
        if (a[1] > y) != (b[1] > y):
            xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if x < xi:
                inside = not inside
    return inside


def boundary_distance(p: Sequence[float], poly: Polygon) -> float:
    return min(point_segment_distance((p[0], p[1]), a, b) for a, b in poly.edges())


def scale_polygon(poly: Polygon, s: float) -> Polygon:
    if s <= 0:
        raise ValueError(f"scale factor must be positive, got {s}")
    cx, cy = poly.centroid
    return Polygon(tuple((cx + s * (x - cx), cy + s * (y - cy)) for x, y in poly.vertices))


# ---------------------------------------------------------------------------
# hex grid


@dataclass(frozen=True)
class HexGrid:
    cell_radius: float
    extent: int
    origin: Point = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not self.cell_radius > 0:
            raise ValueError("cell_radius must be > 0")
        if self.extent < 1:
            raise ValueError("extent must be >= 1")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def contains(self, cell: CellId) -> bool:
        return hex_distance(cell, CellId(0, 0)) <= self.extent

    def cells(self) -> list[CellId]:
        n = self.extent
        return [CellId(q, r) for q in range(-n, n + 1)
                for r in range(max(-n, -q - n), min(n, -q + n) + 1)]

    def center(self, cell: CellId) -> Point:
        R = self.cell_radius
        return (self.origin[0] + R * SQRT3 * (cell.q + cell.r / 2.0),
                self.origin[1] + R * 1.5 * cell.r)

    def corners(self, cell: CellId) -> list[Point]:
        cx, cy = self.center(cell)
        R = self.cell_radius
        return [(cx + R * math.cos(math.radians(60 * i - 30)),
                 cy + R * math.sin(math.radians(60 * i - 30))) for i in range(6)]

    def hexagon(self, cell: CellId) -> Polygon:
        return Polygon(tuple(self.corners(cell)))

    def shared_edge(self, cell: CellId, direction: int) -> tuple[Point, Point]:
        c = self.corners(cell)
        return c[(6 - direction) % 6], c[(7 - direction) % 6]

    def nearest_cell(self, p: Sequence[float]) -> CellId:
        x = (p[0] - self.origin[0]) / self.cell_radius
        y = (p[1] - self.origin[1]) / self.cell_radius
        return _cube_round(SQRT3 / 3.0 * x - y / 3.0, 2.0 / 3.0 * y)


def cell_of_position(p: Sequence[float], grid: HexGrid) -> CellId:
    cell = grid.nearest_cell(p)
    if not grid.contains(cell):
        raise OutOfGrid(f"position ({p[0]:.3f}, {p[1]:.3f}) lies outside the grid")
    return cell


def _hex_bbox(grid: HexGrid, cell: CellId) -> tuple[float, float, float, float]:
    cx, cy = grid.center(cell)
    hw = grid.cell_radius * SQRT3 / 2.0
    return cx - hw, cy - grid.cell_radius, cx + hw, cy + grid.cell_radius


def cell_intersects_polygon(grid: HexGrid, cell: CellId, poly: Polygon) -> bool:
    corners = grid.corners(cell)
    if point_in_polygon(grid.center(cell), poly) or any(point_in_polygon(c, poly) for c in corners):
        return True
    hexagon = Polygon(tuple(corners))
    if any(point_in_polygon(v, hexagon) for v in poly.vertices):
        return True
    hex_edges = hexagon.edges()
    return any(segments_intersect(a, b, c, d) for a, b in poly.edges() for c, d in hex_edges)


def _components(cells: set[CellId]) -> list[set[CellId]]:
    seen: set[CellId] = set()
    comps = []
    for start in sorted(cells):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        seen.add(start)
        while queue:
            for n in neighbors(queue.popleft()):
                if n in cells and n not in seen:
                    seen.add(n)
                    comp.add(n)
                    queue.append(n)
        comps.append(comp)
    return comps


def _fill_holes(cells: set[CellId], grid: HexGrid) -> set[CellId]:
    limit = grid.extent + 1
    outside: set[CellId] = set()
    queue = deque()
    origin = CellId(0, 0)
    for q in range(-limit, limit + 1):
        for r in range(-limit, limit + 1):
            c = CellId(q, r)
            if hex_distance(c, origin) == limit:
                outside.add(c)
                queue.append(c)
    while queue:
        for n in neighbors(queue.popleft()):
            if n not in outside and n not in cells and hex_distance(n, origin) <= limit:
                outside.add(n)
                queue.append(n)
    return {c for c in grid.cells() if c not in outside}


def cover_cells(pz: Polygon, grid: HexGrid) -> set[CellId]:
    """Connected, hole-free set of grid cells whose union contains ``pz``."""
    if not isinstance(pz, Polygon):
        pz = Polygon.of(pz)
    if pz.area <= EPS:
        raise InvalidPolygon("protected zone area below tolerance")
    for v in pz.vertices:
        if not grid.contains(grid.nearest_cell(v)):
            raise OutOfGrid(f"protected-zone vertex ({v[0]:.3f}, {v[1]:.3f}) lies outside the grid")
    x0, y0, x1, y1 = pz.bbox()
    raw = set()
    for cell in grid.cells():
        bx0, by0, bx1, by1 = _hex_bbox(grid, cell)
        if bx1 < x0 - EPS or bx0 > x1 + EPS or by1 < y0 - EPS or by0 > y1 + EPS:
            continue
        if cell_intersects_polygon(grid, cell, pz):
            raw.add(cell)
    if not raw:
        raise OutOfGrid("protected zone does not intersect the grid")

    comps = _components(raw)
    if len(comps) > 1:
        home = grid.nearest_cell(pz.centroid)
        main = next((c for c in comps if home in c), None)
        if main is None:
            main = max(comps, key=lambda c: (len(c), [(-x.q, -x.r) for x in sorted(c)][:1]))
        cover = set(main)
        for comp in comps:
            if comp is main:
                continue
            a, b = min(((a, b) for a in sorted(cover) for b in sorted(comp)),
                       key=lambda ab: (hex_distance(*ab), ab))
            cover |= {c for c in hex_line(a, b) if grid.contains(c)}
            cover |= comp
    else:
        cover = raw
    return _fill_holes(cover, grid)


def boundary_cells(cover: set[CellId]) -> set[CellId]:
    c1 = {c for c in cover if any(n not in cover for n in neighbors(c))}
    return c1 or set(cover)


def outline(cells: set[CellId], grid: HexGrid) -> list[Point]:
    """Closed outer outline (counter-clockwise vertex list) of a connected, hole-free cell set."""
    nxt: dict[tuple[float, float], Point] = {}
    key = lambda p: (round(p[0], 6), round(p[1], 6))  # noqa: E731
    for cell in sorted(cells):
        for d, (dq, dr) in enumerate(DIRECTIONS):
            if CellId(cell.q + dq, cell.r + dr) not in cells:
                a, b = grid.shared_edge(cell, d)
                nxt[key(a)] = b
    if not nxt:
        return []
    loops = []
    remaining = dict(nxt)
    while remaining:
        start = min(remaining)
        loop = []
        k = start
        while k in remaining:
            p = remaining.pop(k)
            loop.append(p)
            k = key(p)
        loops.append(loop)
    loop = max(loops, key=len)
    # rotate so the loop starts from its lexicographically smallest vertex
    i = min(range(len(loop)), key=lambda j: key(loop[j]))
    return loop[i:] + loop[:i]


def dist_polygon_to_cells(poly: Polygon, cells: Iterable[CellId], grid: HexGrid) -> float:
    """Minimum distance between the boundary of ``poly`` and the union of the cell hexagons."""
    cells = list(cells)
    if not cells:
        raise ValueError("cells must be non-empty")
    best = math.inf
    edges = poly.edges()
    for cell in cells:
        hexagon = grid.hexagon(cell)
        if any(point_in_polygon(v, hexagon) for v in poly.vertices):
            return 0.0
        for c, d in hexagon.edges():
            for a, b in edges:
                dist = segment_distance(a, b, c, d)
                if dist < best:
                    best = dist
                    if best == 0.0:
                        return 0.0
    return best


@dataclass(frozen=True)
class ZoneMap:
    pz: Polygon
    cover: frozenset[CellId]
    c1: frozenset[CellId]
    c0: frozenset[CellId]
    outer_layers: tuple[frozenset[CellId], ...]
    sp: tuple[Point, ...]
    op: Polygon
    op_scale: float
    requested_op_scale: float = field(default=1.0)

    def in_cover(self, cell: CellId) -> bool:
        """Membership predicate for the surveillance perimeter; authoritative for triggering."""
        return cell in self.cover

    def is_inbound_crossing(self, source: CellId, target: CellId) -> bool:
        return source not in self.cover and target in self.cover

    def layer_of(self, cell: CellId) -> int | None:
        """1 for c1, 0 for c0, -k for outer layer k, 2 for interior cover cells."""
        if cell in self.c1:
            return 1
        if cell in self.cover:
            return 2
        if cell in self.c0:
            return 0
        for k, layer in enumerate(self.outer_layers, start=1):
            if cell in layer:
                return -k
        return None

    def sp_polygon(self) -> Polygon:
        return Polygon(self.sp)

    def counts(self) -> dict[str, int]:
        out = {"cover": len(self.cover), "c1": len(self.c1), "c0": len(self.c0)}
        for k, layer in enumerate(self.outer_layers, start=1):
            out[f"c-{k}"] = len(layer)
        return out

    def to_dict(self) -> dict:
        cells = lambda s: [c.as_pair() for c in sorted(s)]  # noqa: E731
        return {
            "pz": self.pz.as_lists(),
            "cover": cells(self.cover),
            "c1": cells(self.c1),
            "c0": cells(self.c0),
            "outer_layers": [cells(layer) for layer in self.outer_layers],
            "sp": [[x, y] for x, y in self.sp],
            "op": self.op.as_lists(),
            "op_scale": self.op_scale,
            "requested_op_scale": self.requested_op_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ZoneMap:
        cells = lambda xs: frozenset(CellId(q, r) for q, r in xs)  # noqa: E731
        return cls(
            pz=Polygon.of(d["pz"]),
            cover=cells(d["cover"]),
            c1=cells(d["c1"]),
            c0=cells(d["c0"]),
            outer_layers=tuple(cells(layer) for layer in d["outer_layers"]),
            sp=tuple((float(x), float(y)) for x, y in d["sp"]),
            op=Polygon.of(d["op"]),
            op_scale=float(d["op_scale"]),
            requested_op_scale=float(d.get("requested_op_scale", d["op_scale"])),
        )


OP_SCALE_STEP = 0.05


def _encloses(op: Polygon, cells: Iterable[CellId], grid: HexGrid) -> bool:
    for cell in cells:
        for corner in grid.corners(cell):
            if not point_in_polygon(corner, op) or boundary_distance(corner, op) <= EPS:
                return False
    return True


def compile_zones(pz: Polygon, grid: HexGrid, op_scale: float = 1.3, n_outer_layers: int = 1) -> ZoneMap:
    if not isinstance(pz, Polygon):
        pz = Polygon.of(pz)
    if op_scale < 1:
        raise ValueError(f"op_scale must be >= 1, got {op_scale}")
    if n_outer_layers < 1:
        raise ValueError(f"n_outer_layers must be >= 1, got {n_outer_layers}")

    cover = cover_cells(pz, grid)
    c1 = boundary_cells(cover)
    c0 = {n for c in c1 for n in neighbors(c) if grid.contains(n) and n not in cover}
    if not c0:
        raise NoPerimeter("protected zone covers the whole grid; no c0 layer exists")
    seen = cover | c0
    layers = []
    prev = c0
    for _ in range(n_outer_layers):
        nxt = {n for c in prev for n in neighbors(c) if grid.contains(n) and n not in seen}
        layers.append(frozenset(nxt))
        seen |= nxt
        prev = nxt

    sp = outline(cover, grid)

    s = float(op_scale)
    while True:
        op = scale_polygon(pz, s)
        for v in op.vertices:
            if not grid.contains(grid.nearest_cell(v)):
                raise OpOutOfGrid(f"outbound perimeter at scale {s:.2f} leaves the grid before clearing c1")
        if _encloses(op, c1, grid) and dist_polygon_to_cells(op, c1, grid) > EPS:
            break
        s = round(s + OP_SCALE_STEP, 10)

    return ZoneMap(
        pz=pz,
        cover=frozenset(cover),
        c1=frozenset(c1),
        c0=frozenset(c0),
        outer_layers=tuple(layers),
        sp=tuple(sp),
        op=op,
        op_scale=s,
        requested_op_scale=float(op_scale),
    )


def collapse_op_onto_sp(zone: ZoneMap) -> ZoneMap:
    """Control geometry without a hysteresis band: ``op`` coincides with ``sp``."""
    from dataclasses import replace

    return replace(zone, op=Polygon(zone.sp), op_scale=0.0)
