"""Waypoint mobility traces and the GPS fix model."""
from __future__ import annotations

import bisect
import logging
import math
import random
from dataclasses import dataclass
from typing import Sequence

from ..geometry import HexGrid, Point

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MobilityTrace:
    """Piecewise-linear path through ``(time, point)`` waypoints."""

    waypoints: tuple[tuple[float, Point], ...]

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("trace needs at least one waypoint")
        wps = tuple((float(t), (float(p[0]), float(p[1]))) for t, p in self.waypoints)
        for (t0, _), (t1, _) in zip(wps, wps[1:]):
            if not t1 > t0:
                raise ValueError(f"waypoint times must be strictly increasing ({t0} then {t1})")
        object.__setattr__(self, "waypoints", wps)
        object.__setattr__(self, "_times", [t for t, _ in wps])

    @classmethod
    def of(cls, rows: Sequence[Sequence[float]]) -> MobilityTrace:
        """Build from ``[t, x, y]`` rows."""
        return cls(tuple((r[0], (r[1], r[2])) for r in rows))

    @property
    def start(self) -> float:
        return self.waypoints[0][0]

    @property
    def end(self) -> float:
        return self.waypoints[-1][0]

    def position_at(self, t: float) -> Point:
        return position_at(self, t)

    def max_speed(self) -> float:
        best = 0.0
        for (t0, a), (t1, b) in zip(self.waypoints, self.waypoints[1:]):
            best = max(best, math.dist(a, b) / (t1 - t0))
        return best

    def shifted(self, dt: float) -> MobilityTrace:
        return MobilityTrace(tuple((t + dt, p) for t, p in self.waypoints))

    def rotated(self, angle_deg: float, center: Point) -> MobilityTrace:
        a = math.radians(angle_deg)
        c, s = math.cos(a), math.sin(a)
        cx, cy = center
        return MobilityTrace(tuple(
            (t, (cx + c * (x - cx) - s * (y - cy), cy + s * (x - cx) + c * (y - cy)))
            for t, (x, y) in self.waypoints))

    def clipped(self, grid: HexGrid) -> tuple[MobilityTrace, list[str]]:
        """Pull waypoints outside the grid back onto it, reporting each one."""
        warnings = []
        out = []
        for t, p in self.waypoints:
            if grid.contains(grid.nearest_cell(p)):
                out.append((t, p))
                continue
            q = _clip_point(p, grid)
            warnings.append(f"waypoint at t={t:g} ({p[0]:.1f}, {p[1]:.1f}) outside grid, clipped to "
                            f"({q[0]:.1f}, {q[1]:.1f})")
            out.append((t, q))
        for w in warnings:
            log.warning(w)
        return MobilityTrace(tuple(out)), warnings


def _clip_point(p: Point, grid: HexGrid) -> Point:
    ox, oy = grid.origin
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        q = (ox + mid * (p[0] - ox), oy + mid * (p[1] - oy))
        if grid.contains(grid.nearest_cell(q)):
            lo = mid
        else:
            hi = mid
    return (ox + lo * (p[0] - ox), oy + lo * (p[1] - oy))


def position_at(trace: MobilityTrace, t: float) -> Point:
    """Interpolated position; times outside the trace clamp to its endpoints."""
    wps = trace.waypoints
    if t <= wps[0][0]:
        return wps[0][1]
    if t >= wps[-1][0]:
        return wps[-1][1]
    i = bisect.bisect_right(trace._times, t)
    (t0, a), (t1, b) = wps[i - 1], wps[i]
    f = (t - t0) / (t1 - t0)
    return (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))


def gps_fix(true_pos: Sequence[float], sigma: float, rng: random.Random) -> Point:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return (float(true_pos[0]), float(true_pos[1]))
    return (true_pos[0] + rng.gauss(0.0, sigma), true_pos[1] + rng.gauss(0.0, sigma))
