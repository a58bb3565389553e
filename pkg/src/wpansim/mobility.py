"""Random-waypoint mobility inside a rectangular arena."""

from __future__ import annotations

import math
import random

from .core import ConfigurationError


class RandomWaypoint:
    """Each node walks toward a uniformly drawn target at a uniformly drawn
    speed, picking a fresh target on arrival (zero pause)."""

    def __init__(self, arena_w: float, arena_h: float, speed_min: float,
                 speed_max: float, rng: random.Random):
        if arena_w <= 0 or arena_h <= 0:
            raise ConfigurationError("arena dimensions must be > 0")
        if not 0 < speed_min <= speed_max:
            raise ConfigurationError("expected 0 < speed_min <= speed_max")
        self.arena_w = arena_w
        self.arena_h = arena_h
        self.speed_min = speed_min
        self.speed_max = speed_max
        self.rng = rng
        self._legs: dict[int, tuple[float, float, float]] = {}  # id -> (tx, ty, speed)

    def _new_leg(self, node_id: int) -> tuple[float, float, float]:
        leg = (self.rng.uniform(0.0, self.arena_w),
               self.rng.uniform(0.0, self.arena_h),
               self.rng.uniform(self.speed_min, self.speed_max))
        self._legs[node_id] = leg
        return leg

    def step(self, node_id: int, x: float, y: float, dt_s: float) -> tuple[float, float]:
        """Advance one node by dt seconds; returns its new position."""
        remaining = dt_s
        while remaining > 0:
            tx, ty, speed = self._legs.get(node_id) or self._new_leg(node_id)
            dist = math.hypot(tx - x, ty - y)
            travel = speed * remaining
            if travel >= dist:
                x, y = tx, ty
                remaining -= dist / speed if speed > 0 else remaining
                self._new_leg(node_id)
            else:
                x += (tx - x) * travel / dist
                y += (ty - y) * travel / dist
                remaining = 0.0
        return x, y
