"""Planar geometry helpers: angle wrapping and occupancy-grid routing."""

from __future__ import annotations

import math
from collections import deque

AXIS_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def wrap_pi(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


def snap_to_axis(dx: float, dy: float) -> tuple[int, int]:
    """Nearest grid axis direction for a vector (|dx| vs |dy| decides)."""
    if abs(dx) >= abs(dy):
        return (1, 0) if dx >= 0 else (-1, 0)
    return (0, 1) if dy >= 0 else (0, -1)


def _cell_blocked(i, j, cell, footprints):
    x0, x1 = i * cell, (i + 1) * cell
    y0, y1 = j * cell, (j + 1) * cell
    for cx, cy, w, d in footprints:
        fx0, fx1 = cx - w / 2, cx + w / 2
        fy0, fy1 = cy - d / 2, cy + d / 2
        if fx0 < x1 - 1e-12 and fx1 > x0 + 1e-12 and fy0 < y1 - 1e-12 and fy1 > y0 + 1e-12:
            return True
    return False


def grid_route(
    room_w: float,
    room_d: float,
    footprints: list[tuple[float, float, float, float]],
    start_xy: tuple[float, float],
    goal_xy: tuple[float, float],
    cell: float = 0.5,
) -> list[tuple[int, int]] | None:
    """Deterministic BFS shortest path on a square occupancy grid.

    Footprints are (cx, cy, w, d) rectangles; a cell overlapping any
    footprint is blocked, except the start and goal cells which are always
    passable.  Returns the cell path including both endpoints, or None if
    the goal is unreachable.
    """
    cols = max(int(math.ceil(room_w / cell)), 1)
    rows = max(int(math.ceil(room_d / cell)), 1)

    def cell_of(xy):
        i = min(max(int(xy[0] // cell), 0), cols - 1)
        j = min(max(int(xy[1] // cell), 0), rows - 1)
        return (i, j)

    start = cell_of(start_xy)
    goal = cell_of(goal_xy)
    blocked = {
        (i, j)
        for i in range(cols)
        for j in range(rows)
        if _cell_blocked(i, j, cell, footprints)
    }
    blocked.discard(start)
    blocked.discard(goal)

    parent: dict[tuple[int, int], tuple[int, int] | None] = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for dx, dy in AXIS_DIRS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if 0 <= nxt[0] < cols and 0 <= nxt[1] < rows and nxt not in blocked:
                if nxt not in parent:
                    parent[nxt] = cur
                    queue.append(nxt)
    return None


def turn_word(heading: tuple[int, int], new_dir: tuple[int, int]) -> str | None:
    """Turn needed to face new_dir from heading; None if already facing it."""
    if heading == new_dir:
        return None
    cross = heading[0] * new_dir[1] - heading[1] * new_dir[0]
    if cross > 0:
        return "turn left"
    if cross < 0:
        return "turn right"
    return "turn around"


def path_instructions(
    path: list[tuple[int, int]], initial_heading: tuple[int, int]
) -> str:
    """Render a cell path as comma-joined turn-by-turn clauses."""
    if len(path) < 2:
        return "Stay where you are."
    clauses: list[str] = []
    heading = initial_heading
    straight_open = False
    for a, b in zip(path, path[1:]):
        step = (b[0] - a[0], b[1] - a[1])
        turn = turn_word(heading, step)
        if turn is not None:
            clauses.append(turn)
            heading = step
            straight_open = False
        if not straight_open:
            clauses.append("go straight")
            straight_open = True
    text = ", ".join(clauses)
    return text[0].upper() + text[1:] + "."


def route_instructions(
    room_w: float,
    room_d: float,
    footprints: dict[str, tuple[float, float, float, float]],
    start_id: str,
    face_id: str,
    goal_id: str,
    cell: float = 0.5,
) -> str | None:
    """Turn-by-turn route between two objects, initially facing a third.

    Returns None when no grid path exists.  The start and goal objects'
    own footprints never block the route.
    """
    passable = [fp for oid, fp in footprints.items() if oid not in (start_id, goal_id)]
    start = footprints[start_id][:2]
    goal = footprints[goal_id][:2]
    face = footprints[face_id][:2]
    path = grid_route(room_w, room_d, passable, start, goal, cell)
    if path is None:
        return None
    heading = snap_to_axis(face[0] - start[0], face[1] - start[1])
    return path_instructions(path, heading)
