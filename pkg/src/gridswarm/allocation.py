"""Distance-based task allocation with per-target visit capacities.

Every robot solves the same assignment problem over whatever it can see;
determinism of the solver is what lets robots that share a view agree on
the allocation without exchanging a single message.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

# Tie perturbation: small enough never to flip a real cost difference in
# meters, large enough to make equal-cost optima resolve reproducibly
# toward low (robot, target) index pairs.
_TIE_EPS = 1e-9


@dataclass
class CostMatrix:
    entries: np.ndarray  # (n_robots, n_targets) Euclidean distances
    robot_ids: tuple
    target_ids: tuple


@dataclass
class Allocation:
    assigned: dict = field(default_factory=dict)  # robot_id -> target_id
    sequences: dict = field(default_factory=dict)  # target_id -> (robot ids)

    def robots_on(self, target_id) -> list:
        return [r for r, t in self.assigned.items() if t == target_id]


def build_cost_matrix(detections, self_position) -> CostMatrix:
    """All-pairs distances between detected robots (incl. self) and targets.

    Rows and columns are ordered by ascending id so any robot building the
    matrix from the same information gets the identical matrix.
    """
    robots = sorted(
        [(detections.robot_id, self_position)] + list(detections.visible_neighbors)
    )
    targets = sorted(detections.visible_targets)
    entries = np.zeros((len(robots), len(targets)))
    for i, (_rid, rpos) in enumerate(robots):
        for j, (_tid, tpos, _req) in enumerate(targets):
            entries[i, j] = math.hypot(rpos[0] - tpos[0], rpos[1] - tpos[1])
    return CostMatrix(
        entries=entries,
        robot_ids=tuple(r for r, _ in robots),
        target_ids=tuple(t for t, _, _ in targets),
    )


def allocate(cost: CostMatrix, capacities: dict) -> Allocation:
    """Min-cost assignment with each target duplicated `capacity` times.

    Solves the rectangular assignment exactly (Hungarian via scipy); every
    robot gets at most one target and every target at most its capacity.
    Robots stay unassigned when there are more robots than visit slots.
    """
    n = len(cost.robot_ids)
    slots = []  # column index -> target id
    cols = []
    for j, tid in enumerate(cost.target_ids):
        cap = int(capacities.get(tid, 1))
        if cap < 1:
            raise ValueError(f"capacity for target {tid} must be >= 1")
        for _ in range(cap):
            slots.append(tid)
            cols.append(cost.entries[:, j])
    alloc = Allocation()
    if n == 0 or not slots:
        return alloc
    mat = np.column_stack(cols)
    # deterministic tie-break toward low (robot, target) index pairs
    idx = np.arange(n)[:, None] * (len(slots) + 1) + np.arange(len(slots))[None, :]
    rows, chosen = linear_sum_assignment(mat + _TIE_EPS * idx)
    for i, j in zip(rows, chosen):
        alloc.assigned[cost.robot_ids[i]] = slots[j]
    return alloc


def mrt_sequence(alloc: Allocation, cost: CostMatrix) -> Allocation:
    """Order each target's assigned robots by distance, ties by robot id."""
    col = {tid: j for j, tid in enumerate(cost.target_ids)}
    row = {rid: i for i, rid in enumerate(cost.robot_ids)}
    for tid in set(alloc.assigned.values()):
        robots = alloc.robots_on(tid)
        robots.sort(key=lambda r: (cost.entries[row[r], col[tid]], r))
        alloc.sequences[tid] = tuple(robots)
    return alloc
