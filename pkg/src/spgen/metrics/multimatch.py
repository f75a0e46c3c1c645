"""MultiMatch scanpath similarity without the duration dimension.

Scanpaths are simplified, their saccades aligned by a shortest path through
the saccade-pair lattice, and the aligned pairs compared on shape, direction,
length and position.  Every dimension is a similarity: 1 means identical.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import astuple, dataclass

import numpy as np

from ..scanpath import ScanPath, as_fixations

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class MmComponents:
    shape: float
    direction: float
    length: float
    position: float

    @property
    def mm_score(self) -> float:
        return (self.shape + self.direction + self.length + self.position) / 4.0

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return astuple(self) + (self.mm_score,)


@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[int, int], ...]
    cost: float


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = math.hypot(*u), math.hypot(*v)
    if nu == 0 or nv == 0:
        return 0.0
    c = (u[0] * v[0] + u[1] * v[1]) / (nu * nv)
    return math.acos(min(1.0, max(-1.0, c)))


def _merge_pass(fix: np.ndarray, should_merge) -> np.ndarray:
    """One left-to-right sweep dropping the middle fixation of merged pairs."""
    n_sacc = len(fix) - 1
    keep = [0]
    i = 0
    while i < n_sacc:
        if i + 1 < n_sacc and should_merge(fix[i + 1] - fix[i], fix[i + 2] - fix[i + 1]):
            keep.append(i + 2)
            i += 2
        else:
            keep.append(i + 1)
            i += 1
    return fix[keep]


def simplify_scanpath(sp, amp_thresh: float = 0.1 * SQRT2, dir_thresh_deg: float = 45.0):
    """Merge locally contained or near-collinear consecutive saccades.

    A direction sweep merges saccade pairs whose angle is below
    ``dir_thresh_deg``; an amplitude sweep merges pairs whose summed length is
    below ``amp_thresh``.  Sweeps repeat until neither changes anything, so the
    result is a fixpoint.  Returns the same type it was given.
    """
    fix = as_fixations(sp).copy()
    if len(fix) == 0:
        raise ValueError("cannot simplify an empty scanpath")
    dir_rad = math.radians(dir_thresh_deg)

    def by_direction(u, v):
        return _angle_between(u, v) < dir_rad

    def by_amplitude(u, v):
        return math.hypot(*u) + math.hypot(*v) < amp_thresh

    while True:
        before = len(fix)
        fix = _merge_pass(fix, by_direction)
        fix = _merge_pass(fix, by_amplitude)
        if len(fix) == before:
            break
    return ScanPath(fix) if isinstance(sp, ScanPath) else fix


def saccades(fix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Saccade vectors and their start fixations.

    A single fixation becomes one zero-length saccade anchored at it.
    """
    fix = as_fixations(fix)
    if len(fix) == 1:
        return np.zeros((1, 2)), fix.copy()
    return np.diff(fix, axis=0), fix[:-1]


def align_saccades(u: np.ndarray, v: np.ndarray) -> Alignment:
    """Dijkstra over the (n x m) lattice from (0, 0) to (n-1, m-1).

    Moves go right, down or diagonally; entering node (i, j) costs
    ``|u_i - v_j|``.  Equal-cost paths resolve by heap order, preferring
    lower flat node indices.
    """
    n, m = len(u), len(v)
    cost = np.sqrt(((u[:, None, :] - v[None, :, :]) ** 2).sum(-1))
    dist = np.full((n, m), np.inf)
    pred = np.full((n, m), -1, dtype=np.int64)
    dist[0, 0] = 0.0
    heap = [(0.0, 0)]
    done = np.zeros((n, m), dtype=bool)
    while heap:
        d, node = heapq.heappop(heap)
        i, j = divmod(node, m)
        if done[i, j]:
            continue
        done[i, j] = True
        if i == n - 1 and j == m - 1:
            break
        for di, dj in ((0, 1), (1, 0), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m and not done[a, b]:
                nd = d + cost[a, b]
                if nd < dist[a, b]:
                    dist[a, b] = nd
                    pred[a, b] = node
                    heapq.heappush(heap, (nd, a * m + b))
    path = []
    node = (n - 1) * m + (m - 1)
    while node != -1:
        path.append(divmod(int(node), m))
        node = pred[path[-1]]
    return Alignment(tuple(path[::-1]), float(dist[n - 1, m - 1]))


def align_scanpaths(a, b) -> Alignment:
    """Alignment of the saccade sequences of two scanpaths."""
    ua, _ = saccades(as_fixations(a))
    ub, _ = saccades(as_fixations(b))
    return align_saccades(ua, ub)


def _direction_diff(u: np.ndarray, v: np.ndarray) -> float:
    if not (u.any() or v.any()):
        return 0.0
    if not (u.any() and v.any()):
        return math.pi / 2
    d = abs(math.atan2(u[1], u[0]) - math.atan2(v[1], v[0]))
    return 2 * math.pi - d if d > math.pi else d


def multimatch(a, b, screen_diag: float = SQRT2, amp_thresh: float | None = None,
               dir_thresh_deg: float = 45.0, simplify: bool = True) -> MmComponents:
    """Shape, direction, length and position similarity of two scanpaths.

    ``screen_diag`` is the stimulus diagonal in the scanpaths' units (sqrt 2
    for normalized coordinates).  The amplitude threshold defaults to a tenth
    of it.  Direction compares saccade angles; a zero-length saccade against a
    non-zero one counts as a right angle.
    """
    fa, fb = as_fixations(a), as_fixations(b)
    if len(fa) == 0 or len(fb) == 0:
        raise ValueError("multimatch needs non-empty scanpaths")
    if simplify:
        amp = 0.1 * screen_diag if amp_thresh is None else amp_thresh
        fa = simplify_scanpath(fa, amp, dir_thresh_deg)
        fb = simplify_scanpath(fb, amp, dir_thresh_deg)
    ua, pa = saccades(fa)
    ub, pb = saccades(fb)
    pairs = align_saccades(ua, ub).pairs

    shape = direction = length = position = 0.0
    for i, j in pairs:
        u, v = ua[i], ub[j]
        shape += math.hypot(u[0] - v[0], u[1] - v[1])
        direction += _direction_diff(u, v)
        length += abs(math.hypot(*u) - math.hypot(*v))
        position += math.hypot(pa[i][0] - pb[j][0], pa[i][1] - pb[j][1])
    n = len(pairs)

    def sim(total, scale):
        return min(1.0, max(0.0, 1.0 - total / n / scale))

    return MmComponents(sim(shape, 2 * screen_diag), sim(direction, math.pi),
                        sim(length, screen_diag), sim(position, screen_diag))
