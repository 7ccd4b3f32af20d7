"""Independent reference computations used as test oracles.

Nothing here imports the package's scoring, routing, EMA or capacity code;
each oracle recomputes its answer from first principles (exact rationals,
brute-force enumeration) so that agreement is meaningful.
"""

from __future__ import annotations

import itertools
import math
import re
from fractions import Fraction

STOP = set(
    "a an and are as at be by for from in into is it its of on or that the then this to with using use each all any via per".split()
)


def words(text: str, *, stop: bool = True) -> set[str]:
    toks = set(re.findall(r"[a-z0-9]+", text.lower()))
    return toks - STOP if stop else toks


def cosine_sq(a: set[str], b: set[str]) -> Fraction:
    if not a or not b:
        return Fraction(0)
    return Fraction(len(a & b) ** 2, len(a) * len(b))


def cosine(a: set[str], b: set[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


def ema(q0: Fraction, alpha: Fraction, values) -> Fraction:
    q = q0
    for v in values:
        q = alpha * q + (1 - alpha) * Fraction(v)
    return q


def ema_steps_to(alpha: float, eps: float) -> int:
    """Updates after which a unit gap shrinks below ``eps``."""
    return math.ceil(math.log(eps) / math.log(alpha))


def complete_tree_leaves(b: int, depth: int) -> int:
    """Leaves of a complete b-ary tree, counted by explicit enumeration of root-to-leaf paths."""
    return sum(1 for _ in itertools.product(range(b), repeat=depth))


def all_paths(children: dict[str, list[str]], roots, target: str) -> list[list[str]]:
    """Every simple root-to-target path, by brute force DFS."""
    out = []

    def dfs(node, path):
        if node == target:
            out.append(list(path))
            return
        for c in children.get(node, ()):
            if c not in path:
                path.append(c)
                dfs(c, path)
                path.pop()

    for r in roots:
        dfs(r, [r])
    return out


def oracle_route(task: str, nodes: dict[str, dict], roots, floor: float = 0.0):
    """Brute-force routing: argmax cosine, ties by (shortest root distance, id); path by (length, ids).

    ``nodes`` maps id -> {"tokens": set, "children": [...], "routable": bool}.
    Returns ``(target, path)`` or ``None`` when nothing scores above ``floor``.
    """
    t = words(task)
    children = {k: v["children"] for k, v in nodes.items()}
    best = None
    for nid, n in nodes.items():
        if not n["routable"]:
            continue
        s = cosine_sq(t, n["tokens"])
        if s == 0 or math.sqrt(float(s)) <= floor:
            continue
        paths = all_paths(children, roots, nid)
        level = min((len(p) - 1 for p in paths), default=math.inf)
        key = (-s, level, nid)
        if best is None or key < best[0]:
            best = (key, nid, paths)
    if best is None:
        return None
    _, nid, paths = best
    path = min(paths, key=lambda p: (len(p), p)) if paths else []
    return nid, path
