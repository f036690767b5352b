"""Brute-force breadth-first expansion oracle for component traces.

Independent of the production depth-first recursion: a queue of
(tag_id, path) pairs, no shared helpers. Reports the same observable
outcomes so the two can be compared: the multiset of resolved leaf
occurrences (tag_id, path length), the multiset of unresolved references
with reasons, the resolved node count, or a cycle.
"""

from collections import deque
from dataclasses import dataclass, field


class OracleCycle(Exception):
    pass


@dataclass
class OracleResult:
    nodes: int = 0
    origins: list = field(default_factory=list)  # (tag_id, path_len) per leaf
    unresolved: list = field(default_factory=list)  # (tag_id, reason)


def bfs_trace(records: dict, root: int, max_depth: int) -> OracleResult:
    """records: tag_id -> (tag_type, components tuple). Raises KeyError for
    an unknown root and OracleCycle for a component chain hitting its own
    ancestry."""
    if root not in records:
        raise KeyError(root)
    result = OracleResult()
    queue = deque([(root, (root,))])
    while queue:
        tag_id, path = queue.popleft()
        result.nodes += 1
        _, components = records[tag_id]
        for comp in components:
            if comp in path:
                raise OracleCycle(path + (comp,))
            if len(path) > max_depth:  # child would sit past the depth limit
                result.unresolved.append((comp, "depth"))
                continue
            if comp not in records:
                result.unresolved.append((comp, "unknown"))
                continue
            queue.append((comp, path + (comp,)))
        if not components:
            result.origins.append((tag_id, len(path)))
    return result
