"""Cross-enterprise product genealogy.

Every commissioned tag carries its type (0 material, 1 assembly, 2 finite
product) and the tag ids of its direct components. A registry collects
those records as tags are commissioned anywhere in the network; a trace
expands one id into the full component tree.

Expansion is depth-first with two unresolved outcomes kept as explicit
leaf markers instead of errors: a component id nobody registered
("unknown") and a branch cut by the depth limit ("depth"). A component
chain that returns to an ancestor is a data fault and raises
CycleDetected with the offending id path.

The origin report flattens a trace into its terminal occurrences: one row
per leaf node per path (a material used twice is listed twice). The
number of origin rows plus unresolved markers always equals the number of
leaves of the tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Optional, Union

TYPE_MATERIAL = 0
TYPE_ASSEMBLY = 1
TYPE_PRODUCT = 2

TAG_TYPE_NAMES = {TYPE_MATERIAL: "material", TYPE_ASSEMBLY: "assembly",
                  TYPE_PRODUCT: "product"}

DEFAULT_MAX_DEPTH = 32


class TraceError(Exception):
    pass


class UnknownTag(TraceError):
    pass


class DuplicateTagId(TraceError):
    pass


class CycleDetected(TraceError):
    def __init__(self, path: tuple[int, ...]) -> None:
        super().__init__(" -> ".join(str(t) for t in path))
        self.path = path


@dataclass(frozen=True)
class TraceRecord:
    """What one enterprise knows about one tag: its type and parts list."""

    tag_id: int
    tag_type: int
    components: tuple[int, ...] = ()
    enterprise: Optional[str] = None

    def __post_init__(self) -> None:
        if self.tag_id <= 0:
            raise TraceError(f"tag_id must be positive, got {self.tag_id}")
        if self.tag_type not in TAG_TYPE_NAMES:
            raise TraceError(f"tag_type must be 0, 1 or 2, got {self.tag_type}")


class TraceRegistry:
    """Corporation-wide map of tag_id to trace record.

    Registration is idempotent for identical records; a second record with
    the same id but different content raises DuplicateTagId because two
    enterprises disagree about the same physical object.
    """

    def __init__(self) -> None:
        self._records: dict[int, TraceRecord] = {}

    def register(self, record: TraceRecord) -> None:
        prior = self._records.get(record.tag_id)
        if prior is not None and prior != record:
            raise DuplicateTagId(
                f"tag {record.tag_id} already registered with different content")
        self._records[record.tag_id] = record

    def get(self, tag_id: int) -> Optional[TraceRecord]:
        return self._records.get(tag_id)

    def __contains__(self, tag_id: int) -> bool:
        return tag_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def tag_ids(self) -> list[int]:
        return sorted(self._records)


@dataclass(frozen=True)
class UnresolvedRef:
    """A component edge that could not be expanded."""

    tag_id: int
    reason: str  # "unknown" | "depth"
    path: tuple[int, ...]  # ids from the root down to and including this one


@dataclass(frozen=True)
class TraceNode:
    record: TraceRecord
    path: tuple[int, ...]  # ids from the root down to and including this one
    children: tuple[Union["TraceNode", UnresolvedRef], ...] = ()

    @property
    def depth(self) -> int:
        return len(self.path) - 1

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class TraceTree:
    root: TraceNode

    def walk(self) -> Iterator[TraceNode]:
        """Resolved nodes, depth-first, parents before children."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in reversed(node.children)
                         if isinstance(c, TraceNode))

    def unresolved(self) -> list[UnresolvedRef]:
        out = []
        for node in self.walk():
            out.extend(c for c in node.children if isinstance(c, UnresolvedRef))
        return out

    def leaves(self) -> list[TraceNode]:
        return [n for n in self.walk() if n.is_leaf]

    def stats(self) -> dict:
        nodes = list(self.walk())
        unresolved = self.unresolved()
        return {
            "nodes": len(nodes),
            "leaves": len(self.leaves()),
            "unresolved": len(unresolved),
            "max_depth": max(n.depth for n in nodes),
        }


def trace(registry: TraceRegistry, tag_id: int,
          max_depth: int = DEFAULT_MAX_DEPTH) -> TraceTree:
    """Expand tag_id into its component tree.

    max_depth counts edges from the root; component edges that would pass
    it become UnresolvedRef("depth"). The root itself must be registered.
    """
    root_record = registry.get(tag_id)
    if root_record is None:
        raise UnknownTag(f"tag {tag_id} is not registered")

    def expand(record: TraceRecord, path: tuple[int, ...]) -> TraceNode:
        children: list[Union[TraceNode, UnresolvedRef]] = []
        for comp_id in record.components:
            child_path = path + (comp_id,)
            if comp_id in path:
                raise CycleDetected(child_path)
            if len(child_path) - 1 > max_depth:
                children.append(UnresolvedRef(comp_id, "depth", child_path))
                continue
            comp = registry.get(comp_id)
            if comp is None:
                children.append(UnresolvedRef(comp_id, "unknown", child_path))
                continue
            children.append(expand(comp, child_path))
        return TraceNode(record=record, path=path, children=tuple(children))

    return TraceTree(root=expand(root_record, (tag_id,)))


@dataclass(frozen=True)
class OriginRow:
    """One terminal occurrence in a trace: where a branch bottoms out."""

    tag_id: int
    tag_type: int
    path: tuple[int, ...]

    @property
    def path_length(self) -> int:
        return len(self.path)


def origin_report(tree: TraceTree) -> list[OriginRow]:
    """Every resolved leaf occurrence of the tree, once per path it is
    reached by, sorted by (tag_id, path length). Unresolved markers are
    not origins, so rows + unresolved markers = terminal branches."""
    rows = [OriginRow(tag_id=n.record.tag_id, tag_type=n.record.tag_type, path=n.path)
            for n in tree.walk() if n.is_leaf]
    rows.sort(key=lambda r: (r.tag_id, r.path_length, r.path))
    return rows


def _node_to_dict(node: Union[TraceNode, UnresolvedRef]) -> dict:
    if isinstance(node, UnresolvedRef):
        return {"tag_id": node.tag_id, "unresolved": node.reason}
    return {
        "tag_id": node.record.tag_id,
        "tag_type": node.record.tag_type,
        "enterprise": node.record.enterprise,
        "components": [_node_to_dict(c) for c in node.children],
    }


def tree_to_dict(tree: TraceTree) -> dict:
    return _node_to_dict(tree.root)


def tree_to_json(tree: TraceTree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True, separators=(",", ":"))


def render_tree(tree: TraceTree) -> str:
    """Indented text form, one node per line, '?' marking unresolved refs."""
    lines: list[str] = []

    def visit(node: Union[TraceNode, UnresolvedRef], depth: int) -> None:
        pad = "  " * depth
        if isinstance(node, UnresolvedRef):
            lines.append(f"{pad}? {node.tag_id} ({node.reason})")
            return
        kind = TAG_TYPE_NAMES[node.record.tag_type]
        suffix = f" @{node.record.enterprise}" if node.record.enterprise else ""
        lines.append(f"{pad}{node.record.tag_id} {kind}{suffix}")
        for child in node.children:
            visit(child, depth + 1)

    visit(tree.root, 0)
    return "\n".join(lines)
