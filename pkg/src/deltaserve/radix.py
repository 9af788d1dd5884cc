"""Radix trie over token sequences mapping prefixes to cached cell runs.

Nodes own a token segment plus the physical cell runs backing it (refcounts
held against the unified cache so the cells outlive the donor sequence).
Lookups walk the trie in O(matched tokens); saves commit only the cells past
the existing match; eviction sheds the leaf whose most recent touch is oldest
so long shared branches survive pressure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kvcache import Run, UnifiedKvCache, run_cells, slice_runs


class BudgetExceeded(RuntimeError):
    """Delta cells do not fit in the trie's share even after eviction."""


class RadixNode:
    __slots__ = ("segment", "runs", "donor", "children", "parent", "last_touch")

    def __init__(self, segment, runs, donor, parent, last_touch):
        self.segment: list[int] = segment
        self.runs: tuple[Run, ...] = tuple(runs)
        self.donor = donor
        self.children: dict[int, RadixNode] = {}
        self.parent: RadixNode | None = parent
        self.last_touch: int = last_touch

    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class PrefixMatch:
    length: int
    runs: list[Run] = field(default_factory=list)
    donor: int | None = None


def _common_len(a, b) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class RadixTrie:
    """Prefix cache over the unified KV cache, bounded to cell_budget cells."""

    def __init__(self, kv: UnifiedKvCache, cell_budget: int):
        self.kv = kv
        self.cell_budget = cell_budget
        self.root = RadixNode([], (), None, None, 0)
        self._clock = 0
        self._cells = 0
        self.evicted_cells_total = 0

    @property
    def total_cells(self) -> int:
        return self._cells

    def node_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += len(node.children)
            stack.extend(node.children.values())
        return count

    def _tick(self) -> int:
        self._clock += 1
        return self._clock

    # -- lookup -----------------------------------------------------------------

    def longest_prefix(self, tokens) -> PrefixMatch:
        """Longest cached prefix of tokens; touches every node on the path."""
        tick = self._tick()
        node = self.root
        i = 0
        match = PrefixMatch(0)
        while i < len(tokens):
            child = node.children.get(tokens[i])
            if child is None:
                break
            k = _common_len(child.segment, tokens[i:])
            child.last_touch = tick
            match.runs.extend(slice_runs(child.runs, 0, k))
            match.donor = child.donor
            i += k
            match.length = i
            if k < len(child.segment):
                break
            node = child
        return match

    # -- save -------------------------------------------------------------------

    def _split(self, node: RadixNode, at: int) -> RadixNode:
        """Split node's segment at offset `at`; returns the new upper node."""
        upper = RadixNode(
            node.segment[:at],
            slice_runs(node.runs, 0, at),
            node.donor,
            node.parent,
            node.last_touch,
        )
        node.segment = node.segment[at:]
        node.runs = tuple(slice_runs(node.runs, at, len(node.segment)))
        upper.children = {node.segment[0]: node}
        node.parent.children[upper.segment[0]] = upper
        node.parent = upper
        return upper

    def save(self, tokens, seq: int, n_past: int) -> int:
        """Commit the delta cells for tokens past the existing trie match.

        The path for the already-cached prefix is untouched (no recopy, no
        re-incref); a single new node holds the delta. Returns the number of
        cells committed (0 for a pure touch). Raises BudgetExceeded when the
        delta does not fit even after evicting unprotected leaves.
        """
        tick = self._tick()
        node = self.root
        i = 0
        protected = {self.root}
        while i < len(tokens):
            child = node.children.get(tokens[i])
            if child is None:
                break
            k = _common_len(child.segment, tokens[i:])
            child.last_touch = tick
            protected.add(child)
            i += k
            if k < len(child.segment):
                if i < len(tokens):
                    node = self._split(child, k)
                    protected.add(node)
                else:
                    node = child  # saved tokens end inside this segment; pure touch
                break
            node = child

        if i >= len(tokens):
            return 0

        delta = len(tokens) - i
        if self._cells + delta > self.cell_budget:
            self.evict(self._cells + delta - self.cell_budget, protected=protected)
            if self._cells + delta > self.cell_budget:
                raise BudgetExceeded(f"delta of {delta} cells does not fit")

        runs = self.kv.resolve_runs(seq, i, len(tokens))
        self.kv.incref_runs(runs)
        child = RadixNode(list(tokens[i:]), runs, seq, node, tick)
        node.children[tokens[i]] = child
        self._cells += delta
        return delta

    # -- eviction ----------------------------------------------------------------

    def _leaves(self, protected) -> list[RadixNode]:
        out = []
        stack = list(self.root.children.values())
        while stack:
            n = stack.pop()
            if n.is_leaf():
                if n not in protected:
                    out.append(n)
            else:
                stack.extend(n.children.values())
        return out

    def evict(self, needed: int, protected=None) -> int:
        """Remove least-recently-touched leaves until `needed` cells are
        released from the trie or no evictable leaf remains. Inner nodes
        become candidates only once their children are gone. Returns the
        number of cells released from the trie's share."""
        protected = protected or ()
        released = 0
        while released < needed:
            leaves = self._leaves(protected)
            if not leaves:
                break
            victim = min(leaves, key=lambda n: (n.last_touch, n.segment[0]))
            self.kv.decref_runs(victim.runs)
            released += len(victim.segment)
            self._cells -= len(victim.segment)
            victim.parent.children.pop(victim.segment[0])
        self.evicted_cells_total += released
        return released

    def clear(self) -> int:
        return self.evict(self._cells) if self._cells else 0

    # -- diagnostics ---------------------------------------------------------------

    def dump(self) -> list[dict]:
        """Flat node listing: (prefix length through node, cell count, last touch)."""
        rows = []

        def visit(node: RadixNode, depth_len: int):
            for child in node.children.values():
                end = depth_len + len(child.segment)
                rows.append(
                    {
                        "prefix_len": end,
                        "cells": run_cells(child.runs),
                        "last_touch": child.last_touch,
                        "donor": child.donor,
                    }
                )
                visit(child, end)

        visit(self.root, 0)
        rows.sort(key=lambda r: (r["prefix_len"], r["last_touch"]))
        return rows
