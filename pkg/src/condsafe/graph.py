"""SCC decomposition of the control-flow multigraph and the component DAG."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .model import Location, Program, Transition


@dataclass(frozen=True)
class Component:
    """An SCC of the control-flow graph with its internal transitions.

    A trivial component (one location, no self-loop) has an empty
    transition set.
    """

    id: int
    locations: tuple[Location, ...]
    transitions: tuple[Transition, ...]

    def contains_location(self, loc: Location) -> bool:
        return loc in self.locations

    def contains_transition(self, t: Transition) -> bool:
        return any(s.id == t.id for s in self.transitions)

    def with_transitions(self, transitions: Iterable[Transition]) -> "Component":
        return Component(self.id, self.locations, tuple(transitions))


@dataclass(frozen=True)
class ComponentDag:
    """Condensation of the CFG: nodes are components, edges are the
    cross-component transitions (the entry transitions of their target)."""

    components: tuple[Component, ...]
    edges: tuple[tuple[int, int, Transition], ...]
    _loc_index: dict[Location, int]

    def component_of(self, loc: Location) -> Component:
        return self.components[self._loc_index[loc]]


def decompose(program: Program) -> ComponentDag:
    """Tarjan SCC partition; components are ordered by the first
    appearance of their locations in the program for reproducibility."""
    order = {loc: i for i, loc in enumerate(program.locations)}
    succs: dict[Location, list[Location]] = {loc: [] for loc in program.locations}
    for t in program.transitions:
        succs[t.src].append(t.dst)

    index: dict[Location, int] = {}
    lowlink: dict[Location, int] = {}
    on_stack: set[Location] = set()
    stack: list[Location] = []
    counter = 0
    sccs: list[list[Location]] = []

    for root in program.locations:
        if root in index:
            continue
        # Iterative DFS; (node, iterator position) frames.
        work = [(root, 0)]
        while work:
            node, child_pos = work[-1]
            if child_pos == 0:
                index[node] = lowlink[node] = counter
                counter += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            children = succs[node]
            while child_pos < len(children):
                child = children[child_pos]
                child_pos += 1
                if child not in index:
                    work[-1] = (node, child_pos)
                    work.append((child, 0))
                    advanced = True
                    break
                if child in on_stack:
                    lowlink[node] = min(lowlink[node], index[child])
            if advanced:
                continue
            work.pop()
            if lowlink[node] == index[node]:
                scc = []
                while True:
                    member = stack.pop()
                    on_stack.remove(member)
                    scc.append(member)
                    if member == node:
                        break
                sccs.append(scc)
            if work:
                parent, _ = work[-1]
                lowlink[parent] = min(lowlink[parent], lowlink[node])

    sccs.sort(key=lambda locs: min(order[l] for l in locs))
    loc_index: dict[Location, int] = {}
    components: list[Component] = []
    for cid, locs in enumerate(sccs):
        members = tuple(sorted(locs, key=order.get))
        for loc in members:
            loc_index[loc] = cid
        internal = tuple(
            t for t in program.transitions if loc_index.get(t.src) == cid and loc_index.get(t.dst) == cid
        )
        components.append(Component(cid, members, internal))
    edges = tuple(
        (loc_index[t.src], loc_index[t.dst], t)
        for t in program.transitions
        if loc_index[t.src] != loc_index[t.dst]
    )
    return ComponentDag(tuple(components), edges, loc_index)


def entries(component: Component, program: Program) -> list[Transition]:
    """Transitions from outside the component into it."""
    return [
        t
        for t in program.transitions
        if component.contains_location(t.dst) and not component.contains_transition(t)
    ]


def is_exit(t: Transition, component: Component) -> bool:
    """True iff `t` leaves the component: src inside, t itself not internal."""
    return component.contains_location(t.src) and not component.contains_transition(t)


def dominates(blockers: Iterable[Transition], t: Transition, program: Program) -> bool:
    """True iff every CFG path from the start location through `t` uses
    some transition in `blockers` (checked by deleting them)."""
    blocked = {b.id for b in blockers}
    if t.id in blocked:
        return True
    seen = {program.init_location}
    frontier = [program.init_location]
    while frontier:
        loc = frontier.pop()
        if loc == t.src:
            return False
        for edge in program.outgoing(loc):
            if edge.id in blocked or edge.dst in seen:
                continue
            seen.add(edge.dst)
            frontier.append(edge.dst)
    return True


def to_dot(dag: ComponentDag) -> str:
    """DOT rendering of the component DAG (for --dump-dag)."""
    lines = ["digraph components {"]
    for comp in dag.components:
        label = ",".join(comp.locations)
        kind = "trivial" if not comp.transitions else f"{len(comp.transitions)} internal"
        lines.append(f'  c{comp.id} [label="C{comp.id} {{{label}}}\\n{kind}"];')
    for src, dst, t in dag.edges:
        lines.append(f'  c{src} -> c{dst} [label="{t.id}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
