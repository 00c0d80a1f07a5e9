"""Designer-authored game logic graph: scenarios, scenes and prerequisite groups.

A scene's prerequisites are a list of groups.  Every group must be satisfied,
and a group is satisfied by completing any one of its tails.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence


class GraphSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class GraphError(ValueError):
    """A graph that parses but violates a structural invariant."""


@dataclass(frozen=True)
class Scene:
    id: str
    title: str
    scenario_id: str
    unlocks: str | None = None


@dataclass(frozen=True)
class Scenario:
    id: str
    title: str
    scene_ids: tuple[str, ...]


@dataclass(frozen=True)
class PrereqGroup:
    head: str
    tails: frozenset[str]

    def label(self) -> str:
        return "|".join(sorted(self.tails))


class Violation(NamedTuple):
    position: int
    scene: str
    reason: str
    group: PrereqGroup | None = None


class Legality(NamedTuple):
    legal: bool
    violation: Violation | None = None

    def __bool__(self) -> bool:
        return self.legal


@dataclass(frozen=True)
class LogicGraph:
    scenes: tuple[Scene, ...]
    scenarios: tuple[Scenario, ...]
    groups: tuple[PrereqGroup, ...]
    tracked_sources: tuple[str, ...]
    terminal: str
    _index: Mapping[str, Scene] = field(init=False, repr=False, compare=False)
    _by_head: Mapping[str, tuple[PrereqGroup, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {s.id: s for s in self.scenes})
        by_head: dict[str, list[PrereqGroup]] = {}
        for g in self.groups:
            by_head.setdefault(g.head, []).append(g)
        object.__setattr__(self, "_by_head", {h: tuple(gs) for h, gs in by_head.items()})
        self._validate()

    def _validate(self) -> None:
        ids = [s.id for s in self.scenes]
        seen: set[str] = set()
        for sid in ids:
            if not sid or any(ch.isspace() for ch in sid):
                raise GraphError(f"invalid scene id {sid!r}")
            if sid in seen:
                raise GraphError(f"duplicate scene id {sid}")
            seen.add(sid)
        scenario_ids = [sc.id for sc in self.scenarios]
        if len(set(scenario_ids)) != len(scenario_ids):
            raise GraphError("duplicate scenario id")
        scenario_set = set(scenario_ids)
        for scene in self.scenes:
            if not scene.title:
                raise GraphError(f"scene {scene.id} has an empty title")
            if scene.scenario_id not in scenario_set:
                raise GraphError(
                    f"scene {scene.id} refers to undeclared scenario {scene.scenario_id}"
                )
        for sc in self.scenarios:
            if not sc.scene_ids:
                raise GraphError(f"scenario {sc.id} has no scenes")
            for sid in sc.scene_ids:
                if sid not in self._index or self._index[sid].scenario_id != sc.id:
                    raise GraphError(f"scenario {sc.id} lists scene {sid} it does not own")
        members = sum(len(sc.scene_ids) for sc in self.scenarios)
        if members != len(self.scenes):
            raise GraphError("every scene must belong to exactly one scenario")
        for g in self.groups:
            if g.head not in self._index:
                raise GraphError(f"dangling reference: unknown scene {g.head}")
            if not g.tails:
                raise GraphError(f"empty prerequisite group for {g.head}")
            for t in sorted(g.tails):
                if t not in self._index:
                    raise GraphError(f"dangling reference: unknown scene {t}")
            if g.head in g.tails:
                raise GraphError(f"cycle: {g.head} requires itself")
        if self.terminal not in self._index:
            raise GraphError(f"terminal scene {self.terminal} is not declared")
        if len(set(self.tracked_sources)) != len(self.tracked_sources):
            raise GraphError("duplicate tracked source")
        # raises on cycles
        self.topological_order()

    def __contains__(self, scene_id: object) -> bool:
        return scene_id in self._index

    def scene(self, scene_id: str) -> Scene:
        try:
            return self._index[scene_id]
        except KeyError:
            raise KeyError(f"unknown scene id {scene_id}") from None

    def scenario(self, scenario_id: str) -> Scenario:
        for sc in self.scenarios:
            if sc.id == scenario_id:
                return sc
        raise KeyError(f"unknown scenario id {scenario_id}")

    @property
    def scene_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.scenes)

    def prerequisites(self, scene_id: str) -> list[PrereqGroup]:
        self.scene(scene_id)
        return list(self._by_head.get(scene_id, ()))

    def roots(self) -> list[str]:
        heads = {g.head for g in self.groups}
        return [s.id for s in self.scenes if s.id not in heads]

    def edges(self) -> list[tuple[str, str]]:
        """All (tail, head) pairs, in group order."""
        return [(t, g.head) for g in self.groups for t in sorted(g.tails)]

    def topological_order(self, within: Iterable[str] | None = None) -> list[str]:
        """Kahn's algorithm; ties broken by declaration order.

        With ``within``, the order of that subset under the induced edges.
        """
        keep = set(self.scene_ids if within is None else within)
        order_key = {sid: i for i, sid in enumerate(self.scene_ids)}
        indeg = {sid: 0 for sid in keep}
        succ: dict[str, set[str]] = {sid: set() for sid in keep}
        for tail, head in self.edges():
            if tail in keep and head in keep and head not in succ[tail]:
                succ[tail].add(head)
                indeg[head] += 1
        ready = sorted((s for s in keep if indeg[s] == 0), key=order_key.__getitem__)
        out: list[str] = []
        while ready:
            node = ready.pop(0)
            out.append(node)
            for nxt in succ[node]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
            ready.sort(key=order_key.__getitem__)
        if len(out) != len(keep):
            stuck = sorted(s for s in keep if s not in out)
            raise GraphError(f"cycle among scenes {', '.join(stuck)}")
        return out

    def scene_order(self) -> list[str]:
        """Scenario declaration order, topological within each scenario."""
        out: list[str] = []
        for sc in self.scenarios:
            out.extend(self.topological_order(sc.scene_ids))
        return out

    def is_completion_legal(self, sequence: Sequence[tuple[str, int]]) -> Legality:
        return is_completion_legal(self, sequence)


def is_completion_legal(graph: LogicGraph, sequence: Sequence[tuple[str, int]]) -> Legality:
    """Check a completed-scene sequence against the graph.

    Legal iff step numbers never decrease, no scene repeats, and each scene has
    every prerequisite group satisfied by a scene earlier in the sequence.
    """
    for sid, _ in sequence:
        if sid not in graph:
            raise KeyError(f"unknown scene id {sid}")
    groups_by_head = graph._by_head

    done: set[str] = set()
    last_step: int | None = None
    for pos, (sid, step) in enumerate(sequence):
        if last_step is not None and step < last_step:
            return Legality(
                False, Violation(pos, sid, f"{sid} at step {step} after step {last_step}")
            )
        last_step = step
        if sid in done:
            return Legality(False, Violation(pos, sid, f"{sid} completed twice"))
        for g in groups_by_head.get(sid, ()):
            if not (g.tails & done):
                return Legality(
                    False, Violation(pos, sid, f"{sid} before prerequisite {g.label()}", g)
                )
        done.add(sid)
    return Legality(True)


# --- graph-spec text format -------------------------------------------------

_TOKEN = re.compile(r'\s*(?:(?P<str>"(?:[^"\\\n]|\\.)*")|(?P<arrow><-)|(?P<bar>\|)|(?P<word>[^\s"|]+))')


def _tokenize(line: str, lineno: int) -> list[tuple[str, str, int]]:
    toks: list[tuple[str, str, int]] = []
    pos = 0
    text = line.rstrip("\n")
    while pos < len(text):
        if text[pos:].strip() == "" or text[pos:].lstrip().startswith("#"):
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = len(text) - len(text[pos:].lstrip()) + 1
            raise GraphSyntaxError("unterminated string or bad token", lineno, col)
        kind = m.lastgroup or "word"
        col = m.start(kind) + 1
        value = m.group(kind)
        if kind == "str":
            value = re.sub(r"\\(.)", r"\1", value[1:-1])
        toks.append((kind, value, col))
        pos = m.end()
    return toks


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def parse_graph(text: str) -> LogicGraph:
    scenarios: list[tuple[str, str]] = []
    scenes: list[Scene] = []
    groups: list[PrereqGroup] = []
    sources: list[str] = []
    terminals: list[str] = []

    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _tokenize(line, lineno)
        if not toks:
            continue
        kind, keyword, col = toks[0]

        def expect(i: int, want: str, what: str) -> str:
            if i >= len(toks):
                end = len(line.rstrip()) + 1
                raise GraphSyntaxError(f"expected {what}", lineno, end)
            k, v, c = toks[i]
            if k != want:
                raise GraphSyntaxError(f"expected {what}, got {v!r}", lineno, c)
            return v

        def no_more(i: int) -> None:
            if i < len(toks):
                raise GraphSyntaxError(f"unexpected {toks[i][1]!r}", lineno, toks[i][2])

        if kind != "word":
            raise GraphSyntaxError(f"expected a keyword, got {keyword!r}", lineno, col)
        if keyword == "source":
            sources.append(expect(1, "str", "quoted fact name"))
            no_more(2)
        elif keyword == "scenario":
            sid = expect(1, "word", "scenario id")
            title = expect(2, "str", "quoted scenario title")
            no_more(3)
            scenarios.append((sid, title))
        elif keyword == "scene":
            sid = expect(1, "word", "scene id")
            title = expect(2, "str", "quoted scene title")
            if expect(3, "word", "'in'") != "in":
                raise GraphSyntaxError("expected 'in'", lineno, toks[3][2])
            scenario_id = expect(4, "word", "scenario id")
            unlocks = None
            i = 5
            if i < len(toks) and toks[i][:2] == ("word", "unlocks"):
                unlocks = expect(i + 1, "str", "quoted unlock text")
                i += 2
            if i < len(toks) and toks[i][:2] == ("word", "terminal"):
                terminals.append(sid)
                i += 1
            no_more(i)
            scenes.append(Scene(sid, title, scenario_id, unlocks))
        elif keyword == "require":
            head = expect(1, "word", "head scene id")
            expect(2, "arrow", "'<-'")
            tails = [expect(3, "word", "tail scene id")]
            i = 4
            while i < len(toks):
                expect(i, "bar", "'|'")
                tails.append(expect(i + 1, "word", "tail scene id"))
                i += 2
            groups.append(PrereqGroup(head, frozenset(tails)))
        else:
            raise GraphSyntaxError(f"unknown keyword {keyword!r}", lineno, col)

    if len(terminals) != 1:
        raise GraphError(f"exactly one terminal scene required, found {len(terminals)}")
    members: dict[str, list[str]] = {sid: [] for sid, _ in scenarios}
    for s in scenes:
        if s.scenario_id not in members:
            raise GraphError(f"scene {s.id} refers to undeclared scenario {s.scenario_id}")
        members[s.scenario_id].append(s.id)
    return LogicGraph(
        scenes=tuple(scenes),
        scenarios=tuple(Scenario(sid, title, tuple(members[sid])) for sid, title in scenarios),
        groups=tuple(groups),
        tracked_sources=tuple(sources),
        terminal=terminals[0],
    )


def render_graph(graph: LogicGraph) -> str:
    lines = [f"source {_quote(s)}" for s in graph.tracked_sources]
    lines += [f"scenario {sc.id} {_quote(sc.title)}" for sc in graph.scenarios]
    for s in graph.scenes:
        line = f"scene {s.id} {_quote(s.title)} in {s.scenario_id}"
        if s.unlocks is not None:
            line += f" unlocks {_quote(s.unlocks)}"
        if s.id == graph.terminal:
            line += " terminal"
        lines.append(line)
    lines += [f"require {g.head} <- {g.label()}" for g in graph.groups]
    return "\n".join(lines) + "\n"


def load_graph(path: str | Path) -> LogicGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def bundled_graph() -> LogicGraph:
    """The DejaBoom! graph shipped with the package."""
    from importlib.resources import files

    return parse_graph(files("gamebug.data").joinpath("dejaboom.graph").read_text("utf-8"))


def describe_graph(graph: LogicGraph) -> str:
    """Plain-text rendering used inside LLM prompts."""
    out = ["Scenarios and their scenes:"]
    for sc in graph.scenarios:
        out.append(f"- Scenario {sc.id}: {sc.title}")
        for sid in sc.scene_ids:
            s = graph.scene(sid)
            extra = f" (unlocks {s.unlocks})" if s.unlocks else ""
            goal = " [final goal]" if sid == graph.terminal else ""
            out.append(f"  - {sid}: {s.title}{extra}{goal}")
    out.append("Order of completion (HEAD <- TAILS; any one tail of a line is enough,")
    out.append("and every line for a head must be satisfied):")
    out.extend(f"- {g.head} <- {' | '.join(sorted(g.tails))}" for g in graph.groups)
    out.append("Tracked sources: " + ", ".join(graph.tracked_sources))
    return "\n".join(out)
