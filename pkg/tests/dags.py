"""Small-graph builders shared by the legality tests."""

from __future__ import annotations

import itertools
import random
from typing import Iterator

from gamebug.graph import LogicGraph, PrereqGroup, Scenario, Scene


def make_graph(n: int, groups: list[tuple[int, list[int]]], scenarios: int = 1) -> LogicGraph:
    """Scenes S0..S{n-1}; ``groups`` holds (head, tails) by index."""
    ids = [f"S{i}" for i in range(n)]
    scen = [f"P{i % scenarios}" for i in range(n)]
    scenes = tuple(Scene(sid, f"Scene {sid}", scen[i]) for i, sid in enumerate(ids))
    scenario_objs = tuple(
        Scenario(p, f"Plot {p}", tuple(s for s, sc in zip(ids, scen) if sc == p))
        for p in dict.fromkeys(scen)
    )
    return LogicGraph(
        scenes=scenes,
        scenarios=scenario_objs,
        groups=tuple(PrereqGroup(ids[h], frozenset(ids[t] for t in tails)) for h, tails in groups),
        tracked_sources=("fact",),
        terminal=ids[-1],
    )


def _set_partitions(items: list[int]) -> Iterator[list[list[int]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def all_small_dags(max_n: int = 4) -> Iterator[LogicGraph]:
    """Every graph whose scenes are topologically labelled S0..S{n-1}.

    For each head, every subset of earlier scenes as in-edges and every way of
    splitting those edges into OR-groups.
    """
    for n in range(1, max_n + 1):
        per_head = []
        for head in range(n):
            options = []
            for k in range(head + 1):
                for preds in itertools.combinations(range(head), k):
                    for part in _set_partitions(list(preds)):
                        options.append([(head, g) for g in part])
            per_head.append(options)
        for choice in itertools.product(*per_head):
            yield make_graph(n, [g for head_groups in choice for g in head_groups])


def random_dag(n: int, rng: random.Random, scenarios: int = 1) -> LogicGraph:
    groups = []
    for head in range(1, n):
        for _ in range(rng.randint(0, 2)):
            tails = rng.sample(range(head), rng.randint(1, min(3, head)))
            groups.append((head, tails))
    return make_graph(n, groups, scenarios)


def random_sequence(graph: LogicGraph, rng: random.Random, max_len: int = 6) -> list[tuple[str, int]]:
    """Half the time a legal walk, otherwise a perturbed or arbitrary sequence."""
    ids = list(graph.scene_ids)
    length = rng.randint(0, max_len)
    if rng.random() < 0.5:
        done: set[str] = set()
        seq = []
        step = 0
        for _ in range(length):
            ready = [
                s for s in ids
                if s not in done and all(g.tails & done for g in graph.groups if g.head == s)
            ]
            if not ready:
                break
            s = rng.choice(ready)
            step += rng.randint(0, 2)
            seq.append((s, step))
            done.add(s)
        if seq and rng.random() < 0.5:
            i = rng.randrange(len(seq))
            seq[i] = (rng.choice(ids), seq[i][1] + rng.choice([-1, 0, 0, 1]))
        return seq
    return [(rng.choice(ids), rng.randint(0, 4)) for _ in range(length)]
