"""Independent reference implementations used to check the pipeline.

Nothing here imports from the rest of the package: graphs and summaries are
read through their public attributes only, so a bug in the code under test
cannot leak into the oracle.
"""

from __future__ import annotations

from typing import Any, Sequence

ENUMERATION_LIMIT = 12


def legal_plays(graph: Any) -> frozenset[tuple[str, ...]]:
    """Every order in which a player could finish scenes, including partial runs.

    Built by exhaustive play: from each state, try every unfinished scene whose
    requirement lines each name at least one finished scene.
    """
    scene_ids = list(graph.scene_ids)
    if len(scene_ids) > ENUMERATION_LIMIT:
        raise ValueError(f"graph has {len(scene_ids)} scenes; enumeration bound is {ENUMERATION_LIMIT}")
    lines: dict[str, list] = {sid: [] for sid in scene_ids}
    for g in graph.groups:
        lines[g.head].append(tuple(g.tails))

    plays: set[tuple[str, ...]] = set()

    def explore(play: tuple[str, ...]) -> None:
        plays.add(play)
        for sid in scene_ids:
            if sid in play:
                continue
            if all(any(t in play for t in tails) for tails in lines[sid]):
                explore(play + (sid,))

    explore(())
    return frozenset(plays)


def brute_force_legal(
    graph: Any,
    sequence: Sequence[tuple[str, int]],
    plays: frozenset[tuple[str, ...]] | None = None,
) -> bool:
    """True iff the clock never runs backwards and a player could finish the scenes in this order.

    With ``plays`` (a :func:`legal_plays` result for the same graph) the order is
    looked up among all possible plays; otherwise it is replayed directly.
    """
    known = set(graph.scene_ids)
    for sid, _ in sequence:
        if sid not in known:
            raise KeyError(f"unknown scene id {sid}")
    steps = [step for _, step in sequence]
    if any(b < a for a, b in zip(steps, steps[1:])):
        return False
    if plays is not None:
        return tuple(sid for sid, _ in sequence) in plays

    # replay one completion at a time
    finished: list[str] = []
    for sid, _ in sequence:
        if sid in finished:
            return False
        for g in graph.groups:
            if g.head == sid and not any(t in finished for t in g.tails):
                return False
        finished.append(sid)
    return True


def oracle_stats(ground_truths: Sequence[Any], scene_ids: Sequence[str]) -> dict[str, dict]:
    """Completion counts by direct tallying over sessions."""
    if not ground_truths:
        raise ValueError("need at least one session")
    n = len(ground_truths)
    table = {}
    for sid in scene_ids:
        steps = []
        for truth in ground_truths:
            hits = [step for scene, step in truth.completed if scene == sid]
            if hits:
                steps.append(hits[0])
        attempts = sum(1 for truth in ground_truths for s in truth.steps if sid in s.mapped_scenes)
        table[sid] = {
            "players_completed": len(steps),
            "players_total": n,
            "completion_rate": len(steps) / n,
            "completion_steps": steps,
            "attempt_steps": attempts,
        }
    return table
