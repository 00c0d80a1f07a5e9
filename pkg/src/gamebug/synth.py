"""Synthetic play sessions with exact ground-truth summaries."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Sequence

from .graph import LogicGraph
from .ingest import CleanedLog, GameStep, render_inventory, segment
from .summarizer import NA, SectionReply, SessionSummary, StepSummary, render_relaxed

NPCS = ("Mrs. Thompson", "Mad Hatter", "Chef Maria", "Merlin", "James Moriarty")
INTRO = (
    "-= Home =-\n\n"
    "You wake up in your bedroom with a strange sense of deja vu.\n"
    "The door to the residential street is on your west."
)
FAIL_TEMPLATES = (
    "Player tries to {goal} but fails.",
    "Player asks around about how to {goal} but learns nothing new.",
    "Player searches for a way to {goal} but does not find anything.",
)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlayerPolicy:
    success: Mapping[str, float] = field(default_factory=dict)
    wander: float = 0.0
    seed: int = 0
    default_success: float = 0.5

    def __post_init__(self) -> None:
        for p in [*self.success.values(), self.wander, self.default_success]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    def p(self, scene_id: str) -> float:
        return self.success.get(scene_id, self.default_success)


def _goal(title: str) -> str:
    return f"complete '{title}'"


def generate_session(
    graph: LogicGraph,
    policy: PlayerPolicy,
    rounds: int = 1,
    round_length: int = 30,
    session_id: str = "sim",
) -> tuple[CleanedLog, SessionSummary]:
    if rounds < 1 or round_length < 1:
        raise ValueError("rounds and round_length must be >= 1")
    rng = random.Random(policy.seed)
    needs: dict[str, list[frozenset[str]]] = {sid: [] for sid in graph.scene_ids}
    for g in graph.groups:
        needs[g.head].append(g.tails)
    order = graph.scene_order()
    locations = {sc.id: sc.title.lower() for sc in graph.scenarios}

    steps: list[GameStep] = []
    truth: list[StepSummary] = []
    completed: list[tuple[str, int]] = []
    done: set[str] = set()
    resets: list[int] = []
    total = 0
    for rnd in range(rounds):
        inventory: list[str] = []
        for i in range(1, round_length + 1):
            if graph.terminal in done:
                break
            total += 1
            open_scenes = [s for s in order if s not in done and all(t & done for t in needs[s])]
            if not open_scenes and policy.wander == 0:
                raise SimulationError(f"{session_id}: no scene can be attempted at step {total}")
            npc = rng.choice(NPCS)
            speak = rng.random() < 0.5
            if not open_scenes or rng.random() < policy.wander:
                location = "village square"
                step_kwargs = dict(
                    player_action=None if speak else "look around",
                    player_words="Is anything strange happening today?" if speak else None,
                    world_feedback="You look around the village square.",
                )
                npcs = ((npc, "Nothing out of the ordinary, I'm afraid."),) if speak else ()
                summary = StepSummary(i, total, not speak, "Player looks around without a clear goal.", True)
            else:
                sid = rng.choice(open_scenes)
                scene = graph.scene(sid)
                location = locations[scene.scenario_id]
                ok = rng.random() < policy.p(sid)
                goal = _goal(scene.title)
                if ok:
                    inventory.append(f"{sid.lower()} token")
                    synopsis = f"Player manages to {goal}."
                    world = f"You succeed: {scene.title}."
                else:
                    synopsis = rng.choice(FAIL_TEMPLATES).format(goal=goal)
                    world = "Nothing seems to change."
                step_kwargs = dict(
                    player_action=None if speak else f"try to {goal}",
                    player_words=f"Can you help me {goal}?" if speak else None,
                    world_feedback=world,
                )
                npcs = ((npc, "Yes, of course." if ok else "I can't help you with that."),) if speak else ()
                newly = ((sid, total),) if ok else ()
                if ok:
                    done.add(sid)
                    completed.append((sid, total))
                summary = StepSummary(i, total, not speak, synopsis, ok, (sid,), ok, newly)
            steps.append(
                GameStep(
                    step_in_round=i,
                    step_total=total,
                    inventory=tuple(inventory),
                    location=location,
                    npc_utterances=npcs,
                    **step_kwargs,
                )
            )
            truth.append(summary)
        if graph.terminal in done:
            break
        if rnd < rounds - 1:
            resets.append(total)
    cleaned = CleanedLog(session_id, INTRO, tuple(steps), tuple(resets))
    sources = {k: NA for k in graph.tracked_sources}
    return cleaned, SessionSummary(session_id, truth, completed, sources)


def generate_cohort(
    graph: LogicGraph,
    size: int,
    seed: int = 0,
    rounds: int = 1,
    round_length: int = 30,
    success: Mapping[str, float] | None = None,
    wander: float = 0.1,
    default_success: float = 0.5,
) -> list[tuple[CleanedLog, SessionSummary]]:
    out = []
    for k in range(size):
        policy = PlayerPolicy(dict(success or {}), wander, seed * 100003 + k, default_success)
        out.append(generate_session(graph, policy, rounds, round_length, f"player{k + 1:03d}"))
    return out


def render_raw(cleaned: CleanedLog, round_length: int = 30) -> str:
    """Render a cleaned log back into the engine's timestamped raw format."""
    clock = datetime(2023, 7, 13, 16, 0, 0)

    def line(msg: str) -> str:
        nonlocal clock
        clock += timedelta(milliseconds=1500)
        stamp = clock.strftime("%Y-%m-%d %H:%M:%S") + f",{clock.microsecond // 1000:03d}"
        return f"{stamp} MainThread INFO {msg}"

    out = [
        line("LLM:simulated"),
        line(f"Reset step?:{round_length}"),
        line("<Game reset> 0"),
        line("<location> home"),
        line("<Game> -= Welcome =-\n\n-=GAME START=-\n\n" + cleaned.intro),
    ]
    resets = set(cleaned.reset_markers)
    for step in cleaned.steps:
        out.append(line(f"<Game step> {step.step_in_round}/{step.step_total}"))
        out.append(line(f"<Player> {step.player_action or step.player_words}"))
        if step.world_feedback is not None:
            out.append(line(f"<TextWorld> {step.world_feedback}"))
        out.append(
            line(
                f"<Player_processed>[action] {step.player_action or 'None'}. "
                f"[words] {step.player_words or 'None'}.{step.words_gap}"
                f"[inventory]={render_inventory(step.inventory)}"
            )
        )
        game = f"<Game> location = {step.location}    inventory={render_inventory(step.inventory)}"
        for name, said in step.npc_utterances:
            game += f"    [id]{name}    [words]{said}"
        if step.extra_feedback is not None:
            game += f"    feedback: {step.extra_feedback}"
        game += f"        Scene: {step.world_feedback or ''}"
        out.append(line(game))
        if step.step_total in resets:
            out.append(line(f"<Game reset> {step.step_total}"))
            out.append(line("<location> home"))
            out.append(line("<Game> -= Home =-\n\nYou wake up again."))
    return "\n".join(out) + "\n"


# --- scripted replies ---------------------------------------------------------------


def section_replies(
    graph: LogicGraph, cleaned: CleanedLog, truth: SessionSummary, window: int = 2
) -> list[str]:
    """The replies a perfect summarizer would give, one per section."""
    by_total = {s.step_total: s for s in truth.steps}
    sources = tuple(truth.sources.get(k, NA) for k in graph.tracked_sources)
    so_far: list[tuple[str, int]] = []
    replies = []
    for section in segment(cleaned, window):
        records = tuple(by_total[s.step_total] for s in section.steps)
        for r in records:
            so_far.extend(r.newly_completed)
        replies.append(render_relaxed(SectionReply(records, sources, tuple(so_far))))
    return replies


def perfect_grouping(texts: Sequence[str]) -> str:
    """Group identical synopses; labels are the shared text."""
    groups: dict[str, list[int]] = {}
    for i, t in enumerate(texts, start=1):
        groups.setdefault(t, []).append(i)
    return json.dumps({"clusters": [{"label": t, "members": idx} for t, idx in groups.items()]})


def perfect_script(
    graph: LogicGraph,
    cohort: Sequence[tuple[CleanedLog, SessionSummary]],
    window: int = 2,
    flag_config=None,
) -> list[str]:
    """Scripted gateway replies for a whole pipeline run over ``cohort``.

    Sessions are replayed in session-id order, followed by one grouping reply
    per flagged scene that has synopses.
    """
    from .analyzer import completion_table, flag_pain_points

    ordered = sorted(cohort, key=lambda pair: pair[0].session_id)
    replies: list[str] = []
    for cleaned, truth in ordered:
        replies += section_replies(graph, cleaned, truth, window)
    truths = [t for _, t in ordered]
    flags = flag_pain_points(completion_table(truths, graph), graph, flag_config)
    for flag in flags:
        texts = [s.synopsis for t in truths for s in t.steps if flag.scene_id in s.mapped_scenes]
        if texts:
            replies.append(perfect_grouping(texts))
    return replies
