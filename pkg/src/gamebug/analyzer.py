"""Stage 2 statistics: per-scene completion rates and pain-point flags."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .graph import LogicGraph
from .summarizer import SessionSummary

LOW = "LOW"
DROP = "DROP"
HIGH = "HIGH"


class EmptyCohortError(ValueError):
    pass


@dataclass(frozen=True)
class SceneStats:
    scene_id: str
    players_completed: int
    players_total: int
    completion_steps: tuple[int, ...] = ()
    attempt_steps: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.players_completed <= self.players_total:
            raise ValueError(f"{self.scene_id}: completed count out of range")

    @property
    def completion_rate(self) -> float:
        return self.players_completed / self.players_total if self.players_total else 0.0

    def to_dict(self) -> dict:
        return {
            "scene": self.scene_id,
            "players_completed": self.players_completed,
            "players_total": self.players_total,
            "completion_rate": self.completion_rate,
            "completion_steps": list(self.completion_steps),
            "attempt_steps": self.attempt_steps,
        }


@dataclass(frozen=True)
class FlagConfig:
    tau_low: float = 0.20
    drop_ratio: float = 0.5
    tau_high: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.tau_low < 1:
            raise ValueError("tau_low must be in (0, 1)")
        if not 0 < self.drop_ratio < 1:
            raise ValueError("drop_ratio must be in (0, 1)")
        if self.tau_high is not None and not 0 < self.tau_high <= 1:
            raise ValueError("tau_high must be in (0, 1]")


@dataclass(frozen=True)
class PainPointFlag:
    scene_id: str
    reasons: tuple[str, ...]
    evidence: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"scene": self.scene_id, "reasons": list(self.reasons), "evidence": self.evidence}


def completion_table(summaries: Sequence[SessionSummary], graph: LogicGraph) -> list[SceneStats]:
    """One row per scene, scenario order then topological order within a scenario."""
    if not summaries:
        raise EmptyCohortError("empty cohort")
    completed_by: dict[str, list[int]] = {sid: [] for sid in graph.scene_ids}
    attempts = dict.fromkeys(graph.scene_ids, 0)
    for summary in summaries:
        first: dict[str, int] = {}
        for sid, step in summary.completed:
            if sid not in graph:
                raise KeyError(f"unknown scene id {sid} in session {summary.session_id}")
            first.setdefault(sid, step)
        for sid, step in first.items():
            completed_by[sid].append(step)
        for s in summary.steps:
            for sid in s.mapped_scenes:
                if sid not in graph:
                    raise KeyError(f"unknown scene id {sid} in session {summary.session_id}")
                attempts[sid] += 1
    n = len(summaries)
    return [
        SceneStats(sid, len(completed_by[sid]), n, tuple(completed_by[sid]), attempts[sid])
        for sid in graph.scene_order()
    ]


def flag_pain_points(
    stats: Sequence[SceneStats], graph: LogicGraph, config: FlagConfig | None = None
) -> list[PainPointFlag]:
    config = config or FlagConfig()
    rates = {s.scene_id: s.completion_rate for s in stats}
    missing = set(graph.scene_ids) - set(rates)
    if missing:
        raise ValueError(f"stats missing scenes: {', '.join(sorted(missing))}")
    flags = []
    for row in stats:
        sid, rate = row.scene_id, rates[row.scene_id]
        reasons: list[str] = []
        evidence: dict = {"rate": rate}
        if rate < config.tau_low:
            reasons.append(LOW)
            evidence["tau_low"] = config.tau_low
        scenario = graph.scene(sid).scenario_id
        preds = sorted(
            {t for g in graph.prerequisites(sid) for t in g.tails if graph.scene(t).scenario_id == scenario}
        )
        if preds:
            best = max(preds, key=lambda t: (rates[t], t))
            ref = rates[best]
            if rate < config.drop_ratio * ref:
                reasons.append(DROP)
                evidence.update(predecessor=best, predecessor_rate=ref, drop_ratio=config.drop_ratio)
        if config.tau_high is not None and rate > config.tau_high:
            reasons.append(HIGH)
            evidence["tau_high"] = config.tau_high
        if reasons:
            flags.append(PainPointFlag(sid, tuple(reasons), evidence))
    return flags


@dataclass(frozen=True)
class AttemptProfile:
    session_id: str
    attempts: int
    successes: int

    @property
    def failures(self) -> int:
        return self.attempts - self.successes


def attempt_profile(summaries: Sequence[SessionSummary], scene_id: str, graph: LogicGraph) -> list[AttemptProfile]:
    """Per player: steps mapped to the scene and how many of them succeeded."""
    graph.scene(scene_id)
    out = []
    for summary in summaries:
        mapped = [s for s in summary.steps if scene_id in s.mapped_scenes]
        out.append(AttemptProfile(summary.session_id, len(mapped), sum(s.success for s in mapped)))
    return out


def stats_document(stats: Sequence[SceneStats], flags: Sequence[PainPointFlag], graph: LogicGraph) -> dict:
    by_scene = {f.scene_id: f for f in flags}
    rows = []
    for s in stats:
        scene = graph.scene(s.scene_id)
        row = {"scenario": scene.scenario_id, "title": scene.title, **s.to_dict()}
        row["flags"] = list(by_scene[s.scene_id].reasons) if s.scene_id in by_scene else []
        rows.append(row)
    return {
        "cohort_size": stats[0].players_total if stats else 0,
        "scenes": rows,
        "flags": [f.to_dict() for f in flags],
    }
