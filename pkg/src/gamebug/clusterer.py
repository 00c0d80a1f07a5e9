"""Stage 2 cause analysis: group the synopses mapped to one scene."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from .gateway import Gateway, GatewayError
from .graph import LogicGraph
from .summarizer import SessionSummary

log = logging.getLogger(__name__)

CLUSTER_SYSTEM_PROMPT = """\
You will receive numbered one-sentence summaries of what players did while
working on one scene of a text adventure game. Group summaries that describe
the same kind of experience. Every number must appear in exactly one group.
Reply with JSON only, in the form
{"clusters": [{"label": "<one sentence describing the shared experience>", "members": [1, 4]}]}
"""


class GroupingError(ValueError):
    pass


@dataclass(frozen=True)
class SynopsisItem:
    text: str
    session_id: str
    step_total: int
    success: bool

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("empty synopsis")

    def to_dict(self) -> dict:
        return {"text": self.text, "session": self.session_id, "step": self.step_total, "success": self.success}


@dataclass(frozen=True)
class SynopsisCluster:
    label: str
    members: tuple[SynopsisItem, ...]
    # left for a designer to record logic vs balance bug
    bug_note: str = ""

    def __post_init__(self) -> None:
        if not self.label.strip():
            raise ValueError("empty cluster label")
        if not self.members:
            raise ValueError("empty cluster")

    @property
    def size(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "size": self.size,
            "bug_note": self.bug_note,
            "members": [m.to_dict() for m in self.members],
        }


@dataclass
class ClusterResult:
    clusters: list[SynopsisCluster]
    degraded: bool = False
    errors: list[str] = field(default_factory=list)


@dataclass
class ClusterConfig:
    max_attempts: int = 2
    fallback: bool = True
    threshold: float = 0.6
    system_prompt: str = CLUSTER_SYSTEM_PROMPT
    temperature: float = 0.0
    max_tokens: int = 2048


def collect_synopses(
    summaries: Sequence[SessionSummary], scene_id: str, graph: LogicGraph
) -> list[SynopsisItem]:
    graph.scene(scene_id)
    return [
        SynopsisItem(s.synopsis, summary.session_id, s.step_total, s.success)
        for summary in summaries
        for s in summary.steps
        if scene_id in s.mapped_scenes
    ]


def grouping_prompt(items: Sequence[SynopsisItem], error_note: str | None = None) -> str:
    lines = [f"{i}. {item.text}" for i, item in enumerate(items, start=1)]
    text = "\n".join(lines)
    if error_note:
        text += f"\n\nYour previous grouping was rejected: {error_note}\nReply again in the required format."
    return text


def parse_grouping(text: str, n: int) -> list[tuple[str, list[int]]]:
    """Parse and validate an LLM grouping; it must partition 1..n."""
    body = text.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", body, re.S)
    if fence:
        body = fence.group(1)
    try:
        doc = json.loads(body)
    except ValueError:
        raise GroupingError("reply is not JSON") from None
    groups = doc.get("clusters") if isinstance(doc, dict) else doc
    if not isinstance(groups, list):
        raise GroupingError("reply lacks a 'clusters' list")
    out: list[tuple[str, list[int]]] = []
    seen: dict[int, int] = {}
    for g in groups:
        if not isinstance(g, dict):
            raise GroupingError("each cluster must be an object")
        label, members = g.get("label"), g.get("members")
        if not isinstance(label, str) or not label.strip():
            raise GroupingError("cluster without a label")
        if not isinstance(members, list) or not members:
            raise GroupingError(f"cluster {label!r} has no members")
        for m in members:
            if not isinstance(m, int) or isinstance(m, bool) or not 1 <= m <= n:
                raise GroupingError(f"index {m!r} out of range 1..{n}")
            seen[m] = seen.get(m, 0) + 1
        out.append((label.strip(), list(members)))
    dupes = sorted(i for i, c in seen.items() if c > 1)
    missing = sorted(set(range(1, n + 1)) - set(seen))
    if dupes or missing:
        parts = []
        if dupes:
            parts.append(f"indices used more than once: {dupes}")
        if missing:
            parts.append(f"indices never used: {missing}")
        raise GroupingError("; ".join(parts))
    return out


def _tokens(text: str) -> frozenset[str]:
    return frozenset(re.findall(r"[a-z0-9]+", text.lower()))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def fallback_clusters(items: Sequence[SynopsisItem], threshold: float = 0.6) -> list[SynopsisCluster]:
    """Exact-duplicate merge, then single-linkage on token Jaccard >= threshold.

    Single linkage makes the partition independent of input order.
    """
    texts = sorted({item.text for item in items})
    parent = list(range(len(texts)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    toks = [_tokens(t) for t in texts]
    for i in range(len(texts)):
        for j in range(i + 1, len(texts)):
            if jaccard(toks[i], toks[j]) >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    root_of = {t: find(i) for i, t in enumerate(texts)}
    groups: dict[int, list[SynopsisItem]] = {}
    for item in items:
        groups.setdefault(root_of[item.text], []).append(item)
    clusters = []
    for members in groups.values():
        label = min((m.text for m in members), key=lambda t: (-len(t), t))
        clusters.append(SynopsisCluster(label, tuple(members)))
    clusters.sort(key=lambda c: (-c.size, c.label))
    return clusters


def cluster_synopses(
    items: Sequence[SynopsisItem], gateway: Gateway | None, config: ClusterConfig | None = None
) -> ClusterResult:
    config = config or ClusterConfig()
    if not items:
        raise ValueError("no synopses to cluster")
    errors: list[str] = []
    note = None
    if gateway is not None:
        for _ in range(config.max_attempts):
            request = gateway.request(
                [("system", config.system_prompt), ("user", grouping_prompt(items, note))],
                temperature=config.temperature,
                max_tokens=config.max_tokens,
            )
            try:
                text = gateway.complete(request).text
            except GatewayError as exc:
                if not config.fallback:
                    raise
                errors.append(f"gateway: {exc}")
                break
            try:
                groups = parse_grouping(text, len(items))
            except GroupingError as exc:
                note = str(exc)
                errors.append(note)
                continue
            clusters = [SynopsisCluster(label, tuple(items[i - 1] for i in idx)) for label, idx in groups]
            return ClusterResult(clusters, False, errors)
    else:
        errors.append("no gateway configured")
    if not config.fallback:
        raise GroupingError(f"no valid grouping after {config.max_attempts} attempts: {note}")
    log.warning("falling back to token clustering for %d synopses (%s)", len(items), errors[-1] if errors else "")
    return ClusterResult(fallback_clusters(items, config.threshold), True, errors)
