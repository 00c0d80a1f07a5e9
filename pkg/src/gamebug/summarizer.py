"""Stage 1: section-by-section structured summaries of a play session."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import Any, Sequence

from .gateway import Gateway
from .graph import LogicGraph, describe_graph
from .ingest import DEFAULT_WINDOW, CleanedLog, GameStep, Section, render_section, segment

log = logging.getLogger(__name__)

NA = "NA"
UNMAPPED_SYNOPSIS = "No summary is available for this step."

Completed = tuple[str, int]


class SummaryParseError(ValueError):
    cause = "unparseable"


class MissingFieldError(SummaryParseError):
    cause = "missing_field"


class UnknownSceneError(SummaryParseError):
    cause = "unknown_scene"


@dataclass(frozen=True)
class StepSummary:
    step_in_round: int
    step_total: int
    is_action: bool
    synopsis: str
    success: bool
    mapped_scenes: tuple[str, ...] = ()
    helpful: bool = False
    newly_completed: tuple[Completed, ...] = ()

    def __post_init__(self) -> None:
        text = self.synopsis.strip()
        if not text or text[-1] not in ".!?":
            raise ValueError(f"synopsis must be one terminated sentence: {self.synopsis!r}")

    def to_dict(self) -> dict:
        return {
            "step": self.step_in_round,
            "total": self.step_total,
            "action": self.is_action,
            "synopsis": self.synopsis,
            "success": self.success,
            "node": list(self.mapped_scenes),
            "helpful": self.helpful,
            "completed_nodes": [[s, t] for s, t in self.newly_completed],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepSummary":
        return cls(
            d["step"],
            d["total"],
            d["action"],
            d["synopsis"],
            d["success"],
            tuple(d["node"]),
            d["helpful"],
            tuple((s, t) for s, t in d["completed_nodes"]),
        )


@dataclass(frozen=True)
class SectionReply:
    """One parsed assistant reply: per-step records plus echoed carried state."""

    steps: tuple[StepSummary, ...]
    sources: tuple[str, ...]
    completed: tuple[Completed, ...]


@dataclass
class SessionSummary:
    session_id: str
    steps: list[StepSummary]
    completed: list[Completed]
    sources: dict[str, str]
    degraded: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "steps": [s.to_dict() for s in self.steps],
            "sources": dict(self.sources),
            "completed": [[s, t] for s, t in self.completed],
            "degraded": list(self.degraded),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionSummary":
        return cls(
            d["session_id"],
            [StepSummary.from_dict(s) for s in d["steps"]],
            [(s, t) for s, t in d["completed"]],
            dict(d["sources"]),
            list(d.get("degraded", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def load_session_summary(path: str | Path) -> SessionSummary:
    return SessionSummary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- prompts ----------------------------------------------------------------------

SENTINEL = re.compile(r"^=== (user|assistant) ===$")


def parse_examples(text: str) -> list[tuple[str, str]]:
    """Example-set file: blocks introduced by ``=== user ===`` / ``=== assistant ===``."""
    blocks: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        m = SENTINEL.match(line)
        if m:
            blocks.append((m.group(1), []))
        elif blocks:
            blocks[-1][1].append(line)
        elif line.strip():
            raise ValueError("example set must start with a '=== user ===' line")
    pairs = []
    for i in range(0, len(blocks), 2):
        if i + 1 >= len(blocks) or blocks[i][0] != "user" or blocks[i + 1][0] != "assistant":
            raise ValueError("example set must alternate user and assistant blocks")
        pairs.append(tuple("\n".join(b[1]).strip("\n") for b in blocks[i : i + 2]))
    return pairs


def render_examples(pairs: Sequence[tuple[str, str]]) -> str:
    out = []
    for user, assistant in pairs:
        out += ["=== user ===", user, "=== assistant ===", assistant]
    return "\n".join(out) + "\n"


def bundled_examples() -> list[tuple[str, str]]:
    return parse_examples(files("gamebug.data").joinpath("examples.txt").read_text("utf-8"))


def bundled_system_template() -> str:
    return files("gamebug.data").joinpath("summarize_prompt.txt").read_text("utf-8")


def format_completed(pairs: Sequence[Completed]) -> str:
    return "[" + ", ".join(f"({s},{t})" for s, t in pairs) + "]"


def context_header(graph: LogicGraph, completed: Sequence[Completed], sources: dict[str, str]) -> str:
    facts = ", ".join(f"{k} - {sources.get(k, NA)}" for k in graph.tracked_sources)
    return f"Completed nodes so far: {format_completed(completed)}\nSources: [{facts}]"


@dataclass(frozen=True)
class PromptBundle:
    system: str
    examples: tuple[tuple[str, str], ...]
    user: str

    def messages(self) -> list[tuple[str, str]]:
        out = [("system", self.system)]
        for u, a in self.examples:
            out += [("user", u), ("assistant", a)]
        out.append(("user", self.user))
        return out


def build_prompt(
    graph: LogicGraph,
    section: Section,
    completed: Sequence[Completed] = (),
    sources: dict[str, str] | None = None,
    examples: Sequence[tuple[str, str]] = (),
    *,
    system_template: str | None = None,
    require_examples: bool = True,
    error_note: str | None = None,
) -> PromptBundle:
    if require_examples and not examples:
        raise ValueError("few-shot prompting is required but the example set is empty")
    template = system_template if system_template is not None else bundled_system_template()
    system = template.replace("{graph}", describe_graph(graph))
    user = context_header(graph, completed, sources or {}) + "\n" + render_section(section)
    if error_note:
        user += (
            "\n\nYour previous reply for this section was rejected: "
            f"{error_note}\nReply again in the required format."
        )
    return PromptBundle(system, tuple(tuple(e) for e in examples), user)


# --- reply parsing -----------------------------------------------------------------

_KEYS = ("step", "total", "action", "synopsis", "success", "node", "helpful", "completed nodes")
_ALIASES = {"completed_nodes": "completed nodes", "completed": "completed nodes", "nodes": "node", "scene": "node"}
_KEY_RE = re.compile(
    r"(?:^|,\s*)[\"']?(step|total|action|synopsis|success|nodes|node|scene|helpful|completed[ _]nodes|completed)[\"']?\s*:\s*"
)
_PAIR_RE = re.compile(r"[\(\[]\s*[\"']?([^,\"'()\[\]\s]+)[\"']?\s*,\s*(\d+)\s*[\)\]]")


def _as_bool(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "yes"):
        return True
    if text in ("false", "no"):
        return False
    raise SummaryParseError(f"field {key!r} is not a boolean: {value!r}")


def _as_int(value: Any, key: str) -> int:
    if isinstance(value, bool):
        raise SummaryParseError(f"field {key!r} is not an integer")
    try:
        return int(str(value).strip())
    except ValueError:
        raise SummaryParseError(f"field {key!r} is not an integer: {value!r}") from None


def _as_ids(value: Any) -> list[str]:
    if isinstance(value, list):
        return [str(v).strip() for v in value]
    text = str(value).strip()
    if text in ("", "None", "null", "[]"):
        return []
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
    return [t.strip().strip("'\"") for t in text.split(",") if t.strip()]


def _as_pairs(value: Any) -> list[Completed]:
    if isinstance(value, list):
        out = []
        for item in value:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise SummaryParseError(f"bad completed pair {item!r}")
            out.append((str(item[0]), _as_int(item[1], "completed nodes")))
        return out
    text = str(value).strip()
    if text in ("", "None", "[]"):
        return []
    if not (text.startswith("[") and text.endswith("]")):
        raise SummaryParseError(f"bad completed list {text!r}")
    inner = text[1:-1]
    pairs = [(m.group(1), int(m.group(2))) for m in _PAIR_RE.finditer(inner)]
    leftover = _PAIR_RE.sub("", inner).replace(",", "").strip()
    if leftover:
        raise SummaryParseError(f"bad completed list {text!r}")
    return pairs


def _relaxed_record(body: str) -> dict[str, str]:
    matches = list(_KEY_RE.finditer(body))
    if not matches or matches[0].start() != 0:
        raise SummaryParseError(f"unrecognized record {body[:60]!r}")
    rec: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(body)
        key = m.group(1).replace("_", " ")
        rec[_ALIASES.get(key, key)] = body[m.end() : end].strip()
    return rec


def _relaxed_array(text: str) -> list[dict[str, Any]]:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise SummaryParseError("step records must be enclosed in [ ]")
    inner = text[1:-1].strip()
    if not inner:
        return []
    if not (inner.startswith("{") and inner.endswith("}")):
        raise SummaryParseError("step records must be enclosed in { }")
    return [_relaxed_record(b.strip()) for b in re.split(r"\}\s*,?\s*\{", inner[1:-1])]


def _load_array(text: str) -> list[dict[str, Any]]:
    try:
        data = json.loads(text)
    except ValueError:
        return _relaxed_array(text)
    if not isinstance(data, list) or not all(isinstance(d, dict) for d in data):
        raise SummaryParseError("step records must be a list of objects")
    return [{_ALIASES.get(k.replace("_", " "), k.replace("_", " ")): v for k, v in d.items()} for d in data]


def _load_sources(value: Any, graph: LogicGraph) -> tuple[str, ...]:
    if isinstance(value, dict):
        if list(value) != list(graph.tracked_sources):
            raise MissingFieldError("sources do not match the tracked facts")
        vals = [str(v) for v in value.values()]
    elif isinstance(value, list):
        vals = [str(v).strip() for v in value]
    else:
        text = str(value).strip()
        try:
            return _load_sources(json.loads(text), graph)
        except ValueError:
            pass
        if not (text.startswith("[") and text.endswith("]")):
            raise SummaryParseError(f"bad sources list {text!r}")
        inner = text[1:-1].strip()
        vals = [v.strip().strip("'\"") for v in inner.split(",")] if inner else []
    if len(vals) != len(graph.tracked_sources):
        raise MissingFieldError(
            f"expected {len(graph.tracked_sources)} sources, got {len(vals)}"
        )
    return tuple(v if v else NA for v in vals)


def _step_from_record(rec: dict[str, Any], graph: LogicGraph) -> StepSummary:
    missing = [k for k in _KEYS if k not in rec]
    if missing:
        raise MissingFieldError(f"record missing field(s): {', '.join(missing)}")
    synopsis = str(rec["synopsis"]).strip()
    if len(synopsis) >= 2 and synopsis[0] == synopsis[-1] and synopsis[0] in "\"'":
        synopsis = synopsis[1:-1]
    scenes = _as_ids(rec["node"])
    pairs = _as_pairs(rec["completed nodes"])
    for sid in scenes + [s for s, _ in pairs]:
        if sid not in graph:
            raise UnknownSceneError(f"scene {sid} is not in the logic graph")
    try:
        return StepSummary(
            _as_int(rec["step"], "step"),
            _as_int(rec["total"], "total"),
            _as_bool(rec["action"], "action"),
            synopsis,
            _as_bool(rec["success"], "success"),
            tuple(scenes),
            _as_bool(rec["helpful"], "helpful"),
            tuple(pairs),
        )
    except ValueError as exc:
        if isinstance(exc, SummaryParseError):
            raise
        raise SummaryParseError(str(exc)) from None


def parse_summary(text: str, graph: LogicGraph) -> SectionReply:
    """Parse an assistant reply in strict JSON or the relaxed record notation."""
    text = text.strip()
    if not text:
        raise SummaryParseError("empty reply")
    if "+sources:" in text:
        head, _, tail = text.rpartition("+sources:")
        src_text, sep, comp_text = tail.partition("+completed:")
        if not sep:
            raise MissingFieldError("reply lacks '+completed:'")
        records = _load_array(head)
        sources = _load_sources(src_text, graph)
        completed = _as_pairs(_maybe_json(comp_text))
    else:
        try:
            doc = json.loads(text)
        except ValueError:
            raise SummaryParseError("reply is neither JSON nor the record notation") from None
        if not isinstance(doc, dict):
            raise SummaryParseError("JSON reply must be an object")
        for key in ("steps", "sources", "completed"):
            if key not in doc:
                raise MissingFieldError(f"reply lacks {key!r}")
        if not isinstance(doc["steps"], list):
            raise SummaryParseError("'steps' must be a list")
        records = _load_array(json.dumps(doc["steps"]))
        sources = _load_sources(doc["sources"], graph)
        completed = _as_pairs(doc["completed"])
    for sid, _ in completed:
        if sid not in graph:
            raise UnknownSceneError(f"scene {sid} is not in the logic graph")
    return SectionReply(tuple(_step_from_record(r, graph) for r in records), sources, tuple(completed))


def _maybe_json(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except ValueError:
        return text


def render_canonical(reply: SectionReply, graph: LogicGraph) -> str:
    """Strict JSON form with stable field order."""
    doc = {
        "steps": [s.to_dict() for s in reply.steps],
        "sources": dict(zip(graph.tracked_sources, reply.sources)),
        "completed": [[s, t] for s, t in reply.completed],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False)


def _pybool(value: bool) -> str:
    return "True" if value else "False"


def render_relaxed(reply: SectionReply) -> str:
    """The compact record notation used by the in-context examples."""
    rows = []
    for s in reply.steps:
        rows.append(
            f"{{step: {s.step_in_round}, total: {s.step_total}, action: {_pybool(s.is_action)}, "
            f"synopsis: {s.synopsis}, success: {_pybool(s.success)}, "
            f"node: [{', '.join(s.mapped_scenes)}], helpful: {_pybool(s.helpful)}, "
            f"completed nodes: {format_completed(s.newly_completed)}}}"
        )
    body = "[\n" + ",\n".join(rows) + ("\n" if rows else "") + "]"
    return f"{body}+sources: [{', '.join(reply.sources)}]+completed: {format_completed(reply.completed)}"


# --- consistency -------------------------------------------------------------------


@dataclass(frozen=True)
class Inconsistency:
    section: int
    kind: str
    message: str


@dataclass
class ConsistencyReport:
    violations: list[Inconsistency] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


def _check_reply(
    graph: LogicGraph,
    reply: SectionReply,
    completed: list[Completed],
    sources: list[str],
    index: int,
) -> list[Inconsistency]:
    """Check one reply against carried state; ``completed``/``sources`` are updated in place."""
    out: list[Inconsistency] = []
    totals = {s.step_total for s in reply.steps}
    legal_prefix = list(completed)
    for step in reply.steps:
        for sid, when in step.newly_completed:
            if when not in totals or when > step.step_total:
                out.append(
                    Inconsistency(
                        index,
                        "step_mismatch",
                        f"{sid} reported completed at step {when} by step {step.step_total}",
                    )
                )
            verdict = graph.is_completion_legal(legal_prefix + [(sid, when)])
            if verdict.legal:
                legal_prefix.append((sid, when))
            else:
                out.append(Inconsistency(index, "illegal_order", verdict.violation.reason))
            completed.append((sid, when))
    if set(reply.completed) != set(completed):
        missing = sorted(set(completed) - set(reply.completed))
        extra = sorted(set(reply.completed) - set(completed))
        parts = []
        if missing:
            parts.append(f"missing {format_completed(missing)}")
        if extra:
            parts.append(f"unexpected {format_completed(extra)}")
        out.append(Inconsistency(index, "context_drift", "context drift: " + "; ".join(parts)))
    for i, (old, new) in enumerate(zip(sources, reply.sources)):
        if old != NA and new == NA:
            out.append(
                Inconsistency(index, "source_lost", f"source {graph.tracked_sources[i]} reverted from {old} to NA")
            )
        else:
            sources[i] = new
    return out


def check_consistency(graph: LogicGraph, replies: Sequence[SectionReply]) -> ConsistencyReport:
    """Check a session's section replies, in order, for temporal consistency."""
    completed: list[Completed] = []
    sources = [NA] * len(graph.tracked_sources)
    report = ConsistencyReport()
    for i, reply in enumerate(replies):
        report.violations.extend(_check_reply(graph, reply, completed, sources, i))
    return report


# --- driver ---------------------------------------------------------------------


@dataclass
class SummarizerConfig:
    window: int = DEFAULT_WINDOW
    max_attempts: int = 2
    examples: Sequence[tuple[str, str]] = ()
    system_template: str | None = None
    require_examples: bool = True
    temperature: float = 0.0
    max_tokens: int = 2048


def _coverage_error(reply: SectionReply, section: Section) -> str | None:
    got = [(s.step_in_round, s.step_total) for s in reply.steps]
    want = [(s.step_in_round, s.step_total) for s in section.steps]
    if got != want:
        return f"expected records for steps {want}, got {got}"
    return None


def unmapped_step(step: GameStep) -> StepSummary:
    return StepSummary(step.step_in_round, step.step_total, step.is_action, UNMAPPED_SYNOPSIS, False)


def summarize_session(
    graph: LogicGraph,
    cleaned: CleanedLog,
    gateway: Gateway,
    config: SummarizerConfig | None = None,
) -> SessionSummary:
    config = config or SummarizerConfig()
    if config.max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    completed: list[Completed] = []
    sources = [NA] * len(graph.tracked_sources)
    steps: list[StepSummary] = []
    degraded: list[dict] = []

    for index, section in enumerate(segment(cleaned, config.window)):
        note = None
        accepted = False
        for attempt in range(1, config.max_attempts + 1):
            bundle = build_prompt(
                graph,
                section,
                completed,
                dict(zip(graph.tracked_sources, sources)),
                config.examples,
                system_template=config.system_template,
                require_examples=config.require_examples,
                error_note=note,
            )
            request = gateway.request(
                bundle.messages(), temperature=config.temperature, max_tokens=config.max_tokens
            )
            text = gateway.complete(request).text
            try:
                reply = parse_summary(text, graph)
            except SummaryParseError as exc:
                note = f"{exc.cause}: {exc}"
                continue
            note = _coverage_error(reply, section)
            if note:
                continue
            trial_completed, trial_sources = list(completed), list(sources)
            problems = _check_reply(graph, reply, trial_completed, trial_sources, index)
            if problems:
                note = "; ".join(p.message for p in problems)
                continue
            completed, sources = trial_completed, trial_sources
            steps.extend(reply.steps)
            accepted = True
            break
        if not accepted:
            log.warning(
                "%s: steps %d-%d left unmapped after %d attempts (%s)",
                cleaned.session_id, section.first_step, section.last_step, config.max_attempts, note,
            )
            steps.extend(unmapped_step(s) for s in section.steps)
            degraded.append(
                {"steps": [section.first_step, section.last_step], "attempts": config.max_attempts, "reason": note}
            )

    verdict = graph.is_completion_legal(completed)
    assert verdict.legal, verdict
    return SessionSummary(
        cleaned.session_id, steps, completed, dict(zip(graph.tracked_sources, sources)), degraded
    )
