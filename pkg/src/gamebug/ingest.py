"""Raw game-engine logs -> cleaned tagged logs -> fixed-size sections.

Cleaned format, one step::

    <Step> 2/2
    <Player> [action] None. [words] Hello. [inventory]={'water bucket'}
    <TextWorld> You are in a quiet residential street.
    <Game> location=residential street;feedback: ...
    <NPC> Mrs. Thompson: Hello there!

A round reset between steps is written as ``<Game reset> K`` where K is the
cumulative step count at the reset.
"""

from __future__ import annotations

import ast
import logging
import re
from datetime import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

DEFAULT_ROUND_LENGTH = 30
DEFAULT_WINDOW = 2


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GameStep:
    step_in_round: int
    step_total: int
    player_action: str | None
    player_words: str | None
    inventory: tuple[str, ...] = ()
    world_feedback: str | None = None
    location: str = ""
    extra_feedback: str | None = None
    npc_utterances: tuple[tuple[str, str], ...] = ()
    # whitespace the engine wrote between the words field and [inventory]
    words_gap: str = " "
    # other ';'-separated <Game> fields of a cleaned log, kept verbatim
    game_extras: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.player_action is None and self.player_words is None:
            raise LogFormatError(f"step {self.step_total} has neither action nor words")
        if self.step_in_round < 1 or self.step_total < self.step_in_round:
            raise LogFormatError(
                f"bad step numbering {self.step_in_round}/{self.step_total}"
            )
        if any(not item for item in self.inventory):
            raise LogFormatError(f"step {self.step_total} has an empty inventory item")

    @property
    def is_action(self) -> bool:
        return self.player_action is not None


@dataclass(frozen=True)
class CleanedLog:
    session_id: str
    intro: str
    steps: tuple[GameStep, ...]
    reset_markers: tuple[int, ...] = ()


@dataclass(frozen=True)
class Section:
    session_id: str
    steps: tuple[GameStep, ...]
    reset_before: int | None = None

    @property
    def first_step(self) -> int:
        return self.steps[0].step_total

    @property
    def last_step(self) -> int:
        return self.steps[-1].step_total


def validate_log(cleaned: CleanedLog, round_length: int = DEFAULT_ROUND_LENGTH) -> None:
    resets = set(cleaned.reset_markers)
    prev: GameStep | None = None
    for step in cleaned.steps:
        if step.step_in_round > round_length:
            raise LogFormatError(
                f"step {step.step_total}: step {step.step_in_round} exceeds round length {round_length}"
            )
        if prev is not None:
            if step.step_total <= prev.step_total:
                raise LogFormatError(f"step_total not increasing at {step.step_total}")
            if prev.step_total in resets and step.step_in_round != 1:
                raise LogFormatError(f"step {step.step_total} does not restart the round after a reset")
        prev = step


# --- raw log -----------------------------------------------------------------

_TIMESTAMPED = re.compile(
    r"^(?P<ts>\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2},\d{3}) (?P<thread>\S+) "
    r"(?P<level>DEBUG|INFO|WARNING|ERROR|CRITICAL) (?P<msg>.*)$"
)
# anything that looks like it was meant to carry a timestamp
_TIMESTAMP_LIKE = re.compile(r"^\d{2,4}[-/]\S*\s+\S*\s*\S+\s+(DEBUG|INFO|WARNING|ERROR|CRITICAL)\b|^\d{4}-\d")
_TAG = re.compile(r"^<(Game step|Game reset|Game|Player_processed|Player|TextWorld|location)>\s?(.*)$", re.S)

_KINDS = {
    "Game step": "step",
    "Game reset": "reset",
    "Game": "game",
    "Player_processed": "processed",
    "Player": "player",
    "TextWorld": "textworld",
    "location": "location",
}


@dataclass
class RawEvent:
    kind: str
    text: str
    line: int


@dataclass
class RawLog:
    events: list[RawEvent]
    warnings: list[str] = field(default_factory=list)

    def of_kind(self, kind: str) -> list[RawEvent]:
        return [e for e in self.events if e.kind == kind]


def _valid_stamp(stamp: str) -> bool:
    try:
        datetime.strptime(stamp, "%Y-%m-%d %H:%M:%S,%f")
    except ValueError:
        return False
    return True


def parse_raw_log(text: str) -> RawLog:
    if not text.strip():
        raise LogFormatError("empty input")
    events: list[RawEvent] = []
    warnings: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _TIMESTAMPED.match(line)
        if m is not None and not _valid_stamp(m.group("ts")):
            warnings.append(f"line {lineno}: malformed timestamp, skipped")
            continue
        if m is None:
            if _TIMESTAMP_LIKE.match(line):
                warnings.append(f"line {lineno}: malformed timestamp, skipped")
            elif events:
                events[-1].text += "\n" + line
            else:
                warnings.append(f"line {lineno}: text before first log record, skipped")
            continue
        msg = m.group("msg")
        tag = _TAG.match(msg)
        if tag:
            events.append(RawEvent(_KINDS[tag.group(1)], tag.group(2), lineno))
        elif msg.startswith("<"):
            warnings.append(f"line {lineno}: unrecognized record {msg[:40]!r}")
            events.append(RawEvent("unknown", msg, lineno))
        else:
            events.append(RawEvent("header", msg, lineno))
    if not any(e.kind == "step" for e in events):
        raise LogFormatError("no game steps")
    return RawLog(events, warnings)


_PROCESSED = re.compile(
    r"^\s*\[action\] (?P<action>.*?)\. \[words\] (?P<words>.*?)\.(?P<gap>\s*)"
    r"\[inventory\]=(?P<inv>\{.*\})\s*$",
    re.S,
)
_QUOTED = re.compile(r"'(?:[^'\\]|\\.)*'|\"(?:[^\"\\]|\\.)*\"")
_GAME_FIELD = re.compile(r"\s{2,}(?=inventory=|\[id\]|\[words\]|Scene:|feedback:|location\s*=)")


def parse_inventory(text: str) -> tuple[str, ...]:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise LogFormatError(f"bad inventory {text!r}")
    return tuple(ast.literal_eval(q) for q in _QUOTED.findall(text))


def render_inventory(items: Iterable[str]) -> str:
    return "{" + ", ".join(repr(i) for i in items) + "}"


def _none(value: str) -> str | None:
    return None if value == "None" else value


def parse_player_fields(text: str) -> tuple[str | None, str | None, tuple[str, ...], str]:
    """``[action] X. [words] Y. [inventory]={...}`` -> (action, words, inventory, gap)."""
    m = _PROCESSED.match(text.replace("\\n", ""))
    if not m:
        raise LogFormatError(f"unparseable player record {text[:60]!r}")
    return (
        _none(m.group("action")),
        _none(m.group("words")),
        parse_inventory(m.group("inv")),
        m.group("gap"),
    )


def _parse_game_payload(text: str) -> tuple[str | None, str | None, list[tuple[str, str]]]:
    location = feedback = None
    npcs: list[tuple[str, str]] = []
    speaker: str | None = None
    for part in _GAME_FIELD.split(text.strip()):
        part = part.strip()
        if m := re.match(r"location\s*=\s*(.*)", part, re.S):
            location = m.group(1).strip()
        elif part.startswith("[id]"):
            speaker = part[4:].strip()
        elif part.startswith("[words]"):
            npcs.append((speaker or "Unknown", part[7:].strip()))
            speaker = None
        elif part.startswith("feedback:"):
            feedback = part[9:].strip()
    return location, feedback, npcs


def _intro_text(text: str) -> str:
    lines = text.split("\n")
    for i, line in enumerate(lines):
        if line.strip() == "-=GAME START=-":
            lines = lines[i + 1 :]
            break
    while lines and not lines[0].strip():
        lines.pop(0)
    while lines and not lines[-1].strip():
        lines.pop()
    return "\n".join(lines)


def clean_log(
    raw: RawLog, session_id: str = "session", round_length: int = DEFAULT_ROUND_LENGTH
) -> CleanedLog:
    intro = ""
    steps: list[GameStep] = []
    resets: list[int] = []
    pending: dict | None = None
    last_location = ""
    last_world: str | None = None

    def flush() -> None:
        nonlocal pending, last_world, last_location
        if pending is None:
            return
        p, pending = pending, None
        if p["processed"] is not None:
            action, words, inventory, gap = parse_player_fields(p["processed"])
        elif p["player"] is not None:
            action, words, inventory, gap = p["player"].strip(), None, (), " "
        else:
            raise LogFormatError(f"step {p['total']} has no player record")
        world = p["world"] if p["world"] is not None else last_world
        try:
            step = GameStep(
                step_in_round=p["in_round"],
                step_total=p["total"],
                player_action=action,
                player_words=words,
                inventory=inventory,
                world_feedback=world,
                location=p["location"] or last_location,
                extra_feedback=p["feedback"],
                npc_utterances=tuple(p["npcs"]),
                words_gap=gap,
            )
        except LogFormatError as exc:
            raise LogFormatError(f"line {p['line']}: {exc}") from None
        steps.append(step)
        last_world = world
        last_location = step.location

    for ev in raw.events:
        if ev.kind == "step":
            flush()
            m = re.match(r"\s*(\d+)\s*/\s*(\d+)", ev.text)
            if not m:
                raise LogFormatError(f"line {ev.line}: bad step counter {ev.text!r}")
            pending = {
                "in_round": int(m.group(1)),
                "total": int(m.group(2)),
                "player": None,
                "processed": None,
                "world": None,
                "location": None,
                "feedback": None,
                "npcs": [],
                "line": ev.line,
            }
        elif ev.kind == "reset":
            flush()
            if steps:
                resets.append(steps[-1].step_total)
                last_world = None
        elif ev.kind == "location":
            last_location = ev.text.strip()
        elif ev.kind == "game":
            if pending is None:
                if not steps and not intro:
                    intro = _intro_text(ev.text)
                # later round intros are dropped
                continue
            location, feedback, npcs = _parse_game_payload(ev.text)
            pending["location"] = location
            pending["feedback"] = feedback
            pending["npcs"].extend(npcs)
        elif pending is not None:
            if ev.kind == "player":
                pending["player"] = ev.text
            elif ev.kind == "processed":
                pending["processed"] = ev.text
            elif ev.kind == "textworld":
                pending["world"] = ev.text.rstrip()
    flush()
    cleaned = CleanedLog(session_id, intro, tuple(steps), tuple(resets))
    validate_log(cleaned, round_length)
    return cleaned


# --- cleaned format ------------------------------------------------------------


def render_step(step: GameStep) -> list[str]:
    lines = [
        f"<Step> {step.step_in_round}/{step.step_total}",
        f"<Player> [action] {step.player_action or 'None'}. [words] {step.player_words or 'None'}."
        f"{step.words_gap}[inventory]={render_inventory(step.inventory)}",
    ]
    if step.world_feedback is not None:
        lines.append(f"<TextWorld> {step.world_feedback}")
    game = f"<Game> location={step.location}"
    for extra in step.game_extras:
        game += f";{extra}"
    if step.extra_feedback is not None:
        game += f";feedback: {step.extra_feedback}"
    lines.append(game)
    lines.extend(f"<NPC> {name}: {text}" for name, text in step.npc_utterances)
    return lines


def render_steps(steps: Sequence[GameStep], resets: Iterable[int] = ()) -> list[str]:
    resets = set(resets)
    lines: list[str] = []
    prev_total = 0
    for step in steps:
        if prev_total and prev_total in resets:
            lines.append(f"<Game reset> {prev_total}")
        lines.extend(render_step(step))
        prev_total = step.step_total
    if prev_total and prev_total in resets:
        lines.append(f"<Game reset> {prev_total}")
    return lines


def render_cleaned(cleaned: CleanedLog) -> str:
    lines = [cleaned.intro] if cleaned.intro else []
    lines += render_steps(cleaned.steps, cleaned.reset_markers)
    return "\n".join(lines) + "\n"


def render_section(section: Section) -> str:
    lines = []
    if section.reset_before is not None:
        lines.append(f"<Game reset> {section.reset_before}")
    lines += render_steps(section.steps)
    return "\n".join(lines)


_CLEAN_TAG = re.compile(r"^<(Step|Player|TextWorld|Game|NPC|Game reset)> ?(.*)$")


def _step_from_block(block: dict) -> GameStep:
    action, words, inventory, gap = parse_player_fields(block["player"])
    game = block["game"]
    if not game.startswith("location="):
        raise LogFormatError(f"step {block['total']}: <Game> line lacks location")
    body = game[len("location=") :]
    feedback = None
    idx = body.find(";feedback: ")
    if idx >= 0:
        body, feedback = body[:idx], body[idx + len(";feedback: ") :]
    location, *extras = body.split(";")
    return GameStep(
        step_in_round=block["in_round"],
        step_total=block["total"],
        player_action=action,
        player_words=words,
        inventory=inventory,
        world_feedback=block["world"],
        location=location,
        extra_feedback=feedback,
        npc_utterances=tuple(block["npcs"]),
        words_gap=gap,
        game_extras=tuple(extras),
    )


def parse_cleaned(
    text: str, session_id: str = "session", round_length: int = DEFAULT_ROUND_LENGTH
) -> CleanedLog:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    intro: list[str] = []
    steps: list[GameStep] = []
    resets: list[int] = []
    block: dict | None = None
    last_field: str | None = None
    started = False

    def finish() -> None:
        nonlocal block
        if block is not None:
            if block["player"] is None or block["game"] is None:
                raise LogFormatError(f"step {block['total']} is missing <Player> or <Game>")
            steps.append(_step_from_block(block))
            block = None

    for lineno, line in enumerate(lines, start=1):
        m = _CLEAN_TAG.match(line)
        if not started:
            if m is None or m.group(1) not in ("Step", "Game reset"):
                intro.append(line)
                continue
            started = True
        if m is None:
            if block is None or last_field is None:
                raise LogFormatError(f"line {lineno}: untagged text outside a step")
            if last_field == "npc":
                name, said = block["npcs"][-1]
                block["npcs"][-1] = (name, said + "\n" + line)
            else:
                block[last_field] += "\n" + line
            continue
        tag, body = m.groups()
        if tag == "Step":
            finish()
            sm = re.fullmatch(r"(\d+)/(\d+)", body.strip())
            if not sm:
                raise LogFormatError(f"line {lineno}: bad step counter {body!r}")
            block = {
                "in_round": int(sm.group(1)),
                "total": int(sm.group(2)),
                "player": None,
                "world": None,
                "game": None,
                "npcs": [],
            }
            last_field = None
        elif tag == "Game reset":
            finish()
            resets.append(int(body.strip()))
            last_field = None
        elif block is None:
            raise LogFormatError(f"line {lineno}: <{tag}> outside a step")
        elif tag == "Player":
            block["player"] = body
            last_field = "player"
        elif tag == "TextWorld":
            block["world"] = body
            last_field = "world"
        elif tag == "Game":
            block["game"] = body
            last_field = "game"
        else:
            name, sep, said = body.partition(": ")
            if not sep:
                raise LogFormatError(f"line {lineno}: <NPC> line without speaker")
            block["npcs"].append((name, said))
            last_field = "npc"
    finish()
    cleaned = CleanedLog(session_id, "\n".join(intro), tuple(steps), tuple(resets))
    validate_log(cleaned, round_length)
    return cleaned


def segment(cleaned: CleanedLog, window: int = DEFAULT_WINDOW) -> list[Section]:
    """Split into consecutive non-overlapping windows that never cross a reset."""
    if window < 1:
        raise ValueError("window must be >= 1")
    resets = set(cleaned.reset_markers)
    sections: list[Section] = []
    current: list[GameStep] = []
    reset_before: int | None = None
    for step in cleaned.steps:
        if current and (len(current) == window or current[-1].step_total in resets):
            sections.append(Section(cleaned.session_id, tuple(current), reset_before))
            reset_before = current[-1].step_total if current[-1].step_total in resets else None
            current = []
        current.append(step)
    if current:
        sections.append(Section(cleaned.session_id, tuple(current), reset_before))
    return sections


def load_log(path: str | Path, round_length: int = DEFAULT_ROUND_LENGTH) -> CleanedLog:
    """Load a raw (``*.log``) or cleaned (any other suffix) game log."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    session_id = path.name.split(".")[0]
    if path.suffix == ".log":
        raw = parse_raw_log(text)
        for w in raw.warnings:
            log.warning("%s: %s", path.name, w)
        return clean_log(raw, session_id, round_length)
    return parse_cleaned(text, session_id, round_length)


def bundled_raw_sample() -> str:
    from importlib.resources import files

    return files("gamebug.data").joinpath("sample_raw.log").read_text("utf-8")
