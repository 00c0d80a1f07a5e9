"""Helpers that lay out synthetic cohorts on disk and build gateway scripts."""

from __future__ import annotations

import json
from pathlib import Path

from gamebug.ingest import segment
from gamebug.summarizer import SectionReply, parse_summary, render_relaxed
from gamebug.synth import render_raw, section_replies

POISON = "Sorry, I can't summarize this section."


def write_logs(directory: Path, cohort, round_length: int = 30) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for cleaned, _ in cohort:
        (directory / f"{cleaned.session_id}.log").write_text(render_raw(cleaned, round_length), encoding="utf-8")
    return directory


def write_script(path: Path, replies) -> Path:
    path.write_text(json.dumps(replies), encoding="utf-8")
    return path


def poisoned_replies(graph, cleaned, truth, index: int, window: int = 2) -> list[str]:
    """Perfect replies for one session with section ``index`` replaced by garbage.

    Later replies echo only the completions the summarizer actually accepted.
    """
    replies = section_replies(graph, cleaned, truth, window)
    sections = segment(cleaned, window)
    hit = {s.step_total for s in sections[index].steps}
    lost = {p for s in truth.steps if s.step_total in hit for p in s.newly_completed}
    out = []
    for i, text in enumerate(replies):
        if i == index:
            out.append(POISON)
        elif i > index and lost:
            r = parse_summary(text, graph)
            out.append(render_relaxed(SectionReply(r.steps, r.sources, tuple(p for p in r.completed if p not in lost))))
        else:
            out.append(text)
    return out
