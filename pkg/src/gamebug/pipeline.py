"""End-to-end orchestration and report rendering."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .analyzer import FlagConfig, PainPointFlag, SceneStats, completion_table, flag_pain_points, stats_document
from .clusterer import ClusterConfig, ClusterResult, SynopsisCluster, SynopsisItem, cluster_synopses, collect_synopses
from .fileio import atomic_write_text, dump_json, write_json
from .gateway import Gateway, GatewayError
from .graph import LogicGraph, load_graph
from .ingest import DEFAULT_ROUND_LENGTH, DEFAULT_WINDOW, CleanedLog, LogFormatError, load_log, render_cleaned
from .summarizer import (
    SessionSummary,
    SummarizerConfig,
    bundled_examples,
    load_session_summary,
    parse_examples,
    summarize_session,
)

log = logging.getLogger(__name__)

LOG_SUFFIXES = (".log", ".txt")


class PipelineError(RuntimeError):
    exit_code = 5


class ConfigError(PipelineError):
    exit_code = 2


class IngestionError(PipelineError):
    exit_code = 3


@dataclass
class RunConfig:
    graph_path: Path
    log_dir: Path
    out_dir: Path
    window: int = DEFAULT_WINDOW
    round_length: int = DEFAULT_ROUND_LENGTH
    flags: FlagConfig = field(default_factory=FlagConfig)
    examples_path: Path | None = None
    max_attempts: int = 2
    cluster_threshold: float = 0.6
    cluster_fallback: bool = True

    def validate(self) -> None:
        for name in ("graph_path", "log_dir"):
            if not Path(getattr(self, name)).exists():
                raise ConfigError(f"{name} does not exist: {getattr(self, name)}")
        if self.examples_path is not None and not Path(self.examples_path).exists():
            raise ConfigError(f"examples_path does not exist: {self.examples_path}")
        if self.window < 1 or self.round_length < 1 or self.max_attempts < 1:
            raise ConfigError("window, round length and retry limit must be >= 1")
        if not 0 < self.cluster_threshold <= 1:
            raise ConfigError("cluster threshold must be in (0, 1]")

    def examples(self) -> list[tuple[str, str]]:
        if self.examples_path is None:
            return bundled_examples()
        return parse_examples(Path(self.examples_path).read_text(encoding="utf-8"))


@dataclass
class BugReport:
    cohort_size: int
    stats: list[SceneStats]
    flags: list[PainPointFlag]
    clusters: dict[str, ClusterResult]
    graph: LogicGraph
    excluded: list[dict] = field(default_factory=list)
    unmapped: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = stats_document(self.stats, self.flags, self.graph)
        return {
            "cohort_size": self.cohort_size,
            "flags": doc["flags"],
            "clusters": {
                sid: {
                    "title": self.graph.scene(sid).title,
                    "degraded": res.degraded,
                    "clusters": [c.to_dict() for c in res.clusters],
                }
                for sid, res in self.clusters.items()
            },
            "scenes": doc["scenes"],
            "degraded": {
                "unmapped_sections": self.unmapped,
                "cluster_fallbacks": [sid for sid, res in self.clusters.items() if res.degraded],
            },
            "excluded_sessions": self.excluded,
        }

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    def render_text(self) -> str:
        g = self.graph
        out = [f"# Bug report ({self.cohort_size} sessions)", "", "## Pain points", ""]
        if not self.flags:
            out.append("No scene was flagged.")
        for f in self.flags:
            ev = f.evidence
            why = []
            if "LOW" in f.reasons:
                why.append(f"completion {ev['rate']:.1%} < {ev['tau_low']:.0%}")
            if "DROP" in f.reasons:
                why.append(
                    f"completion {ev['rate']:.1%} < {ev['drop_ratio']:g} x {ev['predecessor']} "
                    f"({ev['predecessor_rate']:.1%})"
                )
            if "HIGH" in f.reasons:
                why.append(f"completion {ev['rate']:.1%} > {ev['tau_high']:.0%}")
            out.append(f"- {f.scene_id} {g.scene(f.scene_id).title}: {', '.join(f.reasons)} ({'; '.join(why)})")
        for f in self.flags:
            out += ["", f"## Clusters for {f.scene_id} {g.scene(f.scene_id).title}", ""]
            res = self.clusters.get(f.scene_id)
            if res is None or not res.clusters:
                out.append("No synopses were mapped to this scene.")
                continue
            if res.degraded:
                out.append("(grouped by the token-overlap fallback)")
            for i, c in enumerate(res.clusters, start=1):
                where = ", ".join(f"{m.session_id}@{m.step_total}" for m in c.members)
                out.append(f"{i}. {c.label} [{c.size}] ({where})")
        out += ["", "## Completion rates", "", "| scene | title | scenario | completed | rate | flags |", "|---|---|---|---|---|---|"]
        flagged = {f.scene_id: f for f in self.flags}
        for s in self.stats:
            scene = g.scene(s.scene_id)
            reasons = ",".join(flagged[s.scene_id].reasons) if s.scene_id in flagged else ""
            out.append(
                f"| {s.scene_id} | {scene.title} | {scene.scenario_id} | "
                f"{s.players_completed}/{s.players_total} | {s.completion_rate:.3f} | {reasons} |"
            )
        if self.unmapped or self.excluded or any(r.degraded for r in self.clusters.values()):
            out += ["", "## Degraded run", ""]
            for u in self.unmapped:
                out.append(f"- {u['session']}: steps {u['steps'][0]}-{u['steps'][1]} unmapped ({u['reason']})")
            for sid, r in self.clusters.items():
                if r.degraded:
                    out.append(f"- {sid}: clustering fell back to token overlap")
            for e in self.excluded:
                out.append(f"- {e['session']} excluded at {e['stage']}: {e['error']}")
        return "\n".join(out) + "\n"


@dataclass
class ChartData:
    rows: list[dict]
    brackets: list[dict]

    def rows_csv(self) -> str:
        return _csv(["scene", "title", "scenario", "rate", "flagged", "reasons"], self.rows)

    def brackets_csv(self) -> str:
        return _csv(["scenario", "title", "first_scene", "last_scene", "size"], self.brackets)


def _csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def emit_chart_data(stats: Sequence[SceneStats], flags: Sequence[PainPointFlag], graph: LogicGraph) -> ChartData:
    flagged = {f.scene_id: f for f in flags}
    rows = []
    for s in stats:
        scene = graph.scene(s.scene_id)
        rows.append(
            {
                "scene": s.scene_id,
                "title": scene.title,
                "scenario": scene.scenario_id,
                "rate": f"{s.completion_rate:.6f}",
                "flagged": "yes" if s.scene_id in flagged else "no",
                "reasons": "|".join(flagged[s.scene_id].reasons) if s.scene_id in flagged else "",
            }
        )
    brackets = []
    for row in rows:
        if brackets and brackets[-1]["scenario"] == row["scenario"]:
            brackets[-1]["last_scene"] = row["scene"]
            brackets[-1]["size"] += 1
        else:
            brackets.append(
                {
                    "scenario": row["scenario"],
                    "title": graph.scenario(row["scenario"]).title,
                    "first_scene": row["scene"],
                    "last_scene": row["scene"],
                    "size": 1,
                }
            )
    return ChartData(rows, brackets)


# --- stages -------------------------------------------------------------------------


def ingest_logs(log_dir: Path, round_length: int, out_dir: Path | None = None) -> tuple[list[CleanedLog], list[dict]]:
    paths = sorted(p for p in Path(log_dir).iterdir() if p.is_file() and p.suffix in LOG_SUFFIXES)
    if not paths:
        raise IngestionError(f"no sessions found in {log_dir}")
    logs, excluded = [], []
    for path in paths:
        try:
            cleaned = load_log(path, round_length)
        except (LogFormatError, ValueError) as exc:
            log.error("%s: excluded (%s)", path.name, exc)
            excluded.append({"session": path.name.split(".")[0], "stage": "ingest", "error": str(exc)})
            continue
        if out_dir is not None:
            atomic_write_text(out_dir / "cleaned" / f"{cleaned.session_id}.txt", render_cleaned(cleaned))
        logs.append(cleaned)
    seen: set[str] = set()
    for cleaned in logs:
        if cleaned.session_id in seen:
            raise IngestionError(f"duplicate session id {cleaned.session_id}")
        seen.add(cleaned.session_id)
    return logs, excluded


def summarize_all(
    graph: LogicGraph,
    logs: Sequence[CleanedLog],
    gateway: Gateway,
    config: SummarizerConfig,
    out_dir: Path | None = None,
) -> tuple[list[SessionSummary], list[dict]]:
    summaries, excluded = [], []
    for cleaned in logs:
        try:
            summary = summarize_session(graph, cleaned, gateway, config)
        except GatewayError as exc:
            log.error("%s: excluded (%s)", cleaned.session_id, exc)
            excluded.append({"session": cleaned.session_id, "stage": "summarize", "error": str(exc)})
            continue
        if out_dir is not None:
            atomic_write_text(out_dir / "summaries" / f"{summary.session_id}.json", summary.to_json())
        summaries.append(summary)
    return summaries, excluded


def cluster_result_to_dict(scene_id: str, result: ClusterResult) -> dict:
    return {
        "scene": scene_id,
        "degraded": result.degraded,
        "errors": result.errors,
        "clusters": [c.to_dict() for c in result.clusters],
    }


def cluster_result_from_dict(doc: dict) -> ClusterResult:
    clusters = [
        SynopsisCluster(
            c["label"],
            tuple(SynopsisItem(m["text"], m["session"], m["step"], m["success"]) for m in c["members"]),
            c.get("bug_note", ""),
        )
        for c in doc["clusters"]
    ]
    return ClusterResult(clusters, doc["degraded"], list(doc.get("errors", [])))


def cluster_flags(
    graph: LogicGraph,
    summaries: Sequence[SessionSummary],
    flags: Sequence[PainPointFlag],
    gateway: Gateway | None,
    config: ClusterConfig,
    out_dir: Path | None = None,
) -> dict[str, ClusterResult]:
    results: dict[str, ClusterResult] = {}
    for flag in flags:
        items = collect_synopses(summaries, flag.scene_id, graph)
        result = cluster_synopses(items, gateway, config) if items else ClusterResult([])
        results[flag.scene_id] = result
        if out_dir is not None:
            write_json(out_dir / "clusters" / f"{flag.scene_id}.json", cluster_result_to_dict(flag.scene_id, result))
    return results


def build_report(
    graph: LogicGraph,
    summaries: Sequence[SessionSummary],
    flag_config: FlagConfig,
    clusters: dict[str, ClusterResult],
    excluded: Sequence[dict] = (),
) -> BugReport:
    stats = completion_table(summaries, graph)
    flags = flag_pain_points(stats, graph, flag_config)
    unmapped = [{"session": s.session_id, **d} for s in summaries for d in s.degraded]
    sections = {f.scene_id: clusters.get(f.scene_id, ClusterResult([])) for f in flags}
    return BugReport(len(summaries), stats, flags, sections, graph, list(excluded), unmapped)


def write_report(report: BugReport, out_dir: Path) -> None:
    atomic_write_text(out_dir / "report.json", report.to_json())
    atomic_write_text(out_dir / "report.md", report.render_text())
    chart = emit_chart_data(report.stats, report.flags, report.graph)
    atomic_write_text(out_dir / "chart.csv", chart.rows_csv())
    atomic_write_text(out_dir / "chart_brackets.csv", chart.brackets_csv())


def run_pipeline(config: RunConfig, gateway: Gateway) -> BugReport:
    config.validate()
    out = Path(config.out_dir)
    graph = load_graph(config.graph_path)
    logs, excluded = ingest_logs(config.log_dir, config.round_length, out)
    sconf = SummarizerConfig(window=config.window, max_attempts=config.max_attempts, examples=config.examples())
    summaries, skipped = summarize_all(graph, logs, gateway, sconf, out)
    excluded += skipped
    if not summaries:
        if skipped:
            raise GatewayError(f"every session failed at the gateway; last error: {skipped[-1]['error']}")
        raise PipelineError("no sessions left after ingestion and summarization")
    stats = completion_table(summaries, graph)
    flags = flag_pain_points(stats, graph, config.flags)
    write_json(out / "stats.json", stats_document(stats, flags, graph))
    cconf = ClusterConfig(
        max_attempts=config.max_attempts, fallback=config.cluster_fallback, threshold=config.cluster_threshold
    )
    clusters = cluster_flags(graph, summaries, flags, gateway, cconf, out)
    report = build_report(graph, summaries, config.flags, clusters, excluded)
    write_report(report, out)
    return report


def load_summaries(directory: Path) -> list[SessionSummary]:
    return [load_session_summary(p) for p in sorted(Path(directory).glob("*.json"))]


def load_clusters(directory: Path) -> dict[str, ClusterResult]:
    out = {}
    if Path(directory).is_dir():
        for p in sorted(Path(directory).glob("*.json")):
            doc = json.loads(p.read_text(encoding="utf-8"))
            out[doc["scene"]] = cluster_result_from_dict(doc)
    return out
