import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from gamebug.ingest import (
    CleanedLog,
    GameStep,
    LogFormatError,
    bundled_raw_sample,
    clean_log,
    load_log,
    parse_cleaned,
    parse_raw_log,
    render_cleaned,
    segment,
    validate_log,
)
from gamebug.graph import bundled_graph
from gamebug.synth import PlayerPolicy, generate_session, render_raw

HEADER = "2023-07-13 16:06:08,640 MainThread INFO LLM:gpt-4-32k\n2023-07-13 16:06:08,640 MainThread INFO Reset step?:30\n"


def _strip(text):
    return "\n".join(line.rstrip() for line in text.strip("\n").split("\n"))


def test_raw_sample_events():
    raw = parse_raw_log(bundled_raw_sample())
    assert len(raw.of_kind("step")) == 3
    resets = raw.of_kind("reset")
    assert [r.text.strip() for r in resets] == ["0"]
    assert raw.warnings == []


def test_sample_round_trip(sample_cleaned):
    expected = (FIXTURES / "sample_cleaned.txt").read_text(encoding="utf-8")
    assert _strip(render_cleaned(sample_cleaned)) == _strip(expected)


def test_intro_captured(sample_cleaned):
    assert sample_cleaned.intro.startswith("-= Home =-")
    assert "GAME START" not in sample_cleaned.intro
    assert render_cleaned(sample_cleaned).startswith("-= Home =-")


def test_step_without_npc(sample_cleaned):
    third = sample_cleaned.steps[2]
    assert third.npc_utterances == ()
    assert third.location == "main street"


def test_world_feedback_carried_within_round(sample_cleaned):
    assert sample_cleaned.steps[1].world_feedback == sample_cleaned.steps[0].world_feedback


def test_header_only_file():
    with pytest.raises(LogFormatError, match="no game steps"):
        parse_raw_log(HEADER)


def test_empty_file():
    with pytest.raises(LogFormatError):
        parse_raw_log("")


@pytest.mark.parametrize(
    "mutate",
    [
        lambda ts: ts.replace("-", "/", 1),
        lambda ts: ts.replace(",", ".", 1),
        lambda ts: ts[:11] + "25" + ts[13:],
        lambda ts: ts[:-1],
    ],
)
def test_malformed_timestamp_warns_and_skips(mutate):
    lines = bundled_raw_sample().splitlines()
    idx = next(i for i, l in enumerate(lines) if "<NPC>" in l or "[id]" in l)
    ts, rest = lines[idx][:23], lines[idx][23:]
    bad = mutate(ts)
    lines[idx] = bad + rest
    raw = parse_raw_log("\n".join(lines) + "\n")
    assert any("malformed timestamp" in w for w in raw.warnings)
    assert all(e.line != idx + 1 for e in raw.events)


def test_processed_wins_over_player():
    text = bundled_raw_sample().replace("<Player> go west", "<Player> walk to the west please")
    cleaned = clean_log(parse_raw_log(text))
    assert cleaned.steps[0].player_action == "go west"


def test_player_line_used_without_processed():
    lines = [l for l in bundled_raw_sample().splitlines() if "<Player_processed>" not in l]
    cleaned = clean_log(parse_raw_log("\n".join(lines)))
    assert cleaned.steps[0].player_action == "go west"
    assert cleaned.steps[0].inventory == ()


def test_clean_is_deterministic():
    raw = bundled_raw_sample()
    assert clean_log(parse_raw_log(raw)) == clean_log(parse_raw_log(raw))


def test_cleaned_text_round_trip(sample_cleaned):
    text = render_cleaned(sample_cleaned)
    assert parse_cleaned(text, "sample") == sample_cleaned


def test_empty_steps_renders_intro_only():
    log = CleanedLog("s", "-= Home =-\nYou wake up.", ())
    assert render_cleaned(log).strip() == "-= Home =-\nYou wake up."


def _steps(n, resets=()):
    out, in_round = [], 0
    for t in range(1, n + 1):
        in_round += 1
        out.append(GameStep(in_round, t, "look", None, location="home"))
        if t in resets:
            in_round = 0
    return CleanedLog("s", "intro", tuple(out), tuple(resets))


def _shape(sections):
    return [tuple(s.step_total for s in sec.steps) for sec in sections]


def test_segment_even():
    assert _shape(segment(_steps(4), 2)) == [(1, 2), (3, 4)]


def test_segment_odd():
    assert [len(s.steps) for s in segment(_steps(5), 2)] == [2, 2, 1]


def test_segment_respects_reset():
    sections = segment(_steps(4, resets=(3,)), 2)
    assert _shape(sections) == [(1, 2), (3,), (4,)]
    assert sections[2].reset_before == 3


def test_segment_window_zero():
    with pytest.raises(ValueError):
        segment(_steps(2), 0)


@given(st.integers(0, 40), st.integers(1, 5), st.sets(st.integers(1, 40), max_size=4))
@settings(max_examples=200, deadline=None)
def test_segment_property_no_loss(n, window, resets):
    log = _steps(n, tuple(sorted(r for r in resets if r < n)))
    sections = segment(log, window)
    flat = [s for sec in sections for s in sec.steps]
    assert flat == list(log.steps)
    marks = set(log.reset_markers)
    for sec in sections:
        assert 1 <= len(sec.steps) <= window
        assert not any(s.step_total in marks for s in sec.steps[:-1])


def test_validate_rejects_long_round():
    with pytest.raises(LogFormatError, match="round length"):
        validate_log(_steps(5), round_length=4)


def test_validate_rejects_non_increasing():
    log = CleanedLog("s", "", (GameStep(1, 2, "a", None), GameStep(2, 2, "b", None)))
    with pytest.raises(LogFormatError, match="not increasing"):
        validate_log(log)


def test_synthetic_logs_round_trip():
    graph = bundled_graph()
    for seed in range(100):
        rounds = 1 + seed % 3
        cleaned, _ = generate_session(graph, PlayerPolicy(wander=0.2, seed=seed), rounds, 8, f"p{seed}")
        raw = render_raw(cleaned, 8)
        again = clean_log(parse_raw_log(raw), f"p{seed}", 8)
        assert again == cleaned
        assert parse_cleaned(render_cleaned(cleaned), f"p{seed}", 8) == cleaned
        for step in cleaned.steps:
            assert step.step_in_round <= 8


def test_load_log_by_suffix(tmp_path, sample_cleaned):
    (tmp_path / "a.log").write_text(bundled_raw_sample(), encoding="utf-8")
    (tmp_path / "a.txt").write_text(render_cleaned(sample_cleaned), encoding="utf-8")
    assert load_log(tmp_path / "a.log").steps == sample_cleaned.steps
    assert load_log(tmp_path / "a.txt").steps == sample_cleaned.steps


def test_untagged_line_continues_record():
    lines = bundled_raw_sample().splitlines()
    idx = next(i for i, l in enumerate(lines) if "<TextWorld>" in l)
    lines.insert(idx + 1, "A second line of world text.")
    cleaned = clean_log(parse_raw_log("\n".join(lines)))
    assert cleaned.steps[0].world_feedback.endswith("\nA second line of world text.")
