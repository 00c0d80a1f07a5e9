import math
import random
from types import SimpleNamespace

import pytest

from dags import make_graph, random_dag
from gamebug.analyzer import completion_table
from gamebug.ingest import segment, validate_log
from gamebug.oracles import brute_force_legal, legal_plays, oracle_stats
from gamebug.summarizer import parse_summary
from gamebug.synth import (
    PlayerPolicy,
    generate_cohort,
    generate_session,
    perfect_grouping,
    perfect_script,
    section_replies,
)


def test_all_success_reaches_terminal(dejaboom):
    always = {sid: 1.0 for sid in dejaboom.scene_ids}
    cleaned, truth = generate_session(dejaboom, PlayerPolicy(always, 0.0, seed=1), 1, 30)
    done = [sid for sid, _ in truth.completed]
    assert done[-1] == dejaboom.terminal
    assert len(done) == len(cleaned.steps)
    assert dejaboom.is_completion_legal(truth.completed)
    assert brute_force_legal(dejaboom, truth.completed)


def test_all_failure_completes_nothing(dejaboom):
    never = {sid: 0.0 for sid in dejaboom.scene_ids}
    cleaned, truth = generate_session(dejaboom, PlayerPolicy(never, 0.0, seed=1), 2, 10)
    assert truth.completed == []
    assert len(truth.steps) == 20
    assert all(not s.success and len(s.mapped_scenes) == 1 for s in truth.steps)
    assert cleaned.reset_markers == (10,)


def test_seed_determinism(dejaboom):
    a = generate_cohort(dejaboom, 4, seed=7, rounds=2)
    b = generate_cohort(dejaboom, 4, seed=7, rounds=2)
    assert a == b
    assert generate_cohort(dejaboom, 4, seed=8, rounds=2) != a


def test_policy_validation():
    with pytest.raises(ValueError):
        PlayerPolicy({"A1": 1.5})
    with pytest.raises(ValueError):
        PlayerPolicy(wander=-0.1)


def test_generated_logs_are_valid(dejaboom):
    for cleaned, truth in generate_cohort(dejaboom, 10, seed=2, rounds=3, round_length=12):
        validate_log(cleaned, 12)
        assert [s.step_total for s in truth.steps] == [s.step_total for s in cleaned.steps]


def test_ground_truth_passes_brute_force():
    rng = random.Random(5)
    for _ in range(60):
        g = random_dag(rng.randint(1, 8), rng, rng.randint(1, 3))
        plays = legal_plays(g)
        cohort = generate_cohort(g, 3, rng.randrange(1000), 2, 6, wander=0.2)
        for _, truth in cohort:
            assert brute_force_legal(g, truth.completed, plays)
            assert g.is_completion_legal(truth.completed)


def test_example_pair_on_subgraph():
    g = make_graph(2, [(1, [0])])
    assert brute_force_legal(g, [("S0", 2), ("S1", 4)])
    assert not brute_force_legal(g, [("S1", 2), ("S0", 4)])


def test_oracle_hand_count():
    truths = [SimpleNamespace(completed=[("X", 3)] if i == 2 else [], steps=[]) for i in range(6)]
    table = oracle_stats(truths, ["X", "Y"])
    assert table["X"]["completion_rate"] == 1 / 6
    assert table["Y"]["players_completed"] == 0


def test_oracle_all_complete():
    truths = [SimpleNamespace(completed=[("X", 1), ("Y", 2)], steps=[]) for _ in range(3)]
    assert all(row["completion_rate"] == 1.0 for row in oracle_stats(truths, ["X", "Y"]).values())


def test_oracle_needs_sessions():
    with pytest.raises(ValueError):
        oracle_stats([], ["X"])


def _at_least(k, n, p):
    return sum(math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(k, n + 1))


def test_rates_converge_on_chain():
    # wander 0 and a chain: each step attempts the single open scene,
    # so scene k is done iff at least k+1 of the n attempts succeed
    g = make_graph(3, [(1, [0]), (2, [1])])
    n, p = 8, 0.3
    truths = [t for _, t in generate_cohort(g, 500, seed=0, rounds=1, round_length=n, wander=0.0, default_success=p)]
    rows = completion_table(truths, g)
    for k, row in enumerate(rows):
        assert row.completion_rate == pytest.approx(_at_least(k + 1, n, p), abs=0.05)


def test_section_replies_parse_back(dejaboom):
    cleaned, truth = generate_session(dejaboom, PlayerPolicy(wander=0.3, seed=4), 2, 7, "p")
    replies = section_replies(dejaboom, cleaned, truth, 2)
    assert len(replies) == len(segment(cleaned, 2))
    steps = [s for r in replies for s in parse_summary(r, dejaboom).steps]
    assert steps == truth.steps
    assert list(parse_summary(replies[-1], dejaboom).completed) == truth.completed


def test_perfect_grouping_groups_identical_text():
    assert perfect_grouping(["a.", "b.", "a."]) == '{"clusters": [{"label": "a.", "members": [1, 3]}, {"label": "b.", "members": [2]}]}'


def test_perfect_script_length(dejaboom, policy):
    cohort = generate_cohort(dejaboom, 3, seed=1, rounds=2, success=policy)
    script = perfect_script(dejaboom, cohort, 2)
    sections = sum(len(segment(c, 2)) for c, _ in cohort)
    assert len(script) >= sections
    assert all(s.startswith('{"clusters"') for s in script[sections:])
