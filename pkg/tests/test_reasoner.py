import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from oracles import pair_match_count
from splatplan.errors import BackendUnavailable, LengthMismatch, SchemaViolation
from splatplan.geometry import look_at_or_fallback
from splatplan.reasoner import (
    DECISION_ACQUIRE,
    DECISION_MANIPULATE,
    Decision,
    HighLevelUnderstanding,
    ReasonerEvidence,
    RuleConfig,
    ServiceConfig,
    llm_understand,
    repetition_rate,
    summarize_regions,
    understand,
)
from splatplan.voxel import UncertaintySample


def sample(pos, omega, centroid=(0, 0, 0.15)):
    pos = np.asarray(pos, dtype=float)
    return UncertaintySample(pos, look_at_or_fallback(pos, centroid), omega)


CENTROID = np.array([0.0, 0.0, 0.15])
REGIONS = {
    "bottom": np.array([0.0, 0.0, 0.0]),
    "top": np.array([0.0, 0.0, 0.3]),
    "side:+x": np.array([0.2, 0.0, 0.15]),
    "side:-x": np.array([-0.2, 0.0, 0.15]),
    "side:+y": np.array([0.0, 0.2, 0.15]),
    "side:-y": np.array([0.0, -0.2, 0.15]),
}


def evidence_from(samples, verdicts, scene=None):
    summaries = summarize_regions(samples, REGIONS, CENTROID, verdicts)
    thumbs = [np.zeros((4, 4, 3)) for _ in samples]
    base_scene = {"remaining_budget": 10, "views_per_round": 2, "manipulation_done": False}
    base_scene.update(scene or {})
    return ReasonerEvidence(samples, thumbs, summaries, base_scene)


def ring_samples(omega_by_dir):
    out = []
    for d, om in omega_by_dir.items():
        pos = CENTROID + 0.8 * np.asarray(d, dtype=float)
        out.append(sample(pos, om))
    return out


ALL_OBSERVABLE = {lab: "observable" for lab in REGIONS}


# ----------------------------------------------------------------- rule-based

def test_pristine_acquires_views():
    samples = ring_samples(
        {(1, 0, 0): 0.012, (-1, 0, 0): 0.015, (0, 1, 0): 0.01, (0, -1, 0): 0.012, (0, 0, 1): 0.011,
         (0.7, 0.7, 0.2): 0.012}
    )
    verdicts = dict(ALL_OBSERVABLE)
    verdicts["bottom"] = "occluded"
    und = understand(evidence_from(samples, verdicts))
    assert und.targets == []  # nothing above the severity floor
    assert und.decision.action == DECISION_ACQUIRE
    assert und.decision.view_count == 2


def test_hidden_degraded_bottom_triggers_manipulation():
    # only the bottom is both occluded and uncertain: its fallback summary uses
    # the nearest (table-level) samples, which see the defect
    samples = ring_samples(
        {(1, 0, 0): 0.05, (-1, 0, 0): 0.04, (0, 1, 0): 0.05, (0, -1, 0): 0.04, (0, 0, 1): 0.03}
    )
    samples.append(sample(CENTROID + np.array([0.55, 0.0, -0.14]), 0.7))  # near table level
    verdicts = dict(ALL_OBSERVABLE)
    verdicts["bottom"] = "occluded"
    und = understand(evidence_from(samples, verdicts))
    assert und.decision.action == DECISION_MANIPULATE
    assert und.decision.region == "bottom"
    assert und.observability["bottom"] == "occluded"


def test_two_observable_defects_ranked_by_omega():
    samples = ring_samples(
        {(1, 0, 0): 0.6, (-1, 0, 0): 0.35, (0, 1, 0): 0.04, (0, -1, 0): 0.03, (0, 0, 1): 0.02}
    )
    verdicts = dict(ALL_OBSERVABLE)
    und = understand(evidence_from(samples, verdicts))
    assert und.decision.action == DECISION_ACQUIRE
    assert [lab for lab, _ in und.targets[:2]] == ["side:+x", "side:-x"]
    ranks = [r for _, r in und.targets]
    assert ranks == sorted(ranks) and len(set(ranks)) == len(ranks)


def test_manipulation_suppressed_after_first():
    samples = ring_samples({(1, 0, 0): 0.05, (-1, 0, 0): 0.04, (0, 1, 0): 0.05,
                            (0, -1, 0): 0.04, (0, 0, 1): 0.03})
    samples.append(sample(CENTROID + np.array([0.55, 0.0, -0.14]), 0.6))
    verdicts = dict(ALL_OBSERVABLE)
    verdicts["bottom"] = "occluded"
    und = understand(evidence_from(samples, verdicts, scene={"manipulation_done": True}))
    assert und.decision.action == DECISION_ACQUIRE


def test_rule_based_is_deterministic():
    samples = ring_samples({(1, 0, 0): 0.4, (-1, 0, 0): 0.1, (0, 1, 0): 0.2,
                            (0, -1, 0): 0.05, (0, 0, 1): 0.3})
    verdicts = dict(ALL_OBSERVABLE)
    a = understand(evidence_from(samples, verdicts)).to_dict()
    b = understand(evidence_from(samples, verdicts)).to_dict()
    assert a == b


def test_decision_evidence_consistency():
    # manipulate is only legal for occluded regions; the schema enforces it
    und = HighLevelUnderstanding(
        targets=[("side:+x", 1)],
        uncertainty_summary=[],
        observability={"side:+x": "observable"},
        decision=Decision(action=DECISION_MANIPULATE, kind="topple_to_expose", region="side:+x"),
    )
    with pytest.raises(SchemaViolation):
        und.validate()


def test_evidence_thumbnail_mismatch():
    s = ring_samples({(1, 0, 0): 0.1})
    with pytest.raises(ValueError):
        ReasonerEvidence(s, [], {}, {})


# ----------------------------------------------------------------- mock server

class _MockHandler(BaseHTTPRequestHandler):
    replies = []
    calls = 0

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        reply = _MockHandler.replies[min(_MockHandler.calls, len(_MockHandler.replies) - 1)]
        _MockHandler.calls += 1
        body = json.dumps({"choices": [{"message": {"content": reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def mock_server():
    server = HTTPServer(("127.0.0.1", 0), _MockHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


FIXTURE = {
    "targets": [["side:+x", 1]],
    "uncertainty_summary": [["side:+x", 0.5]],
    "observability": {"side:+x": "observable", "bottom": "occluded"},
    "decision": {"action": "acquire_views", "view_count": 2},
}


def simple_evidence():
    samples = ring_samples({(1, 0, 0): 0.5, (-1, 0, 0): 0.1, (0, 1, 0): 0.1,
                            (0, -1, 0): 0.1, (0, 0, 1): 0.1})
    return evidence_from(samples, ALL_OBSERVABLE)


def test_llm_mock_round_trip(mock_server):
    _MockHandler.replies = [json.dumps(FIXTURE)]
    _MockHandler.calls = 0
    und = llm_understand(simple_evidence(), ServiceConfig(endpoint=mock_server))
    assert und.to_dict() == HighLevelUnderstanding.from_dict(FIXTURE).to_dict()
    assert _MockHandler.calls == 1


def test_llm_retries_then_succeeds(mock_server, tmp_path):
    _MockHandler.replies = ["not json{", json.dumps({"targets": "bad"}), json.dumps(FIXTURE)]
    _MockHandler.calls = 0
    transcript = tmp_path / "transcript.jsonl"
    und = llm_understand(
        simple_evidence(), ServiceConfig(endpoint=mock_server), transcript_path=transcript
    )
    assert und.decision.action == DECISION_ACQUIRE
    assert _MockHandler.calls == 3  # two schema failures, then success
    assert len(transcript.read_text().strip().splitlines()) == 3


def test_llm_schema_violation_after_retries(mock_server):
    _MockHandler.replies = ["nope", "nope", "nope"]
    _MockHandler.calls = 0
    with pytest.raises(SchemaViolation) as err:
        llm_understand(simple_evidence(), ServiceConfig(endpoint=mock_server))
    assert err.value.raw_reply is not None
    assert _MockHandler.calls == 3


def test_llm_unreachable_endpoint():
    cfg = ServiceConfig(endpoint="http://127.0.0.1:9/nothing", timeout_s=2.0)
    with pytest.raises(BackendUnavailable):
        llm_understand(simple_evidence(), cfg)


def test_both_backends_pass_same_validation(mock_server):
    _MockHandler.replies = [json.dumps(FIXTURE)]
    _MockHandler.calls = 0
    rule = understand(simple_evidence())
    llm = llm_understand(simple_evidence(), ServiceConfig(endpoint=mock_server))
    for und in (rule, llm):
        round_tripped = HighLevelUnderstanding.from_dict(und.to_dict())
        round_tripped.validate()


# -------------------------------------------------------------- repetition rate

def ring(radius, n, phase=0.0):
    az = phase + np.arange(n) * 2 * np.pi / n
    return np.column_stack([radius * np.cos(az), radius * np.sin(az), np.full(n, 0.2)])


def test_repetition_identical():
    t = [ring(1.0, 5) for _ in range(4)]
    assert repetition_rate(t, radius=1.0) == 1.0


def test_repetition_fully_distinct():
    t = [ring(1.0, 5, phase=np.radians(17.0 * i)) for i in range(4)]
    # pairwise ring rotations of 17/34/51 deg: outside tolerance, clear of the 72 deg spacing
    assert repetition_rate(t, radius=1.0) == 0.0


def test_repetition_matches_pair_count_oracle():
    base = ring(1.0, 4)
    others = [ring(1.0, 4, phase=np.radians(p)) for p in (25.0, 45.0, 65.0, 78.0)]
    transcripts = [base.copy() for _ in range(11)] + others
    rate = repetition_rate(transcripts, radius=1.0)

    def match_fn(a, b):
        return bool(np.allclose(a, b, atol=1e-9))

    matches, total = pair_match_count(transcripts, match_fn)
    # the tolerance-based matcher must agree with exact matching here: the
    # distinct rings are far outside the 10 degree tolerance of each other
    assert total == 105
    assert rate >= matches / total  # tolerant matcher can only find more pairs
    assert rate == pytest.approx(matches / total)


def test_repetition_length_mismatch():
    with pytest.raises(LengthMismatch):
        repetition_rate([ring(1.0, 4), ring(1.0, 5)], radius=1.0)


def test_repetition_order_insensitive_within_set():
    a = ring(1.0, 6)
    b = a[::-1].copy()
    assert repetition_rate([a, b], radius=1.0) == 1.0
