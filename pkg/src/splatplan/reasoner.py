"""High-level reconstruction-state reasoning.

Turns multi-modal low-level evidence (sphere samples, thumbnails, region
statistics) into a structured understanding: ranked target regions, a
per-direction uncertainty summary, observability verdicts, and the next
decision (acquire more views or manipulate the object). Two backends share one
schema: a deterministic rule-based reasoner (default) and a remote
chat-completion endpoint.
"""

from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BackendUnavailable, LengthMismatch, SchemaViolation

DECISION_ACQUIRE = "acquire_views"
DECISION_MANIPULATE = "manipulate"
MANIPULATION_KIND = "topple_to_expose"

_VERDICTS = ("observable", "occluded")


@dataclass(frozen=True)
class Decision:
    action: str  # DECISION_ACQUIRE or DECISION_MANIPULATE
    view_count: int = 0  # acquire_views only
    kind: str = ""  # manipulate only
    region: str = ""  # manipulate only


@dataclass
class HighLevelUnderstanding:
    """Structured reconstruction-state summary shared by all backends."""

    targets: list  # [(region label, severity rank)], ranks strictly increasing
    uncertainty_summary: list  # [(direction descriptor, mean omega)]
    observability: dict  # region label -> "observable" | "occluded"
    decision: Decision

    def validate(self) -> None:
        ranks = [r for _, r in self.targets]
        if any(not isinstance(r, int) for r in ranks) or sorted(ranks) != ranks or len(set(ranks)) != len(ranks):
            raise SchemaViolation("target severity ranks must be strictly increasing integers")
        for lab, _ in self.targets:
            if lab not in self.observability:
                raise SchemaViolation(f"target {lab!r} missing from observability")
        for lab, verdict in self.observability.items():
            if verdict not in _VERDICTS:
                raise SchemaViolation(f"bad observability verdict {verdict!r} for {lab!r}")
        for _, om in self.uncertainty_summary:
            if not (0.0 <= float(om) <= 1.0 or math.isnan(om)):
                raise SchemaViolation("uncertainty summary values must be in [0, 1]")
        d = self.decision
        if d.action == DECISION_ACQUIRE:
            if d.view_count < 1:
                raise SchemaViolation("acquire_views must request k >= 1")
        elif d.action == DECISION_MANIPULATE:
            if d.kind != MANIPULATION_KIND:
                raise SchemaViolation(f"unknown manipulation kind {d.kind!r}")
            if self.observability.get(d.region) != "occluded":
                raise SchemaViolation("manipulation target must be occluded")
        else:
            raise SchemaViolation(f"unknown decision action {d.action!r}")

    def to_dict(self) -> dict:
        return {
            "targets": [[lab, rank] for lab, rank in self.targets],
            "uncertainty_summary": [[d, om] for d, om in self.uncertainty_summary],
            "observability": dict(self.observability),
            "decision": {
                "action": self.decision.action,
                "view_count": self.decision.view_count,
                "kind": self.decision.kind,
                "region": self.decision.region,
            },
        }

    @staticmethod
    def from_dict(data) -> "HighLevelUnderstanding":
        try:
            targets = [(str(l), int(r)) for l, r in data["targets"]]
            summary = [(str(d), float(o)) for d, o in data["uncertainty_summary"]]
            obs = {str(k): str(v) for k, v in data["observability"].items()}
            dd = data["decision"]
            decision = Decision(
                action=str(dd["action"]),
                view_count=int(dd.get("view_count", 0)),
                kind=str(dd.get("kind", "")),
                region=str(dd.get("region", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"malformed understanding payload: {exc}", raw_reply=data)
        out = HighLevelUnderstanding(targets, summary, obs, decision)
        out.validate()
        return out


@dataclass
class ReasonerEvidence:
    """Evidence bundle handed to a backend.

    ``samples`` are UncertaintySample objects; ``thumbnails`` are small (h,w,3)
    float images, one per sample; ``region_summaries`` maps region label to
    {"mean_omega", "facing_count", "observability"}; ``scene`` carries support
    height, bbox, centroid, budget counters and the episode history digest.
    """

    samples: list
    thumbnails: list
    region_summaries: dict
    scene: dict

    def __post_init__(self):
        if len(self.thumbnails) != len(self.samples):
            raise ValueError("thumbnails must correspond 1:1 with samples")
        if not self.samples:
            raise ValueError("evidence needs at least one sample")


@dataclass(frozen=True)
class RuleConfig:
    manipulate_omega_threshold: float = 0.2
    target_omega_floor: float = 0.02
    facing_cone_deg: float = 60.0


def summarize_regions(samples, region_centroids, centroid, verdicts, coverage=None,
                      facing_cone_deg: float = 60.0, fallback_k: int = 3,
                      coverage_floor: float = 0.05) -> dict:
    """Per-region mean uncertainty from the samples facing each region.

    A sample faces a region when the angle between its offset from the object
    centroid and the region's outward direction is below the cone angle.
    Regions no sample faces (occluded ones by construction) fall back to the
    mean of the ``fallback_k`` nearest samples; if such a region has also never
    been covered by a capture (``coverage`` fraction below the floor), it is
    maximally uncertain, the same reading given to empty pixels.
    """
    centroid = np.asarray(centroid, dtype=float)
    positions = np.array([s.position for s in samples])
    omegas = np.array([s.omega for s in samples])
    offsets = positions - centroid
    offsets /= np.maximum(np.linalg.norm(offsets, axis=1, keepdims=True), 1e-12)
    cos_cone = math.cos(math.radians(facing_cone_deg))
    coverage = coverage or {}
    out = {}
    for lab, c_r in region_centroids.items():
        direction = np.asarray(c_r, dtype=float) - centroid
        n = np.linalg.norm(direction)
        direction = direction / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
        facing = offsets @ direction > cos_cone
        seen_fraction = float(coverage.get(lab, 1.0))
        if np.any(facing):
            mean = float(omegas[facing].mean())
            count = int(facing.sum())
        else:
            count = 0
            if seen_fraction < coverage_floor:
                mean = 1.0
            else:
                d = np.linalg.norm(positions - np.asarray(c_r, dtype=float), axis=1)
                k = min(fallback_k, len(samples))
                nearest = np.argsort(d, kind="stable")[:k]
                mean = float(omegas[nearest].mean())
        out[lab] = {
            "mean_omega": mean,
            "facing_count": count,
            "observability": verdicts.get(lab, "observable"),
            "coverage": seen_fraction,
        }
    return out


def understand(evidence: ReasonerEvidence, config: RuleConfig = RuleConfig()) -> HighLevelUnderstanding:
    """Deterministic rule-based reasoning over the evidence bundle.

    Regions are ranked by mean facing uncertainty; the decision is to topple
    when some occluded region stays above the uncertainty threshold and no
    manipulation has happened yet, otherwise to acquire the round's views.
    """
    summaries = evidence.region_summaries
    ranked = sorted(summaries.items(), key=lambda kv: (-kv[1]["mean_omega"], kv[0]))
    targets = [
        (lab, i + 1)
        for i, (lab, s) in enumerate(
            [(l, s) for l, s in ranked if s["mean_omega"] > config.target_omega_floor]
        )
    ]
    observability = {lab: summaries[lab]["observability"] for lab in summaries}
    summary = [(lab, s["mean_omega"]) for lab, s in ranked]

    manipulation_done = bool(evidence.scene.get("manipulation_done", False))
    candidate = None
    if not manipulation_done:
        for lab, s in ranked:
            if s["mean_omega"] > config.manipulate_omega_threshold and s["observability"] == "occluded":
                candidate = lab
                break
    if candidate is not None:
        decision = Decision(action=DECISION_MANIPULATE, kind=MANIPULATION_KIND, region=candidate)
    else:
        remaining = int(evidence.scene.get("remaining_budget", 1))
        per_round = int(evidence.scene.get("views_per_round", 1))
        decision = Decision(action=DECISION_ACQUIRE, view_count=max(1, min(per_round, remaining)))
    out = HighLevelUnderstanding(targets, summary, observability, decision)
    out.validate()
    return out


# ------------------------------------------------------------- LLM backend

@dataclass(frozen=True)
class ServiceConfig:
    endpoint: str
    model: str = "gpt-4o"
    api_key_env: str = "SPLATPLAN_LLM_KEY"
    timeout_s: float = 30.0
    max_retries: int = 2


_SYSTEM_PROMPT = """You are the reasoning module of an active object-scanning robot.
You receive sphere-sample uncertainty measurements, per-region statistics, and
low-resolution thumbnails of the current reconstruction. Reply with a single
JSON object and nothing else, matching this schema:
{
  "targets": [[region, rank], ...],            // severity ranks 1,2,... strictly increasing
  "uncertainty_summary": [[region, omega], ...],
  "observability": {region: "observable"|"occluded", ...},
  "decision": {"action": "acquire_views", "view_count": k}
           or {"action": "manipulate", "kind": "topple_to_expose", "region": region}
}
Only propose "manipulate" for a region you also report as occluded."""


def _thumbnail_b64(img: np.ndarray) -> str:
    from PIL import Image

    data = (np.clip(img, 0, 1) * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def build_prompt(evidence: ReasonerEvidence) -> list:
    payload = {
        "scene": evidence.scene,
        "region_summaries": evidence.region_summaries,
        "samples": [
            {"position": s.position.tolist(), "omega": s.omega}
            for s in evidence.samples
        ],
    }
    content = [{"type": "text", "text": json.dumps(payload, sort_keys=True)}]
    for img in evidence.thumbnails:
        content.append(
            {
                "type": "image_url",
                "image_url": {"url": "data:image/png;base64," + _thumbnail_b64(img)},
            }
        )
    return [
        {"role": "system", "content": _SYSTEM_PROMPT},
        {"role": "user", "content": content},
    ]


def llm_understand(evidence: ReasonerEvidence, endpoint: ServiceConfig,
                   transcript_path=None) -> HighLevelUnderstanding:
    """Query a chat-completion endpoint for a structured understanding.

    Retries up to ``max_retries`` times on schema violations, then raises
    SchemaViolation carrying the raw reply. Connection problems raise
    BackendUnavailable; callers fall back to the rule-based backend.
    """
    import os

    import requests

    key = os.environ.get(endpoint.api_key_env, "")
    body = {
        "model": endpoint.model,
        "messages": build_prompt(evidence),
        "response_format": {"type": "json_object"},
        "temperature": 0.0,
    }
    headers = {"Content-Type": "application/json"}
    if key:
        headers["Authorization"] = f"Bearer {key}"

    last_reply = None
    last_error = None
    for attempt in range(endpoint.max_retries + 1):
        try:
            resp = requests.post(
                endpoint.endpoint, json=body, headers=headers, timeout=endpoint.timeout_s
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"endpoint unreachable: {exc}") from exc
        last_reply = resp.text
        if transcript_path is not None:
            with open(transcript_path, "a") as f:
                json.dump({"attempt": attempt, "request": body, "status": resp.status_code,
                           "response": resp.text}, f)
                f.write("\n")
        if resp.status_code != 200:
            raise BackendUnavailable(f"endpoint returned HTTP {resp.status_code}", raw_reply=resp.text)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
            return HighLevelUnderstanding.from_dict(json.loads(content))
        except (KeyError, IndexError, ValueError, SchemaViolation) as exc:
            last_error = exc
            continue
    raise SchemaViolation(
        f"no schema-valid reply after {endpoint.max_retries + 1} attempts: {last_error}",
        raw_reply=last_reply,
    )


def repetition_rate(transcripts, radius: float, angle_tol_deg: float = 10.0,
                    dist_tol_frac: float = 0.1) -> float:
    """Fraction of transcript pairs whose chosen viewpoint sets match.

    Transcripts are equal-length lists of viewpoint positions relative to the
    object centroid. Two sets match when an assignment pairs every viewpoint
    within the angular tolerance and within a radial tolerance of
    ``dist_tol_frac * radius``.
    """
    from scipy.optimize import linear_sum_assignment

    tr = [np.atleast_2d(np.asarray(t, dtype=float)) for t in transcripts]
    if len(tr) < 2:
        raise ValueError("need at least two transcripts")
    n = tr[0].shape[0]
    if any(t.shape[0] != n for t in tr):
        raise LengthMismatch("transcripts must have equal length")
    cos_tol = math.cos(math.radians(angle_tol_deg))
    dist_tol = dist_tol_frac * radius

    def match(a, b) -> bool:
        ra = np.linalg.norm(a, axis=1)
        rb = np.linalg.norm(b, axis=1)
        ua = a / np.maximum(ra[:, None], 1e-12)
        ub = b / np.maximum(rb[:, None], 1e-12)
        ang_ok = ua @ ub.T >= cos_tol
        dist_ok = np.abs(ra[:, None] - rb[None, :]) <= dist_tol
        feasible = ang_ok & dist_ok
        cost = np.where(feasible, 0.0, 1.0)
        rows, cols = linear_sum_assignment(cost)
        return bool(cost[rows, cols].sum() == 0.0)

    matches = 0
    total = 0
    for i in range(len(tr)):
        for j in range(i + 1, len(tr)):
            total += 1
            if match(tr[i], tr[j]):
                matches += 1
    return matches / total
