"""Knowledge-base lifecycle: mine candidate rules from execution outputs,
trigger expert verification by count/time thresholds, and deduplicate
semantically equivalent rules by clustering their description embeddings.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NoHistoryError, RejectedResponseError, UnknownRuleError
from .knowledge_base import (
    CANDIDATE,
    RETIRED,
    VERIFIED,
    HistoricalCase,
    KnowledgeSnapshot,
    RuleEntry,
    ToolStats,
)
from .prompts import parse_json_response, rule_generation_prompt
from .sqltext import templatize

STATUS_OK = "OK"
STATUS_ERROR = "ERROR"
STATUS_SLOW = "SLOW"


@dataclass(frozen=True)
class LearningConfig:
    lam: float = 2.5          # capacity scaling for the count trigger
    beta_time: float = 1.3    # temporal adaptation for the time trigger
    dbscan_eps: float = 0.25  # cosine distance
    dbscan_min_pts: int = 2
    slow_percentile: float = 90.0
    slow_min_batch: int = 3   # records needed before the percentile rule applies


@dataclass(frozen=True)
class ExecutionRecord:
    sql: str
    status: str
    elapsed: float
    user_query: str | None = None
    error_log: str | None = None
    result_digest: str | None = None

    def __post_init__(self):
        if self.status == STATUS_ERROR and not self.error_log:
            raise ValueError("ERROR records must carry an error_log")

    @property
    def record_id(self) -> str:
        payload = f"{self.sql}|{self.status}|{self.elapsed}|{self.error_log}"
        return "rec-" + hashlib.sha1(payload.encode("utf-8")).hexdigest()[:12]


@dataclass
class CandidateRuleBatch:
    rules: list[RuleEntry]
    source_records: list[str]
    generated_at: float
    records: list[ExecutionRecord] = field(default_factory=list)

    def __post_init__(self):
        bad = [r.index for r in self.rules if r.status != CANDIDATE]
        if bad:
            raise ValueError(f"batch rules must be CANDIDATE, got {bad}")


def filter_records(records: list[ExecutionRecord],
                   cfg: LearningConfig = LearningConfig()) -> list[ExecutionRecord]:
    """Keep failures, flagged-slow records, and elapsed outliers above the
    batch percentile; deduplicate by masked SQL template (first wins)."""
    threshold = None
    if len(records) >= cfg.slow_min_batch:
        threshold = float(np.percentile([r.elapsed for r in records],
                                        cfg.slow_percentile))
    kept = []
    seen_templates = set()
    for record in records:
        interesting = (
            record.status == STATUS_ERROR
            or record.status == STATUS_SLOW
            or (threshold is not None and record.elapsed > threshold)
        )
        if not interesting:
            continue
        template = templatize(record.sql)
        if template in seen_templates:
            continue
        seen_templates.add(template)
        kept.append(record)
    return kept


def generate_rules(records: list[ExecutionRecord], provider, tool: str,
                   now: float, demonstrations: list[str] | None = None) -> CandidateRuleBatch:
    """Ask the LLM to distill rules from execution outputs.

    The response must be a JSON object keyed by problem-pattern labels; a
    malformed response is retried once, then rejected.
    """
    if not records:
        raise ValueError("generate_rules needs at least one record")
    env = rule_generation_prompt(records, demonstrations)
    parsed = None
    for _ in range(2):
        response = provider.complete(env)
        try:
            candidate = parse_json_response(response)
        except (ValueError, TypeError):
            continue
        if isinstance(candidate, dict):
            parsed = candidate
            break
    if parsed is None:
        raise RejectedResponseError(
            "rule-generation response was not a JSON object after one retry")
    rules = []
    for index, value in parsed.items():
        description = value if isinstance(value, str) else \
            json.dumps(value, sort_keys=True)
        rules.append(RuleEntry(index=index, description=description,
                               matcher=None, tool=tool, status=CANDIDATE,
                               created_at=now))
    return CandidateRuleBatch(
        rules=rules,
        source_records=[r.record_id for r in records],
        generated_at=now,
        records=list(records),
    )


def count_threshold(n_current: int, cfg: LearningConfig = LearningConfig()) -> int:
    if n_current < 0:
        raise ValueError("n_current must be non-negative")
    return math.floor(cfg.lam * math.sqrt(n_current))


def time_threshold(historical_intervals: list[float],
                   cfg: LearningConfig = LearningConfig()) -> float:
    if not historical_intervals:
        raise NoHistoryError("no update intervals recorded yet")
    return cfg.beta_time * (sum(historical_intervals) / len(historical_intervals))


def should_trigger_verification(pending_count: int, elapsed_since_update: float,
                                stats: ToolStats,
                                cfg: LearningConfig = LearningConfig()) -> bool:
    """True when pending rules exceed the count threshold or the elapsed time
    exceeds the time threshold (strict inequalities)."""
    if pending_count > count_threshold(stats.rule_count, cfg):
        return True
    intervals = [b - a for a, b in zip(stats.update_times, stats.update_times[1:])]
    try:
        t2 = time_threshold(intervals, cfg)
    except NoHistoryError:
        return False
    return elapsed_since_update > t2


def dbscan_labels(distance: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Classic DBSCAN over a precomputed distance matrix.

    Returns one label per point; -1 marks noise. Seeding follows index order,
    so results are deterministic for a fixed matrix.
    """
    n = distance.shape[0]
    UNVISITED, NOISE = -2, -1
    labels = np.full(n, UNVISITED, dtype=int)
    neighborhoods = [np.nonzero(distance[i] <= eps)[0] for i in range(n)]
    is_core = [len(nb) >= min_pts for nb in neighborhoods]
    cluster = 0
    for i in range(n):
        if labels[i] != UNVISITED:
            continue
        if not is_core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        seeds = deque(int(q) for q in neighborhoods[i])
        while seeds:
            q = seeds.popleft()
            if labels[q] == NOISE:
                labels[q] = cluster  # border point claimed by this cluster
            if labels[q] != UNVISITED:
                continue
            labels[q] = cluster
            if is_core[q]:
                seeds.extend(int(r) for r in neighborhoods[q])
        cluster += 1
    return labels


def _distance_matrix(embeddings: list[np.ndarray]) -> np.ndarray:
    mat = np.vstack(embeddings)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    unit = mat / norms
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    return 1.0 - cos


def cluster_rules(rules: list[RuleEntry], provider,
                  cfg: LearningConfig = LearningConfig()) -> list[list[str]]:
    """Group rules whose description embeddings sit within dbscan_eps cosine
    distance; noise points come back as singleton clusters."""
    if not rules:
        raise ValueError("cluster_rules needs at least one rule")
    embeddings = [provider.embed(rule.description) for rule in rules]
    if len(rules) == 1:
        return [[rules[0].index]]
    labels = dbscan_labels(_distance_matrix(embeddings),
                           cfg.dbscan_eps, cfg.dbscan_min_pts)
    clusters: list[list[str]] = []
    label_position: dict[int, int] = {}
    for i, rule in enumerate(rules):
        label = int(labels[i])
        if label == -1:
            clusters.append([rule.index])
            continue
        if label not in label_position:
            label_position[label] = len(clusters)
            clusters.append([])
        clusters[label_position[label]].append(rule.index)
    return clusters


def merge_cluster(cluster: list[RuleEntry],
                  embeddings: list[np.ndarray]) -> RuleEntry:
    """Medoid of the cluster: the member minimizing the summed L2 distance to
    all members. Ties go to the earliest created_at, then the index label."""
    if not cluster:
        raise ValueError("merge_cluster needs a non-empty cluster")
    totals = []
    for i, rule in enumerate(cluster):
        total = sum(float(np.linalg.norm(embeddings[i] - embeddings[j]))
                    for j in range(len(cluster)))
        totals.append((total, rule.created_at, rule.index, rule))
    totals.sort(key=lambda t: (t[0], t[1], t[2]))
    return totals[0][3]


def dedupe_snapshot(snapshot: KnowledgeSnapshot, provider, tool: str,
                    cfg: LearningConfig = LearningConfig()) -> tuple[KnowledgeSnapshot, list[dict]]:
    """Merge semantically equivalent rules for one tool.

    The medoid survives; absorbed rules are retired and cases tagged with an
    absorbed rule are re-tagged to the survivor (tag back-references union).
    """
    new = copy.deepcopy(snapshot)
    active = [r for r in new.rules if r.tool == tool and r.status != RETIRED]
    if len(active) < 2:
        return new, []
    clusters = cluster_rules(active, provider, cfg)
    by_index = {r.index: r for r in active}
    embeddings = {r.index: provider.embed(r.description) for r in active}
    merges = []
    for indices in clusters:
        if len(indices) < 2:
            continue
        members = [by_index[i] for i in indices]
        survivor = merge_cluster(members, [embeddings[i] for i in indices])
        absorbed = [r.index for r in members if r.index != survivor.index]
        for rule in members:
            if rule.index != survivor.index:
                rule.status = RETIRED
        for case in new.cases:
            if set(case.tag) & set(absorbed):
                tags = [survivor.index if t in absorbed else t for t in case.tag]
                deduped = list(dict.fromkeys(tags))
                case.tag.clear()
                case.tag.extend(deduped)
        merges.append({"survivor": survivor.index, "absorbed": absorbed})
    _refresh_counts(new, tool)
    return new, merges


def _render_details(record: ExecutionRecord) -> str:
    lines = [f"sql: {record.sql}", f"status: {record.status}",
             f"elapsed: {record.elapsed:.3f}s"]
    if record.user_query:
        lines.append(f"user query: {record.user_query}")
    if record.error_log:
        lines.append(f"log: {record.error_log}")
    if record.result_digest:
        lines.append(f"result: {record.result_digest}")
    return "\n".join(lines)


def _refresh_counts(snapshot: KnowledgeSnapshot, tool: str) -> None:
    stats = snapshot.stats.setdefault(tool, ToolStats())
    stats.rule_count = snapshot.n_current(tool)
    stats.case_count = len(snapshot.cases)


def apply_verification(snapshot: KnowledgeSnapshot, batch: CandidateRuleBatch,
                       decisions: dict[str, str], embedder,
                       now: float) -> KnowledgeSnapshot:
    """Apply expert ACCEPT/REJECT decisions to a candidate batch.

    Accepted rules become VERIFIED and the batch's source records enter the
    historical data tagged with every accepted index; rejected rules are
    retired; undecided rules stay CANDIDATE for the next threshold check.
    """
    known = {r.index for r in batch.rules}
    unknown = set(decisions) - known
    if unknown:
        raise UnknownRuleError(f"decisions reference unknown rules: {sorted(unknown)}")
    new = copy.deepcopy(snapshot)
    tool = batch.rules[0].tool if batch.rules else "REWRITER"

    def upsert(rule: RuleEntry) -> RuleEntry:
        for existing in new.rules:
            if existing.tool == rule.tool and existing.index == rule.index \
                    and existing.status != RETIRED:
                return existing
        clone = copy.deepcopy(rule)
        new.rules.append(clone)
        return clone

    accepted: list[str] = []
    for rule in batch.rules:
        verdict = decisions.get(rule.index)
        target = upsert(rule)
        if verdict == "ACCEPT":
            target.status = VERIFIED
            target.verified_at = now
            accepted.append(target.index)
        elif verdict == "REJECT":
            target.status = RETIRED
    if accepted:
        existing_cases = {c.index for c in new.cases}
        for record in batch.records:
            case_index = "case-" + record.record_id[4:]
            if case_index in existing_cases:
                continue
            template = templatize(record.sql)
            embedding = tuple(float(x) for x in embedder.embed(template))
            new.cases.append(HistoricalCase(
                index=case_index,
                details=_render_details(record),
                tag=list(accepted),
                template=template,
                embedding=embedding,
            ))
    if decisions:
        stats = new.stats.setdefault(tool, ToolStats())
        stats.update_times.append(now)
    _refresh_counts(new, tool)
    return new
