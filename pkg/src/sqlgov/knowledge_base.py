"""Per-tool knowledge stores: actionable rules and tagged historical cases.

Rules match fragments through structural predicates; historical cases and
error strategies are retrieved by cosine similarity over template embeddings.
Persistence is JSON-Lines per sub-store plus a meta file, loadable without
any external services.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .analysis import FragmentFacts, analyze_tree, duplicated_scan_tables
from .errors import (
    DimensionMismatchError,
    IoFailure,
    SchemaVersionMismatchError,
    ZeroVectorError,
)
from .fragmenter import Fragment, FragmentTree, decompose_lenient
from .sqltext import templatize

SCHEMA_VERSION = 1

REWRITER = "REWRITER"
CORRECTOR = "CORRECTOR"
MODIFIER = "MODIFIER"
VERIFIER = "VERIFIER"
TOOLS = (REWRITER, CORRECTOR, MODIFIER, VERIFIER)

CANDIDATE = "CANDIDATE"
VERIFIED = "VERIFIED"
RETIRED = "RETIRED"


@dataclass
class RuleEntry:
    index: str
    description: str
    matcher: list[dict] | None
    tool: str
    status: str = CANDIDATE
    created_at: float = 0.0
    verified_at: float | None = None


@dataclass
class HistoricalCase:
    index: str
    details: str
    tag: list[str]
    template: str
    embedding: tuple[float, ...]


@dataclass
class ErrorStrategy:
    index: str
    message_pattern: str
    needs_schema: bool
    localized: bool
    guidance: str
    embedding: tuple[float, ...]


@dataclass
class ToolStats:
    rule_count: int = 0
    case_count: int = 0
    update_times: list[float] = field(default_factory=list)


@dataclass
class KnowledgeSnapshot:
    rules: list[RuleEntry] = field(default_factory=list)
    cases: list[HistoricalCase] = field(default_factory=list)
    strategies: list[ErrorStrategy] = field(default_factory=list)
    stats: dict[str, ToolStats] = field(default_factory=dict)

    def rules_for(self, tool: str, status: str | None = None) -> list[RuleEntry]:
        return [r for r in self.rules
                if r.tool == tool and (status is None or r.status == status)]

    def n_current(self, tool: str) -> int:
        return len(self.rules_for(tool, VERIFIED))

    def rule_by_index(self, index: str, tool: str) -> RuleEntry | None:
        for rule in self.rules:
            if rule.index == index and rule.tool == tool \
                    and rule.status != RETIRED:
                return rule
        return None


def cosine_similarity(a, b) -> float:
    va = np.asarray(a, dtype=float)
    vb = np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


# --- matcher predicates -------------------------------------------------

def _pred_contains_operator(facts, tree, fragment, params) -> bool:
    return facts[fragment.id].contains_operator(params["op"])


def _pred_same_table_scanned(facts, tree, fragment, params) -> bool:
    min_count = int(params.get("min_count", 2))
    return bool(duplicated_scan_tables(fragment.id, facts, tree, min_count))


def _pred_outer_join_with_null_filter(facts, tree, fragment, params) -> bool:
    f = facts[fragment.id]
    return f.has_outer_join and f.where_has_is_not_null


def _pred_in_subquery(facts, tree, fragment, params) -> bool:
    return facts[fragment.id].in_subquery


def _pred_union_all_unprojected(facts, tree, fragment, params) -> bool:
    f = facts[fragment.id]
    return f.has_set_op and f.set_op_arm_star


def _pred_scalar_subquery_in_select(facts, tree, fragment, params) -> bool:
    return facts[fragment.id].scalar_subquery_in_select


MATCHER_PREDICATES = {
    "contains_operator": _pred_contains_operator,
    "same_table_scanned": _pred_same_table_scanned,
    "outer_join_with_null_filter": _pred_outer_join_with_null_filter,
    "in_subquery": _pred_in_subquery,
    "union_all_unprojected": _pred_union_all_unprojected,
    "scalar_subquery_in_select": _pred_scalar_subquery_in_select,
}


def matcher_holds(matcher: list[dict], fragment: Fragment, tree: FragmentTree,
                  facts: dict[int, FragmentFacts]) -> bool:
    """A matcher is a conjunction of predicates from the fixed vocabulary."""
    for clause in matcher:
        pred = MATCHER_PREDICATES.get(clause.get("pred", ""))
        if pred is None or not pred(facts, tree, fragment, clause):
            return False
    return bool(matcher)


class KnowledgeStore:
    """Read view over a snapshot plus the embedding provider used for retrieval."""

    def __init__(self, snapshot: KnowledgeSnapshot, embedder,
                 strategy_threshold: float = 0.55, default_k: int = 5):
        self.snapshot = snapshot
        self.embedder = embedder
        self.strategy_threshold = strategy_threshold
        self.default_k = default_k

    def match_rules(self, fragment: Fragment, tool: str,
                    tree: FragmentTree | None = None,
                    facts: dict[int, FragmentFacts] | None = None) -> list[RuleEntry]:
        """All VERIFIED rules whose matcher holds on the fragment, by index.

        Rules without a matcher are retrieval-only (prompt guidance) and
        never match here.
        """
        if tree is None:
            tree, _ = decompose_lenient(fragment.text)
            fragment = tree.root
        if facts is None:
            facts = analyze_tree(tree)
        hits = []
        for rule in self.snapshot.rules_for(tool, VERIFIED):
            if rule.matcher and matcher_holds(rule.matcher, fragment, tree, facts):
                hits.append(rule)
        hits.sort(key=lambda r: r.index)
        return hits

    def retrieve_cases(self, query: str, tag_filter: list[str] | None = None,
                       k: int | None = None) -> list[tuple[HistoricalCase, float]]:
        """Top-k cases by cosine similarity of masked templates, tag-filtered."""
        k = self.default_k if k is None else k
        if not self.snapshot.cases:
            return []
        query_vec = self.embedder.embed(templatize(query))
        scored = []
        for case in self.snapshot.cases:
            if tag_filter is not None and not set(case.tag) & set(tag_filter):
                continue
            scored.append((case, cosine_similarity(query_vec, case.embedding)))
        scored.sort(key=lambda cs: (-cs[1], cs[0].index))
        return scored[:k]

    def retrieve_strategy(self, error_key: str) -> tuple[ErrorStrategy, float] | None:
        """Nearest error strategy, or None below the confidence threshold."""
        if not error_key or not error_key.strip():
            raise ValueError("error_key must be non-empty")
        if not self.snapshot.strategies:
            return None
        key_vec = self.embedder.embed(error_key)
        scored = [(s, cosine_similarity(key_vec, s.embedding))
                  for s in self.snapshot.strategies]
        scored.sort(key=lambda ss: (-ss[1], ss[0].index))
        best, sim = scored[0]
        if sim >= self.strategy_threshold:
            return best, sim
        return None


# --- persistence ---------------------------------------------------------

_FILES = {
    "rules": "rules.jsonl",
    "cases": "cases.jsonl",
    "strategies": "strategies.jsonl",
}


def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def save_snapshot(snapshot: KnowledgeSnapshot, path: str | Path) -> None:
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / _FILES["rules"], "w", encoding="utf-8") as fh:
            for rule in snapshot.rules:
                fh.write(_dump_line(asdict(rule)) + "\n")
        with open(directory / _FILES["cases"], "w", encoding="utf-8") as fh:
            for case in snapshot.cases:
                record = asdict(case)
                record["embedding"] = list(case.embedding)
                fh.write(_dump_line(record) + "\n")
        with open(directory / _FILES["strategies"], "w", encoding="utf-8") as fh:
            for strat in snapshot.strategies:
                record = asdict(strat)
                record["embedding"] = list(strat.embedding)
                fh.write(_dump_line(record) + "\n")
        meta = {
            "schema_version": SCHEMA_VERSION,
            "stats": {tool: asdict(ts) for tool, ts in snapshot.stats.items()},
        }
        with open(directory / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write snapshot to {directory}: {exc}") from exc


def _read_lines(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_snapshot(path: str | Path) -> KnowledgeSnapshot:
    directory = Path(path)
    meta_path = directory / "meta.json"
    try:
        if meta_path.exists():
            with open(meta_path, encoding="utf-8") as fh:
                meta = json.load(fh)
        else:
            meta = {"schema_version": SCHEMA_VERSION, "stats": {}}
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionMismatchError(
                f"snapshot schema_version {meta.get('schema_version')!r}; "
                f"this build reads version {SCHEMA_VERSION}")
        rules = [RuleEntry(**r) for r in _read_lines(directory / _FILES["rules"])]
        cases = []
        for record in _read_lines(directory / _FILES["cases"]):
            record["embedding"] = tuple(record["embedding"])
            cases.append(HistoricalCase(**record))
        strategies = []
        for record in _read_lines(directory / _FILES["strategies"]):
            record["embedding"] = tuple(record["embedding"])
            strategies.append(ErrorStrategy(**record))
        stats = {tool: ToolStats(**ts) for tool, ts in meta.get("stats", {}).items()}
        return KnowledgeSnapshot(rules=rules, cases=cases,
                                 strategies=strategies, stats=stats)
    except OSError as exc:
        raise IoFailure(f"cannot read snapshot from {directory}: {exc}") from exc


def check_integrity(snapshot: KnowledgeSnapshot) -> list[str]:
    """Invariant violations as human-readable strings (empty = healthy)."""
    problems = []
    seen = set()
    for rule in snapshot.rules:
        if rule.status == RETIRED:
            continue
        key = (rule.tool, rule.index)
        if key in seen:
            problems.append(f"duplicate active rule index {key}")
        seen.add(key)
    all_indices = {r.index for r in snapshot.rules}
    for case in snapshot.cases:
        for tag in case.tag:
            if tag not in all_indices:
                problems.append(f"case {case.index} tags unknown rule {tag}")
        norm = math.sqrt(sum(x * x for x in case.embedding))
        if abs(norm - 1.0) > 1e-6:
            problems.append(f"case {case.index} embedding norm {norm:.8f}")
    for strat in snapshot.strategies:
        if not strat.guidance:
            problems.append(f"strategy {strat.index} has empty guidance")
    return problems
