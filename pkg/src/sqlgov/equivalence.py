"""Semantic equivalence checking for SELECT-based queries.

Stage one summarizes each query's field provenance (innermost fragments
first, child summaries feeding parent prompts). A structural pre-filter
rejects pairs with mismatched output arity or base-table sets before any
provider call; surviving pairs go through an LLM field-alignment prompt with
per-field confidences. UNDECIDED is a first-class outcome: low-confidence
answers are never upgraded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .analysis import analyze_tree
from .errors import RejectedResponseError, UnsupportedStatementError
from .fragmenter import FragmentTree, decompose
from .prompts import alignment_prompt, intent_extract_prompt, parse_json_response
from .sqltext import normalized_text, tokenize

EQUIVALENT = "EQUIVALENT"
NOT_EQUIVALENT = "NOT_EQUIVALENT"
UNDECIDED = "UNDECIDED"

DEFAULT_CONFIDENCE_FLOOR = 0.7


@dataclass(frozen=True)
class FieldProvenance:
    output_name: str
    source_tables: tuple[str, ...]
    transformation: str
    conditions: tuple[str, ...]


@dataclass(frozen=True)
class IntentSummary:
    fields: tuple[FieldProvenance, ...]
    narrative: str

    def render(self) -> str:
        payload = {
            "fields": [
                {
                    "output_name": f.output_name,
                    "source_tables": sorted(f.source_tables),
                    "transformation": f.transformation,
                    "conditions": list(f.conditions),
                }
                for f in self.fields
            ],
            "narrative": self.narrative,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    def all_source_tables(self) -> set[str]:
        tables: set[str] = set()
        for f in self.fields:
            tables.update(t.lower() for t in f.source_tables)
        return tables


@dataclass(frozen=True)
class EquivalenceVerdict:
    verdict: str
    confidence: float
    field_mapping: tuple[tuple[int, int], ...] | None = None
    counterexample: str | None = None
    reason: str | None = None


@dataclass(frozen=True)
class QuerySkeleton:
    arity: int | None  # None when the projection contains a star
    base_tables: frozenset[str]
    tree: FragmentTree


def _require_select(query: str) -> None:
    for tok in tokenize(query):
        if tok.text == "(":
            continue
        head = tok.upper()
        if head in ("SELECT", "WITH"):
            return
        raise UnsupportedStatementError(
            f"only SELECT-based DML is supported, got leading token {head!r}")
    raise UnsupportedStatementError("no statement found")


def skeleton(query: str) -> QuerySkeleton:
    """Structural facts needed by the pre-filter; no provider involved."""
    _require_select(query)
    tree = decompose(query)
    facts = analyze_tree(tree)
    root_facts = facts[tree.root_id]
    arity = None if root_facts.select_has_star else root_facts.select_items
    return QuerySkeleton(
        arity=arity,
        base_tables=frozenset(root_facts.table_counts_subtree),
        tree=tree,
    )


def extract_intent(query: str, provider) -> IntentSummary:
    """Summarize field provenance, walking fragments innermost-first.

    Analysis order already numbers children before parents, so feeding
    summaries forward needs no extra bookkeeping.
    """
    _require_select(query)
    tree = decompose(query)
    summaries: dict[int, dict] = {}
    for fragment in tree.fragments:
        child_rendered = [
            f"fragment {c.id}: {json.dumps(summaries[c.id], sort_keys=True)}"
            for c in tree.children(fragment.id)
        ]
        env = intent_extract_prompt(fragment, child_rendered)
        response = provider.complete(env)
        try:
            data = parse_json_response(response)
        except (ValueError, TypeError) as exc:
            raise RejectedResponseError(
                f"intent extraction for fragment {fragment.id} returned "
                f"invalid JSON") from exc
        if not isinstance(data, dict):
            raise RejectedResponseError(
                f"intent extraction for fragment {fragment.id} must return "
                f"a JSON object")
        summaries[fragment.id] = data
    main = summaries[tree.root_id]
    fields = tuple(
        FieldProvenance(
            output_name=str(f.get("output_name", "")),
            source_tables=tuple(f.get("source_tables", [])),
            transformation=str(f.get("transformation", "")),
            conditions=tuple(f.get("conditions", [])),
        )
        for f in main.get("fields", [])
    )
    facts = analyze_tree(tree)
    root_facts = facts[tree.root_id]
    if not root_facts.select_has_star and root_facts.select_items \
            and len(fields) != root_facts.select_items:
        raise RejectedResponseError(
            f"intent summary carries {len(fields)} fields but the outermost "
            f"SELECT projects {root_facts.select_items}")
    return IntentSummary(fields=fields, narrative=str(main.get("narrative", "")))


def prefilter(a: IntentSummary, b: IntentSummary) -> EquivalenceVerdict | None:
    """Schema-level heuristics: mismatched field count or source-table union
    rejects the pair outright; otherwise the pair proceeds."""
    if len(a.fields) != len(b.fields):
        return EquivalenceVerdict(
            verdict=NOT_EQUIVALENT, confidence=1.0,
            reason=f"output arity differs: {len(a.fields)} vs {len(b.fields)}")
    ta, tb = a.all_source_tables(), b.all_source_tables()
    if ta != tb:
        return EquivalenceVerdict(
            verdict=NOT_EQUIVALENT, confidence=1.0,
            reason=f"source tables differ: {sorted(ta)} vs {sorted(tb)}")
    return None


def _skeleton_mismatch(a: QuerySkeleton, b: QuerySkeleton) -> str | None:
    if a.arity is not None and b.arity is not None and a.arity != b.arity:
        return f"output arity differs: {a.arity} vs {b.arity}"
    if a.base_tables != b.base_tables:
        return (f"base tables differ: {sorted(a.base_tables)} vs "
                f"{sorted(b.base_tables)}")
    return None


def check_equivalence(a: str, b: str, provider,
                      confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR) -> EquivalenceVerdict:
    """Full pipeline: identity short-circuit, structural pre-filter (zero
    provider calls on rejection), then intent extraction and field alignment."""
    ska = skeleton(a)
    skb = skeleton(b)
    if normalized_text(a) == normalized_text(b):
        n = ska.arity or 0
        return EquivalenceVerdict(
            verdict=EQUIVALENT, confidence=1.0,
            field_mapping=tuple((i, i) for i in range(n)),
            reason="identical normalized text")
    mismatch = _skeleton_mismatch(ska, skb)
    if mismatch is not None:
        return EquivalenceVerdict(verdict=NOT_EQUIVALENT, confidence=1.0,
                                  reason=mismatch)
    intent_a = extract_intent(a, provider)
    intent_b = extract_intent(b, provider)
    rejected = prefilter(intent_a, intent_b)
    if rejected is not None:
        return rejected
    return _align(intent_a, intent_b, provider, confidence_floor)


def _align(intent_a: IntentSummary, intent_b: IntentSummary, provider,
           confidence_floor: float) -> EquivalenceVerdict:
    env = alignment_prompt(intent_a.render(), intent_b.render())
    response = provider.complete(env)
    try:
        data = parse_json_response(response)
    except (ValueError, TypeError) as exc:
        raise RejectedResponseError("alignment response is not valid JSON") from exc
    mappings = data.get("mappings", []) if isinstance(data, dict) else []
    n = len(intent_a.fields)
    if n == 0:
        return EquivalenceVerdict(verdict=UNDECIDED, confidence=0.0,
                                  reason="no output fields extracted")
    confidences = [float(m.get("confidence", 0.0)) for m in mappings]

    for m in mappings:
        if not m.get("equivalent", False):
            counterexample = m.get("counterexample")
            conf = float(m.get("confidence", 0.0))
            if counterexample:
                return EquivalenceVerdict(
                    verdict=NOT_EQUIVALENT, confidence=conf,
                    counterexample=str(counterexample),
                    reason=f"field pair ({m.get('left')}, {m.get('right')}) "
                           f"not equivalent")
            return EquivalenceVerdict(
                verdict=UNDECIDED, confidence=conf,
                reason="provider reported a non-equivalent field without a "
                       "counterexample")

    lefts = [m.get("left") for m in mappings]
    rights = [m.get("right") for m in mappings]
    bijective = (
        sorted(lefts) == list(range(n)) and sorted(rights) == list(range(n))
    )
    if not bijective:
        return EquivalenceVerdict(
            verdict=UNDECIDED,
            confidence=min(confidences) if confidences else 0.0,
            reason="field mapping is not a bijection over all output positions")
    low = [c for c in confidences if c < confidence_floor]
    if low:
        return EquivalenceVerdict(
            verdict=UNDECIDED, confidence=min(confidences),
            reason=f"confidence below floor {confidence_floor}")
    return EquivalenceVerdict(
        verdict=EQUIVALENT,
        confidence=min(confidences) if confidences else 0.0,
        field_mapping=tuple(sorted((int(m["left"]), int(m["right"]))
                                   for m in mappings)),
    )
