"""Two-stage query optimization: per-fragment evaluation, then guided rewriting.

Every fragment gets exactly one suggestion record. A rule hit routes the
fragment through the rule-guided prompt; otherwise a static efficiency screen
either clears the fragment outright (no LLM call) or sends it through the
exploratory prompt. The rewrite stage feeds the actionable suggestions plus
retrieved historical cases to the provider and validates the result parses.
"""

from __future__ import annotations

from dataclasses import dataclass

from .analysis import FragmentFacts, analyze_tree, duplicated_scan_tables
from .errors import RejectedResponseError
from .fragmenter import (
    AnalysisResult,
    Finding,
    FragmentTree,
    SITE_FROM,
    SUBQUERY,
    decompose,
    decompose_lenient,
)
from .knowledge_base import REWRITER, KnowledgeStore
from .prompts import (
    parse_json_response,
    rewrite_prompt,
    scenario1_prompt,
    scenario2_prompt,
)

RULE_GUIDED = "RULE_GUIDED"
EXPLORATORY = "EXPLORATORY"
ALREADY_EFFICIENT = "ALREADY_EFFICIENT"


@dataclass(frozen=True)
class RewriteSuggestion:
    fragment_id: int
    rule_index: str | None
    action: str
    rationale: str
    scenario: str


@dataclass(frozen=True)
class RewriteResult:
    original: str
    rewritten: str
    suggestions_applied: tuple[RewriteSuggestion, ...]
    cases_consulted: tuple[str, ...]
    verified: str | None = None


def _efficient(suggestion_id: int) -> RewriteSuggestion:
    return RewriteSuggestion(fragment_id=suggestion_id, rule_index=None,
                             action="", rationale="", scenario=ALREADY_EFFICIENT)


def passes_efficiency_screen(fragment_id: int, facts: dict[int, FragmentFacts],
                             tree: FragmentTree) -> bool:
    """Negative screen: single base-table scan at most, no scalar or predicate
    subqueries at this level, no outer-join null filtering, no duplicate
    scans, explicit projection list."""
    f = facts[fragment_id]
    if sum(f.table_counts_own.values()) > 1:
        return False
    non_from_children = [
        c for c in tree.children(fragment_id)
        if c.kind == SUBQUERY and c.clause_site != SITE_FROM
    ]
    if non_from_children:
        return False
    if f.has_outer_join and f.where_has_is_not_null:
        return False
    if duplicated_scan_tables(fragment_id, facts, tree):
        return False
    if f.select_has_star or (f.has_set_op and f.set_op_arm_star):
        return False
    return True


def _merge_actions(entries: list[dict]) -> tuple[str, str]:
    if len(entries) == 1:
        return (str(entries[0].get("action", "")),
                str(entries[0].get("rationale", "")))
    actions = [f"{i}. {e.get('action', '')}" for i, e in enumerate(entries, 1)]
    rationales = [f"{i}. {e.get('rationale', '')}" for i, e in enumerate(entries, 1)]
    return "\n".join(actions), "\n".join(rationales)


def analyze_fragments(query: str, store: KnowledgeStore,
                      tool: str = REWRITER) -> list[AnalysisResult]:
    """Rule-only analysis set: one result per fragment, findings from the
    matched rules. The LLM-free half of the evaluation stage."""
    tree = decompose(query)
    facts = analyze_tree(tree)
    results = []
    for fragment in tree.fragments:
        findings = tuple(
            Finding(rule_index=r.index, narrative=r.description,
                    confidence=1.0)
            for r in store.match_rules(fragment, tool, tree, facts)
        )
        results.append(AnalysisResult(fragment_id=fragment.id,
                                      findings=findings))
    return results


def evaluate(query: str, store: KnowledgeStore, provider) -> list[RewriteSuggestion]:
    """One suggestion per fragment, in analysis order."""
    tree = decompose(query)
    facts = analyze_tree(tree)
    suggestions: list[RewriteSuggestion] = []
    for fragment in tree.fragments:
        rules = store.match_rules(fragment, REWRITER, tree, facts)
        if rules:
            data = _ask_json(provider, scenario1_prompt(fragment, rules))
            allowed = {r.index for r in rules}
            applicable = [e for e in data.get("applicable", [])
                          if e.get("rule") in allowed]
            if not applicable:
                suggestions.append(_efficient(fragment.id))
                continue
            action, rationale = _merge_actions(applicable)
            suggestions.append(RewriteSuggestion(
                fragment_id=fragment.id,
                rule_index=str(applicable[0]["rule"]),
                action=action, rationale=rationale, scenario=RULE_GUIDED))
            continue
        if passes_efficiency_screen(fragment.id, facts, tree):
            suggestions.append(_efficient(fragment.id))
            continue
        data = _ask_json(provider, scenario2_prompt(fragment))
        entries = data.get("suggestions") or []
        if data.get("efficient") or not entries:
            suggestions.append(_efficient(fragment.id))
            continue
        action, rationale = _merge_actions(entries)
        suggestions.append(RewriteSuggestion(
            fragment_id=fragment.id, rule_index=None,
            action=action, rationale=rationale, scenario=EXPLORATORY))
    return suggestions


def _ask_json(provider, env) -> dict:
    response = provider.complete(env)
    try:
        data = parse_json_response(response)
    except (ValueError, TypeError) as exc:
        raise RejectedResponseError(
            f"{env.template_id} response is not valid JSON") from exc
    if not isinstance(data, dict):
        raise RejectedResponseError(
            f"{env.template_id} response must be a JSON object")
    return data


def _strip_fences(text: str) -> str:
    cleaned = text.strip("\n")
    if cleaned.startswith("```"):
        lines = cleaned.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip().startswith("```"):
            lines = lines[:-1]
        cleaned = "\n".join(lines).strip("\n")
    return cleaned


def rewrite(query: str, suggestions: list[RewriteSuggestion],
            store: KnowledgeStore, provider,
            k: int | None = None) -> RewriteResult:
    """Synthesize the rewritten query from suggestions and retrieved cases.

    With nothing actionable the original comes back unchanged and no provider
    call is made.
    """
    actionable = [s for s in suggestions
                  if s.scenario != ALREADY_EFFICIENT and s.action]
    if not actionable:
        return RewriteResult(original=query, rewritten=query,
                             suggestions_applied=(), cases_consulted=())
    tags = sorted({s.rule_index for s in actionable if s.rule_index}) or None
    scored_cases = store.retrieve_cases(query, tags, k)
    cases = [case for case, _ in scored_cases]
    response = provider.complete(rewrite_prompt(query, actionable, cases))
    rewritten = _strip_fences(response)
    _validate_sql(rewritten)
    return RewriteResult(
        original=query,
        rewritten=rewritten,
        suggestions_applied=tuple(actionable),
        cases_consulted=tuple(case.index for case in cases),
    )


def _validate_sql(text: str) -> None:
    if not text.strip():
        raise RejectedResponseError("rewrite response is empty")
    tree, diagnostic = decompose_lenient(text)
    if diagnostic is not None:
        raise RejectedResponseError(
            f"rewrite response does not parse as SQL: {diagnostic}")
    head = tree.source.lstrip()[:6].upper()
    if not (head.startswith("SELECT") or head.startswith("WITH")):
        raise RejectedResponseError(
            "rewrite response does not start a SELECT statement")
