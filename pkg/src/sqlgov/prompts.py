"""Prompt templates for every LLM call site.

Template texts are versioned package resources: scripted mocks key on the
digest of the rendered envelope, so any wording change must bump
TEMPLATE_VERSION and regenerate playbooks (scripts/build_playbook.py).
"""

from __future__ import annotations

import json

from .providers import (
    ALIGNMENT,
    CORRECT,
    INTENT_EXTRACT,
    MODIFY_PREFIX,
    REWRITE,
    RULE_GEN,
    SCENARIO_1,
    SCENARIO_2,
    PromptEnvelope,
    envelope,
)

_RULE_GEN_TASK = (
    "You are given SQL queries together with their execution outputs "
    "(status, logs, timings, result digests) from a DBMS. Analyze the "
    "outputs to find errors or inefficiencies in the queries."
)
_RULE_GEN_INSTRUCTION = (
    "1. Review each query's execution output and decide whether it shows an "
    "error or an inefficiency.\n"
    "2. Distill every confirmed problem into a generalizable rule: an "
    "abstract problem pattern, a detailed description, and a corrective "
    "action.\n"
    "3. Answer with a single JSON object whose keys are problem-pattern "
    "labels (each key becomes a rule index) and whose values are detailed "
    "descriptions including the corrective action."
)


def rule_generation_prompt(records, demonstrations: list[str] | None = None) -> PromptEnvelope:
    question_lines = []
    output_lines = []
    for i, record in enumerate(records, start=1):
        question_lines.append(f"[{i}] SQL: {record.sql}")
        if record.user_query:
            question_lines.append(f"    user query: {record.user_query}")
        output_lines.append(
            f"[{i}] status={record.status} elapsed={record.elapsed:.3f}s")
        if record.error_log:
            output_lines.append(f"    log: {record.error_log}")
        if record.result_digest:
            output_lines.append(f"    result: {record.result_digest}")
    return envelope(
        RULE_GEN,
        ("Task Description", _RULE_GEN_TASK),
        ("Instruction", _RULE_GEN_INSTRUCTION),
        ("Demonstration", "\n".join(demonstrations or []) or "(none)"),
        ("Question", "\n".join(question_lines)),
        ("Execution Outputs", "\n".join(output_lines)),
    )


def scenario1_prompt(fragment, rules) -> PromptEnvelope:
    rule_lines = [f"- {r.index}: {r.description}" for r in rules]
    return envelope(
        SCENARIO_1,
        ("Fragment", f"[fragment {fragment.id}]\n{fragment.text}"),
        ("Matched Rules", "\n".join(rule_lines)),
        ("Instruction",
         "Evaluate whether each matched rule truly applies to this fragment. "
         "For every applicable rule give an imperative rewrite action and a "
         "short rationale; silently drop rules that do not apply. Answer "
         "with JSON: {\"applicable\": [{\"rule\": <index>, \"action\": "
         "<instruction>, \"rationale\": <why>}]}."),
    )


def scenario2_prompt(fragment) -> PromptEnvelope:
    return envelope(
        SCENARIO_2,
        ("Fragment", f"[fragment {fragment.id}]\n{fragment.text}"),
        ("Instruction",
         "Analyze the intent of this fragment and look for a cheaper "
         "formulation that preserves its semantics. If it is already "
         "efficient answer {\"efficient\": true, \"suggestions\": []}; "
         "otherwise answer {\"efficient\": false, \"suggestions\": "
         "[{\"action\": <instruction>, \"rationale\": <why>}]}."),
    )


def rewrite_prompt(original_sql: str, suggestions, cases) -> PromptEnvelope:
    suggestion_lines = []
    for s in suggestions:
        label = f" [{s.rule_index}]" if s.rule_index else ""
        suggestion_lines.append(f"- fragment {s.fragment_id}{label}: {s.action}")
    case_lines = [f"- {c.index}: {c.details}" for c in cases]
    return envelope(
        REWRITE,
        ("Original SQL", original_sql),
        ("Suggestions", "\n".join(suggestion_lines) or "(none)"),
        ("Historical Cases", "\n".join(case_lines) or "(none)"),
        ("Instruction",
         "Apply the suggestions to the original SQL, producing a "
         "semantically equivalent but more efficient query. Use the "
         "historical cases as style and strategy references. Answer with "
         "the rewritten SQL text only."),
    )


def intent_extract_prompt(fragment, child_summaries: list[str]) -> PromptEnvelope:
    return envelope(
        INTENT_EXTRACT,
        ("Fragment", f"[fragment {fragment.id}]\n{fragment.text}"),
        ("Child Summaries", "\n".join(child_summaries) or "(none)"),
        ("Instruction",
         "Describe the provenance of every output field of this fragment's "
         "SELECT clause: source tables, transformation logic (aggregation "
         "or arithmetic), and filter/join conditions. Use the child "
         "summaries for nested parts. Answer with JSON: {\"fields\": "
         "[{\"output_name\": <name>, \"source_tables\": [<table>...], "
         "\"transformation\": <text>, \"conditions\": [<text>...]}], "
         "\"narrative\": <one paragraph>}."),
    )


def alignment_prompt(left_rendered: str, right_rendered: str) -> PromptEnvelope:
    return envelope(
        ALIGNMENT,
        ("Left Intent", left_rendered),
        ("Right Intent", right_rendered),
        ("Instruction",
         "Align the output fields of the two intents bidirectionally: every "
         "left field maps to exactly one right field and vice versa. For "
         "each pair judge semantic equivalence and give a confidence in "
         "[0, 1]; if a pair is not equivalent, give a concrete "
         "counterexample. Answer with JSON: {\"mappings\": [{\"left\": "
         "<position>, \"right\": <position>, \"equivalent\": <bool>, "
         "\"confidence\": <float>, \"counterexample\": <text or null>}]}."),
    )


_MODIFY_DIRECTIVES = {
    "REALIZE_SEMANTICS": (
        "Adjust the SQL logic so it realizes the semantics the user asked "
        "for while keeping the rest of the query intact."),
    "EXPLAIN_SQL": (
        "Add clarifying comments to the SQL. The SQL logic itself must stay "
        "unchanged apart from whitespace and comments."),
    "ADOPT_SYNTAX": (
        "Restructure the SQL to match the requested style or syntax while "
        "preserving semantic equivalence."),
    "OTHER": (
        "Fulfill the request with a minimal, correctness-preserving edit."),
}


def modify_prompt(category_id: str, request: str, context) -> PromptEnvelope:
    directive = _MODIFY_DIRECTIVES.get(category_id, _MODIFY_DIRECTIVES["OTHER"])
    meta_lines = []
    for table, columns in context.referenced_metadata.items():
        meta_lines.append(f"- {table}: {columns}")
    for table, schema in context.frequent_tables:
        meta_lines.append(f"- (frequent) {table}: {schema}")
    return envelope(
        MODIFY_PREFIX + category_id,
        ("Target SQL", context.target_sql),
        ("Surrounding Context", context.surrounding_context or "(none)"),
        ("Metadata", "\n".join(meta_lines) or "(none)"),
        ("Timestamp", context.timestamp),
        ("User Request", request),
        ("Instruction",
         directive + " Answer with JSON: {\"sql\": <modified SQL>, "
         "\"explanation\": <what changed and why>}."),
    )


def correction_prompt(inputs) -> PromptEnvelope:
    sections: list[tuple[str, str]] = []
    if inputs.scope == "LOCAL":
        sections.append(("Fragment", inputs.sql_text))
        sections.append(("Enclosing Context", inputs.context_header))
    else:
        sections.append(("SQL", inputs.sql_text))
    sections.append(("Error", inputs.error_message))
    if inputs.schema_lines:
        sections.append(("Schema", "\n".join(inputs.schema_lines)))
    sections.append(("Guidance", inputs.guidance))
    target = "fragment" if inputs.scope == "LOCAL" else "SQL query"
    sections.append((
        "Instruction",
        f"Fix the reported error. Answer with the corrected {target} text "
        f"only, no commentary."))
    return envelope(CORRECT, *sections)


def parse_json_response(text: str) -> dict | list:
    """Parse an LLM JSON answer, tolerating markdown code fences."""
    cleaned = text.strip()
    if cleaned.startswith("```"):
        lines = cleaned.splitlines()
        if lines[0].startswith("```"):
            lines = lines[1:]
        if lines and lines[-1].strip().startswith("```"):
            lines = lines[:-1]
        cleaned = "\n".join(lines)
    return json.loads(cleaned)
