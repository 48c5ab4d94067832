"""Natural-language SQL modification: metadata prep, intent classification,
category-specific prompting.

Classification blends a weighted keyword score with cosine similarity to
per-category centroid embeddings; requests whose best score falls below the
confidence threshold are rejected as unsupported rather than guessed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .analysis import analyze_tree
from .errors import ContractViolationError
from .fragmenter import decompose_lenient
from .knowledge_base import cosine_similarity
from .prompts import modify_prompt, parse_json_response
from .sqltext import STRING, NUMBER, templatize, tokenize

REALIZE_SEMANTICS = "REALIZE_SEMANTICS"
EXPLAIN_SQL = "EXPLAIN_SQL"
ADOPT_SYNTAX = "ADOPT_SYNTAX"
OTHER = "OTHER"

PATHWAY_INSTRUCTION = "INSTRUCTION"
PATHWAY_MASK = "MASK"

EMBED_INSTRUCTION = (
    "Represent the action the user wants performed on the SQL, ignoring "
    "schema identifiers and constants.")


@dataclass
class IntentCategory:
    id: str
    keywords: list[tuple[str, float]]
    centroid: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ModifierConfig:
    alpha: float = 0.4
    beta_sim: float = 0.6
    theta: float = 0.35
    top_k_tables: int = 5
    pathway: str = PATHWAY_INSTRUCTION

    def __post_init__(self):
        if self.alpha + self.beta_sim <= 0:
            raise ValueError("alpha + beta_sim must be positive")


@dataclass(frozen=True)
class ModificationContext:
    target_sql: str
    surrounding_context: str
    referenced_metadata: dict[str, str]
    frequent_tables: list[tuple[str, str]]
    timestamp: str


@dataclass(frozen=True)
class ModifyOutcome:
    sql: str
    explanation: str
    category: str


def default_categories() -> list[IntentCategory]:
    return [
        IntentCategory(REALIZE_SEMANTICS, [
            ("change", 0.6), ("instead of", 0.7), ("filter", 0.8),
            ("only include", 0.9), ("add a condition", 1.0),
            ("make it return", 0.9), ("group by", 0.7), ("exclude", 0.8),
        ]),
        IntentCategory(EXPLAIN_SQL, [
            ("explain", 1.0), ("comment", 1.0), ("annotate", 0.9),
            ("document", 0.8), ("what does", 0.9), ("add comments", 1.0),
        ]),
        IntentCategory(ADOPT_SYNTAX, [
            ("rewrite using", 0.9), ("convert to", 0.9), ("use cte", 1.0),
            ("syntax", 0.9), ("style", 0.7), ("ansi", 0.8), ("format", 0.6),
        ]),
        IntentCategory(OTHER, [
            ("polish", 0.8), ("clean up", 0.8), ("tidy", 0.7),
            ("improve readability", 0.9),
        ]),
    ]


def keyword_score(request: str, category: IntentCategory) -> float:
    """Weighted keyword matching: mean over the category's keywords of
    weight * [whole phrase appears in the request, case-insensitive]."""
    if not category.keywords:
        raise ValueError(f"category {category.id} has no keywords")
    total = 0.0
    for phrase, weight in category.keywords:
        pattern = r"(?<!\w)" + re.escape(phrase) + r"(?!\w)"
        if re.search(pattern, request, re.IGNORECASE):
            total += weight
    return total / len(category.keywords)


def _mask_request(request: str) -> str:
    parts = []
    for tok in tokenize(request):
        if tok.kind in (STRING, NUMBER):
            parts.append("[MASK]")
        elif tok.kind == "WORD" and ("_" in tok.text or "." in tok.text):
            parts.append("[MASK]")
        else:
            parts.append(tok.text)
    return " ".join(parts)


def request_embedding(request: str, provider,
                      cfg: ModifierConfig = ModifierConfig()) -> np.ndarray:
    """Embed a request through the configured pathway.

    The instruction pathway hands the guidance to providers that support it
    (``embed_with_instruction``); instruction-blind providers embed the raw
    request. The mask pathway blanks identifiers/constants before embedding.
    """
    if cfg.pathway == PATHWAY_MASK:
        return provider.embed(_mask_request(request))
    instructed = getattr(provider, "embed_with_instruction", None)
    if instructed is not None:
        return instructed(request, EMBED_INSTRUCTION)
    return provider.embed(request)


def classify_intent(request: str, categories: list[IntentCategory], provider,
                    cfg: ModifierConfig = ModifierConfig()) -> tuple[str, float] | None:
    """Winning (category id, score) by the combined score, or None when every
    score falls below theta (the request is treated as unsupported)."""
    query_vec = None
    if cfg.beta_sim > 0:
        query_vec = request_embedding(request, provider, cfg)
    best: tuple[str, float] | None = None
    for category in categories:
        score = cfg.alpha * keyword_score(request, category)
        if cfg.beta_sim > 0:
            if category.centroid is None:
                raise ValueError(f"category {category.id} has no centroid")
            score += cfg.beta_sim * cosine_similarity(query_vec, category.centroid)
        if best is None or score > best[1]:  # ties keep declaration order
            best = (category.id, score)
    if best is None or best[1] < cfg.theta:
        return None
    return best


def bootstrap_centroids(categories: list[IntentCategory], provider,
                        cfg: ModifierConfig = ModifierConfig()) -> list[IntentCategory]:
    """Deterministic cold-start: treat each category's keyword phrases as
    labeled examples and build centroids from them."""
    labeled = [(phrase, category.id)
               for category in categories
               for phrase, _ in category.keywords]
    return build_centroids(labeled, provider, categories, cfg)


def build_centroids(labeled_requests: list[tuple[str, str]], provider,
                    categories: list[IntentCategory],
                    cfg: ModifierConfig = ModifierConfig()) -> list[IntentCategory]:
    """Centroid = normalized mean of member embeddings; categories without
    examples keep their prior centroid."""
    grouped: dict[str, list[np.ndarray]] = {}
    for text, category_id in labeled_requests:
        grouped.setdefault(category_id, []).append(
            request_embedding(text, provider, cfg))
    updated = []
    for category in categories:
        members = grouped.get(category.id)
        if not members:
            updated.append(category)
            continue
        mean = np.mean(np.vstack(members), axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            updated.append(category)
            continue
        centroid = tuple(float(x) for x in mean / norm)
        updated.append(IntentCategory(id=category.id,
                                      keywords=list(category.keywords),
                                      centroid=centroid))
    return updated


def prepare_metadata(target_sql: str, surrounding_context: str,
                     catalog: dict, user_history: list[str] | dict[str, int],
                     cfg: ModifierConfig = ModifierConfig(),
                     now: float | None = None) -> ModificationContext:
    """Collect referenced tables/columns with catalog descriptions, the user's
    most frequent tables with schema info, and a current timestamp."""
    referenced: dict[str, str] = {}
    try:
        tree, _ = decompose_lenient(target_sql)
        facts = analyze_tree(tree)
        tables = sorted(facts[tree.root_id].table_counts_subtree)
    except Exception:
        tables = []
    for table in tables:
        referenced[table] = _describe_table(table, catalog)
    counts: dict[str, int] = {}
    if isinstance(user_history, dict):
        counts = dict(user_history)
    else:
        for table in user_history:
            counts[table] = counts.get(table, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    frequent = [(table, _describe_table(table, catalog))
                for table, _ in ranked[:cfg.top_k_tables]]
    moment = datetime.now(timezone.utc) if now is None else \
        datetime.fromtimestamp(now, tz=timezone.utc)
    return ModificationContext(
        target_sql=target_sql,
        surrounding_context=surrounding_context,
        referenced_metadata=referenced,
        frequent_tables=frequent,
        timestamp=moment.isoformat(),
    )


def _describe_table(table: str, catalog: dict) -> str:
    entry = catalog.get(table)
    if entry is None:
        return "(not in catalog)"
    if isinstance(entry, dict):
        columns = entry.get("columns", [])
        description = entry.get("description", "")
    else:
        columns, description = entry, ""
    rendered = []
    for column in columns:
        if isinstance(column, dict):
            name = column.get("name", "")
            desc = column.get("description")
            rendered.append(f"{name} ({desc})" if desc else name)
        else:
            rendered.append(str(column))
    text = ", ".join(rendered)
    return f"{description}; columns: {text}" if description else f"columns: {text}"


def modify(request: str, context: ModificationContext, category_id: str,
           provider) -> ModifyOutcome:
    """Run the category-tailored prompt. EXPLAIN_SQL output must keep the SQL
    logic unchanged apart from whitespace and comments (checked by comparing
    masked templates, which drop comments)."""
    env = modify_prompt(category_id, request, context)
    response = provider.complete(env)
    try:
        data = parse_json_response(response)
    except (ValueError, TypeError):
        data = {"sql": response.strip(), "explanation": ""}
    if not isinstance(data, dict):
        data = {"sql": response.strip(), "explanation": ""}
    out_sql = str(data.get("sql", ""))
    explanation = str(data.get("explanation", ""))
    if category_id == EXPLAIN_SQL:
        if templatize(out_sql) != templatize(context.target_sql):
            raise ContractViolationError(
                "EXPLAIN_SQL output altered the SQL logic "
                "(masked templates differ)")
    return ModifyOutcome(sql=out_sql, explanation=explanation,
                         category=category_id)
