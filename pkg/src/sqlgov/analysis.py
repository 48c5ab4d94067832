"""Structural facts about fragments: table scans, joins, projection shape.

Facts are computed per fragment at two granularities. Subtree counts scan the
fragment's full text (nested subqueries included); own-level counts subtract
the direct children, so each base-table scan is attributed to exactly one
fragment. Rule matchers, the rewriter's efficiency screen, and the
equivalence pre-filter all read from here, keeping every tool's view of a
query consistent.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .fragmenter import Fragment, FragmentTree, SITE_SELECT_LIST, SUBQUERY
from .sqltext import Token, WORD, is_keyword, iter_table_context, tokenize

_OUTER_JOINS = {"LEFT", "RIGHT", "FULL"}
_CLAUSE_BREAK = {"FROM", "WHERE", "GROUP", "ORDER", "HAVING", "LIMIT",
                 "UNION", "INTERSECT", "EXCEPT"}


@dataclass(frozen=True)
class FragmentFacts:
    fragment_id: int
    own_tokens: tuple[Token, ...]
    child_open_positions: frozenset[int]  # own-token indices of excised '(' tokens
    table_counts_own: dict[str, int]
    table_counts_subtree: dict[str, int]
    join_kinds: tuple[str, ...]
    has_outer_join: bool
    where_has_is_not_null: bool
    select_items: int | None
    select_has_star: bool
    has_set_op: bool
    set_op_arm_star: bool
    in_subquery: bool
    scalar_subquery_in_select: bool

    def normalized(self) -> str:
        parts = [t.upper() if is_keyword(t) else t.text for t in self.own_tokens]
        return " " + " ".join(parts) + " "

    def contains_operator(self, op: str) -> bool:
        needle = " " + " ".join(
            t.upper() if is_keyword(t) else t.text for t in tokenize(op)) + " "
        return needle in self.normalized()


def _scan_tables(text: str, cte_names: set[str]) -> Counter:
    counts: Counter = Counter()
    tokens = tokenize(text)
    for _, tok in iter_table_context(tokens):
        name = tok.text.strip('`"').lower()
        if name and name not in cte_names:
            counts[name] += 1
    return counts


def _own_tokens(fragment: Fragment, children: list[Fragment]) -> tuple[list[Token], set[int]]:
    tokens = tokenize(fragment.text)
    base = fragment.span[0]
    holes = [(c.span[0] - base, c.span[1] - base) for c in children]
    own: list[Token] = []
    child_opens: set[int] = set()
    for tok in tokens:
        inside = any(lo <= tok.start and tok.end <= hi for lo, hi in holes)
        if inside:
            continue
        if tok.text == "(" and any(tok.end == lo for lo, _ in holes):
            child_opens.add(len(own))
        own.append(tok)
    return own, child_opens


def _select_list_region(tokens: list[Token]) -> list[Token] | None:
    """Tokens of the fragment's own select list (first top-level SELECT..FROM)."""
    depth = 0
    start = None
    for idx, tok in enumerate(tokens):
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif depth == 0 and tok.kind == WORD:
            upper = tok.upper()
            if start is None and upper == "SELECT":
                start = idx + 1
                continue
            if start is not None and upper in _CLAUSE_BREAK:
                return tokens[start:idx]
    if start is not None:
        return tokens[start:]
    return None


def _is_projection_star(region: list[Token], idx: int) -> bool:
    """A '*' starts a projection item; after an operand it is multiplication."""
    if region[idx].text != "*":
        return False
    prev = region[idx - 1] if idx > 0 else None
    return prev is None or prev.text in (",", ".") or prev.upper() == "DISTINCT"


def _count_items(region: list[Token]) -> tuple[int, bool]:
    depth = 0
    commas = 0
    star = False
    meaningful = False
    for idx, tok in enumerate(region):
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif depth == 0:
            meaningful = True
            if tok.text == ",":
                commas += 1
            elif _is_projection_star(region, idx):
                star = True
    return (commas + 1 if meaningful else 0), star


def _where_region(tokens: list[Token]) -> list[Token]:
    depth = 0
    start = None
    for idx, tok in enumerate(tokens):
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif depth == 0 and tok.kind == WORD:
            upper = tok.upper()
            if upper == "WHERE" and start is None:
                start = idx + 1
            elif start is not None and upper in ("GROUP", "ORDER", "HAVING",
                                                 "LIMIT", "UNION", "INTERSECT",
                                                 "EXCEPT", "WINDOW"):
                return tokens[start:idx]
    return tokens[start:] if start is not None else []


def _has_is_not_null(tokens: list[Token]) -> bool:
    uppers = [t.upper() for t in tokens]
    for i in range(len(uppers) - 2):
        if uppers[i] == "IS" and uppers[i + 1] == "NOT" and uppers[i + 2] == "NULL":
            return True
    return False


def _join_kinds(tokens: list[Token]) -> list[str]:
    kinds = []
    uppers = [t.upper() for t in tokens]
    for i, upper in enumerate(uppers):
        if upper != "JOIN":
            continue
        kind = "INNER"
        j = i - 1
        mods = []
        while j >= 0 and uppers[j] in ("INNER", "OUTER", "LEFT", "RIGHT",
                                       "FULL", "CROSS", "NATURAL"):
            mods.append(uppers[j])
            j -= 1
        for mod in mods:
            if mod in ("LEFT", "RIGHT", "FULL", "CROSS"):
                kind = mod
        kinds.append(kind)
    return kinds


def _set_op_facts(tokens: list[Token]) -> tuple[bool, bool]:
    depth = 0
    has_op = False
    arm_star = False
    select_at = []
    for idx, tok in enumerate(tokens):
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif depth == 0 and tok.kind == WORD:
            upper = tok.upper()
            if upper in ("UNION", "INTERSECT", "EXCEPT"):
                has_op = True
            elif upper == "SELECT":
                select_at.append(idx)
    if has_op:
        for start in select_at:
            region_depth = 0
            region = tokens[start + 1:]
            for idx, tok in enumerate(region):
                if tok.text == "(":
                    region_depth += 1
                elif tok.text == ")":
                    region_depth -= 1
                elif region_depth == 0:
                    if tok.kind == WORD and tok.upper() in _CLAUSE_BREAK:
                        break
                    if _is_projection_star(region, idx):
                        arm_star = True
                        break
    return has_op, arm_star


def _in_subquery(tokens: list[Token], child_opens: set[int]) -> bool:
    for idx in child_opens:
        j = idx - 1
        if j >= 0 and tokens[j].upper() == "IN":
            return True
    return False


def analyze_fragment(fragment: Fragment, tree: FragmentTree,
                     subtree_counts: dict[int, Counter]) -> FragmentFacts:
    children = tree.children(fragment.id)
    own, child_opens = _own_tokens(fragment, children)
    own_counts = Counter(subtree_counts[fragment.id])
    for child in children:
        own_counts.subtract(subtree_counts[child.id])
    own_counts = Counter({k: v for k, v in own_counts.items() if v > 0})
    select_region = _select_list_region(own)
    if select_region is None:
        items, star = None, False
    else:
        items, star = _count_items(select_region)
    joins = _join_kinds(own)
    has_op, arm_star = _set_op_facts(own)
    return FragmentFacts(
        fragment_id=fragment.id,
        own_tokens=tuple(own),
        child_open_positions=frozenset(child_opens),
        table_counts_own=dict(own_counts),
        table_counts_subtree=dict(subtree_counts[fragment.id]),
        join_kinds=tuple(joins),
        has_outer_join=any(k in _OUTER_JOINS for k in joins),
        where_has_is_not_null=_has_is_not_null(_where_region(own)),
        select_items=items,
        select_has_star=star,
        has_set_op=has_op,
        set_op_arm_star=arm_star,
        in_subquery=_in_subquery(own, child_opens),
        scalar_subquery_in_select=any(
            c.kind == SUBQUERY and c.clause_site == SITE_SELECT_LIST
            for c in children),
    )


def analyze_tree(tree: FragmentTree) -> dict[int, FragmentFacts]:
    cte_names = tree.cte_names()
    subtree_counts = {
        f.id: _scan_tables(f.text, cte_names) for f in tree.fragments
    }
    return {
        f.id: analyze_fragment(f, tree, subtree_counts)
        for f in tree.fragments
    }


def duplicated_scan_tables(fragment_id: int, facts_map: dict[int, FragmentFacts],
                           tree: FragmentTree, min_count: int = 2) -> list[str]:
    """Tables scanned >= min_count times in this fragment's subtree where no
    single child subtree already accounts for the duplication: this
    fragment is the lowest fragment owning the duplicate scans."""
    child_counts = [facts_map[c.id].table_counts_subtree
                    for c in tree.children(fragment_id)]
    owned = []
    subtree = facts_map[fragment_id].table_counts_subtree
    for table, count in sorted(subtree.items()):
        if count >= min_count and all(cc.get(table, 0) < min_count
                                      for cc in child_counts):
            owned.append(table)
    return owned
