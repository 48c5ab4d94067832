#!/usr/bin/env python3
"""End-to-end offline walkthrough on the bundled fixtures.

Decomposes the deeply nested example query, evaluates and rewrites it with
the scripted provider, verifies equivalence of the pair, repairs a broken
query from its error log, and benchmarks the rewrite, all without network
access or a live DBMS.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "tests" / "fixtures"
sys.path.insert(0, str(ROOT / "src"))

from sqlgov import bench as bench_mod
from sqlgov import corrector, equivalence, rewriter
from sqlgov.fragmenter import decompose, decompose_lenient
from sqlgov.knowledge_base import KnowledgeStore
from sqlgov.providers import HashingEmbedding, ScriptedLLM, SimulatedExecutor
from sqlgov.seeds import seed_snapshot


def banner(title: str) -> None:
    print(f"\n=== {title} {'=' * max(0, 60 - len(title))}")


def main() -> None:
    original = (FIXTURES / "nested_query.sql").read_text()
    embedder = HashingEmbedding(768)
    store = KnowledgeStore(seed_snapshot(embedder), embedder)
    llm = ScriptedLLM.from_path(FIXTURES / "playbook.jsonl")

    banner("fragment decomposition")
    tree = decompose(original)
    for frag in tree.fragments:
        indent = "  " * (frag.depth - 1)
        print(f"{indent}#{frag.id} {frag.kind} at {frag.clause_site} "
              f"(depth {frag.depth})")

    banner("evaluation")
    suggestions = rewriter.evaluate(original, store, llm)
    for s in suggestions:
        label = s.rule_index or s.scenario
        summary = s.action.splitlines()[0][:70] if s.action else "efficient"
        print(f"fragment {s.fragment_id}: {label}: {summary}")

    banner("rewriting")
    result = rewriter.rewrite(original, suggestions, store, llm, k=5)
    print(result.rewritten)
    print(f"\ncases consulted: {', '.join(result.cases_consulted)}")

    banner("equivalence verification")
    verdict = equivalence.check_equivalence(original, result.rewritten, llm)
    print(f"{verdict.verdict} (confidence {verdict.confidence:.2f})")

    banner("syntax correction")
    broken = (FIXTURES / "broken.sql").read_text()
    log = (FIXTURES / "broken.log").read_text()
    broken_tree, _ = decompose_lenient(broken)
    error = corrector.parse_error_log(log)
    plan = corrector.clarify(error, store, broken_tree)
    inputs = corrector.prepare_data(plan, error, broken, broken_tree, {})
    print(f"plan: {plan.scope} scope, strategy="
          f"{plan.strategy.index if plan.strategy else 'fallback'}")
    print("corrected:", corrector.correct(broken, inputs, llm).strip())

    banner("benchmark")
    executor = SimulatedExecutor.from_path(FIXTURES / "executor_fixtures.jsonl")
    pairs = [json.loads(line)
             for line in (FIXTURES / "bench_pairs.jsonl").read_text().splitlines()
             if line.strip()]
    report = bench_mod.bench(pairs, executor, trials=3)
    for r in report.results:
        print(f"{r.query_id}: ET_pre={r.et_pre:.1f}s ET_post={r.et_post:.1f}s "
              f"ETS={r.ets:.1f}s ETOG={r.etog:.1f}%")


if __name__ == "__main__":
    main()
