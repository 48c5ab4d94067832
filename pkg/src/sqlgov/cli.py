"""sqlgov command line: fragment, rewrite, verify, modify, fix-syntax,
kb management, bench, route.

Exit codes: 0 success, 1 non-fatal negative verdict (NOT_EQUIVALENT,
rejected intent, still-invalid correction), 2 operational error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import bench as bench_mod
from . import corrector as corrector_mod
from . import equivalence as eq_mod
from . import modifier as modifier_mod
from . import rewriter as rewriter_mod
from . import self_learning as learn_mod
from .bench import ToolReport, input_digest
from .config import PROVIDER_PERMISSIVE, RuntimeConfig, load_config
from .errors import SqlGovError, StillInvalidError
from .fragmenter import decompose_lenient
from .knowledge_base import (
    CORRECTOR,
    MODIFIER,
    REWRITER,
    TOOLS,
    KnowledgeSnapshot,
    KnowledgeStore,
    check_integrity,
    load_snapshot,
    save_snapshot,
)
from .providers import HashingEmbedding, ScriptedLLM, SimulatedExecutor
from .seeds import seed_snapshot


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _read_json(path: str):
    return json.loads(_read_text(path))


def _read_jsonl(path: str) -> list[dict]:
    records = []
    for line in _read_text(path).splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


def _embedder(config: RuntimeConfig) -> HashingEmbedding:
    return HashingEmbedding(config.embedding_dim)


def _llm(config: RuntimeConfig, args) -> ScriptedLLM:
    playbook_path = getattr(args, "playbook", None) or config.playbook
    provider_kind = getattr(args, "provider", None) or config.provider
    strict = provider_kind != PROVIDER_PERMISSIVE
    if playbook_path:
        return ScriptedLLM.from_path(playbook_path, strict=strict)
    return ScriptedLLM([], strict=strict)


def _store(config: RuntimeConfig, args, embedder=None) -> KnowledgeStore:
    embedder = embedder or _embedder(config)
    kb_dir = getattr(args, "kb", None) or config.kb_dir
    if kb_dir and Path(kb_dir).exists():
        snapshot = load_snapshot(kb_dir)
    else:
        snapshot = seed_snapshot(embedder)
    return KnowledgeStore(snapshot, embedder,
                          strategy_threshold=config.strategy_threshold,
                          default_k=config.retrieval_k)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=False, ensure_ascii=False))


def _fragment_payload(tree, diagnostic=None) -> dict:
    payload = {
        "fragments": [
            {
                "id": f.id, "kind": f.kind, "depth": f.depth,
                "span": [f.span[0], f.span[1]], "parent_id": f.parent_id,
                "clause_site": f.clause_site, "name": f.name, "text": f.text,
            }
            for f in tree.fragments
        ],
        "root_id": tree.root_id,
    }
    if diagnostic:
        payload["diagnostic"] = diagnostic
    return payload


# --- commands ---------------------------------------------------------------

def cmd_fragment(args, config) -> int:
    sql = _read_text(args.source)
    tree, diagnostic = decompose_lenient(sql)
    _print_json(_fragment_payload(tree, diagnostic))
    return 0


def cmd_rewrite(args, config) -> int:
    sql = _read_text(args.source)
    embedder = _embedder(config)
    store = _store(config, args, embedder)
    llm = _llm(config, args)
    t0 = time.perf_counter()
    suggestions = rewriter_mod.evaluate(sql, store, llm)
    t1 = time.perf_counter()
    result = rewriter_mod.rewrite(sql, suggestions, store, llm,
                                  k=config.retrieval_k)
    t2 = time.perf_counter()
    exit_code = 0
    if args.verify:
        verdict = eq_mod.check_equivalence(result.original, result.rewritten,
                                           llm, config.confidence_floor)
        result = replace(result, verified=verdict.verdict)
        if verdict.verdict != eq_mod.EQUIVALENT:
            exit_code = 1
    if args.json:
        report = ToolReport(
            tool=REWRITER,
            input_digest=input_digest(sql),
            output={
                "original": result.original,
                "rewritten": result.rewritten,
                "suggestions": [asdict(s) for s in suggestions],
                "verified": result.verified,
            },
            rules_used=sorted({s.rule_index for s in result.suggestions_applied
                               if s.rule_index}),
            cases_used=list(result.cases_consulted),
            timings={"evaluate": t1 - t0, "rewrite": t2 - t1},
        )
        _print_json(asdict(report))
    else:
        print(result.rewritten)
    return exit_code


def _verdict_payload(verdict) -> dict:
    return {
        "verdict": verdict.verdict,
        "confidence": verdict.confidence,
        "field_mapping": [list(m) for m in verdict.field_mapping]
        if verdict.field_mapping else None,
        "counterexample": verdict.counterexample,
        "reason": verdict.reason,
    }


def cmd_verify(args, config) -> int:
    llm = _llm(config, args)
    pairs = []
    if args.batch:
        for i, record in enumerate(_read_jsonl(args.batch)):
            pairs.append((record.get("id", f"pair{i + 1}"),
                          record["left"], record["right"]))
    else:
        if not (args.left and args.right):
            print("verify needs --left/--right or --batch", file=sys.stderr)
            return 2
        pairs.append(("pair1", _read_text(args.left), _read_text(args.right)))
    verdicts = []
    for pair_id, left, right in pairs:
        verdict = eq_mod.check_equivalence(left, right, llm,
                                           config.confidence_floor)
        verdicts.append((pair_id, verdict))
    if args.json:
        _print_json([{"id": pid, **_verdict_payload(v)} for pid, v in verdicts])
    else:
        for pid, v in verdicts:
            detail = v.reason or v.counterexample or ""
            print(f"{pid}: {v.verdict} (confidence {v.confidence:.2f})"
                  + (f" ({detail})" if detail else ""))
    return 0 if all(v.verdict == eq_mod.EQUIVALENT for _, v in verdicts) else 1


def _load_categories(args, config, embedder):
    cfg = modifier_mod.ModifierConfig()
    path = getattr(args, "categories", None)
    if not path:
        kb_dir = getattr(args, "kb", None) or config.kb_dir
        if kb_dir and (Path(kb_dir) / "categories.json").exists():
            path = str(Path(kb_dir) / "categories.json")
    if path:
        raw = _read_json(path)
        categories = [
            modifier_mod.IntentCategory(
                id=entry["id"],
                keywords=[(k, float(w)) for k, w in entry["keywords"]],
                centroid=tuple(entry["centroid"]) if entry.get("centroid")
                else None)
            for entry in raw
        ]
    else:
        categories = modifier_mod.default_categories()
    if any(c.centroid is None for c in categories) and cfg.beta_sim > 0:
        categories = modifier_mod.bootstrap_centroids(categories, embedder, cfg)
    return categories, cfg


def cmd_modify(args, config) -> int:
    sql = _read_text(args.source)
    embedder = _embedder(config)
    llm = _llm(config, args)
    catalog = _read_json(args.catalog) if args.catalog else {}
    history: list[str] = []
    if args.history:
        for record in _read_jsonl(args.history):
            if isinstance(record, str):
                history.append(record)
            elif "table" in record:
                history.extend([record["table"]] * int(record.get("count", 1)))
    categories, mod_cfg = _load_categories(args, config, embedder)
    decision = modifier_mod.classify_intent(args.request, categories,
                                            embedder, mod_cfg)
    if decision is None:
        message = "request rejected: no intent category reached the threshold"
        if args.json:
            _print_json({"rejected": True, "reason": message})
        else:
            print(message, file=sys.stderr)
        return 1
    category_id, score = decision
    now = float(os.environ["SQLGOV_NOW"]) if os.environ.get("SQLGOV_NOW") \
        else None
    context = modifier_mod.prepare_metadata(
        sql, args.context or "", catalog, history, mod_cfg, now=now)
    outcome = modifier_mod.modify(args.request, context, category_id, llm)
    if args.json:
        report = ToolReport(
            tool=MODIFIER,
            input_digest=input_digest(sql, args.request),
            output={"sql": outcome.sql, "explanation": outcome.explanation,
                    "category": category_id, "score": score},
        )
        _print_json(asdict(report))
    else:
        print(outcome.sql)
        if outcome.explanation:
            print(f"-- {outcome.explanation}", file=sys.stderr)
    return 0


def cmd_fix_syntax(args, config) -> int:
    sql = _read_text(args.source)
    log = _read_text(args.log)
    catalog = _read_json(args.schema) if args.schema else {}
    embedder = _embedder(config)
    store = _store(config, args, embedder)
    llm = _llm(config, args)
    current_sql, current_log = sql, log
    last_error: StillInvalidError | None = None
    for _ in range(max(1, args.max_rounds)):
        tree, _ = decompose_lenient(current_sql)
        error = corrector_mod.parse_error_log(current_log)
        plan = corrector_mod.clarify(error, store, tree)
        inputs = corrector_mod.prepare_data(plan, error, current_sql, tree,
                                            catalog)
        try:
            corrected = corrector_mod.correct(current_sql, inputs, llm)
        except StillInvalidError as exc:
            last_error = exc
            current_sql, current_log = exc.corrected, str(exc)
            continue
        if args.json:
            report = ToolReport(
                tool=CORRECTOR,
                input_digest=input_digest(sql, log),
                output={"original": sql, "corrected": corrected,
                        "scope": inputs.scope,
                        "strategy": plan.strategy.index if plan.strategy
                        else None},
            )
            _print_json(asdict(report))
        else:
            print(corrected)
        return 0
    message = str(last_error) if last_error else "correction failed"
    if args.json:
        _print_json({"error": "STILL_INVALID", "message": message,
                     "original": sql,
                     "corrected": last_error.corrected if last_error else None})
    else:
        print(message, file=sys.stderr)
    return 1


# --- kb subcommands -----------------------------------------------------------

def _require_store_dir(args) -> Path:
    return Path(args.store)


def _load_store_snapshot(args, embedder) -> KnowledgeSnapshot:
    directory = _require_store_dir(args)
    if directory.exists() and (directory / "meta.json").exists():
        return load_snapshot(directory)
    return seed_snapshot(embedder)


def cmd_kb_init(args, config) -> int:
    embedder = _embedder(config)
    snapshot = seed_snapshot(embedder, now=time.time())
    save_snapshot(snapshot, args.store)
    print(f"seeded knowledge store at {args.store}")
    return 0


def cmd_kb_list(args, config) -> int:
    snapshot = _load_store_snapshot(args, _embedder(config))
    payload = {
        "rules": [{"index": r.index, "tool": r.tool, "status": r.status,
                   "has_matcher": bool(r.matcher)} for r in snapshot.rules
                  if not args.tool or r.tool == args.tool],
        "cases": [{"index": c.index, "tag": c.tag} for c in snapshot.cases],
        "strategies": [{"index": s.index, "localized": s.localized,
                        "needs_schema": s.needs_schema}
                       for s in snapshot.strategies],
    }
    if args.json:
        _print_json(payload)
    else:
        for kind, entries in payload.items():
            print(f"{kind} ({len(entries)}):")
            for entry in entries:
                print(f"  {json.dumps(entry, ensure_ascii=False)}")
    return 0


def cmd_kb_stats(args, config) -> int:
    snapshot = _load_store_snapshot(args, _embedder(config))
    payload = {
        "rules": len(snapshot.rules),
        "cases": len(snapshot.cases),
        "strategies": len(snapshot.strategies),
        "per_tool": {tool: asdict(stats)
                     for tool, stats in snapshot.stats.items()},
        "integrity": check_integrity(snapshot),
    }
    _print_json(payload)
    return 0 if not payload["integrity"] else 1


def cmd_kb_add(args, config) -> int:
    embedder = _embedder(config)
    snapshot = _load_store_snapshot(args, embedder)
    data = _read_json(args.data)
    if args.kind == "rule":
        from .knowledge_base import RuleEntry
        snapshot.rules.append(RuleEntry(
            index=data["index"], description=data["description"],
            matcher=data.get("matcher"), tool=data.get("tool", REWRITER),
            status=data.get("status", "CANDIDATE"),
            created_at=data.get("created_at", time.time())))
    elif args.kind == "case":
        from .knowledge_base import HistoricalCase
        from .sqltext import templatize
        template = templatize(data["sql"])
        snapshot.cases.append(HistoricalCase(
            index=data.get("index", f"case-{len(snapshot.cases) + 1}"),
            details=data["details"], tag=list(data.get("tag", [])),
            template=template,
            embedding=tuple(float(x) for x in embedder.embed(template))))
    else:
        from .corrector import ParsedError, build_error_key
        from .knowledge_base import ErrorStrategy
        pattern = data["message_pattern"]
        exc, _, message = pattern.partition(": ")
        key = build_error_key(ParsedError(exception_type=exc, location=None,
                                          message=message or pattern,
                                          raw_log=pattern))
        snapshot.strategies.append(ErrorStrategy(
            index=data["index"], message_pattern=pattern,
            needs_schema=bool(data.get("needs_schema", False)),
            localized=bool(data.get("localized", False)),
            guidance=data["guidance"],
            embedding=tuple(float(x) for x in embedder.embed(key))))
    problems = check_integrity(snapshot)
    if problems:
        print("refusing to save, integrity violations:", file=sys.stderr)
        for problem in problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    save_snapshot(snapshot, args.store)
    print(f"added {args.kind} to {args.store}")
    return 0


def _pending_dir(store: Path) -> Path:
    return store / "pending"


def _batch_to_json(batch: learn_mod.CandidateRuleBatch) -> dict:
    return {
        "rules": [asdict(r) for r in batch.rules],
        "source_records": batch.source_records,
        "generated_at": batch.generated_at,
        "records": [asdict(r) for r in batch.records],
    }


def _batch_from_json(payload: dict) -> learn_mod.CandidateRuleBatch:
    from .knowledge_base import RuleEntry
    return learn_mod.CandidateRuleBatch(
        rules=[RuleEntry(**r) for r in payload["rules"]],
        source_records=payload["source_records"],
        generated_at=payload["generated_at"],
        records=[learn_mod.ExecutionRecord(**r) for r in payload["records"]],
    )


def cmd_kb_learn(args, config) -> int:
    embedder = _embedder(config)
    snapshot = _load_store_snapshot(args, embedder)
    llm = _llm(config, args)
    now = time.time()
    records = [learn_mod.ExecutionRecord(**r) for r in _read_jsonl(args.records)]
    cfg = learn_mod.LearningConfig()
    filtered = learn_mod.filter_records(records, cfg)
    if not filtered:
        print("no records passed filtering; nothing to learn")
        return 0
    batch = learn_mod.generate_rules(filtered, llm, args.tool, now)
    if args.auto_accept:
        decisions = {r.index: "ACCEPT" for r in batch.rules}
        snapshot = learn_mod.apply_verification(snapshot, batch, decisions,
                                                embedder, now)
        save_snapshot(snapshot, args.store)
        print(f"accepted {len(batch.rules)} rules into {args.store}")
        return 0
    snapshot = learn_mod.apply_verification(snapshot, batch, {}, embedder, now)
    save_snapshot(snapshot, args.store)
    pending = _pending_dir(_require_store_dir(args))
    pending.mkdir(parents=True, exist_ok=True)
    batch_path = pending / f"batch-{int(now)}-{len(batch.rules)}.json"
    batch_path.write_text(json.dumps(_batch_to_json(batch), indent=2),
                          encoding="utf-8")
    pending_count = len(snapshot.rules_for(args.tool, "CANDIDATE"))
    stats = snapshot.stats.get(args.tool)
    elapsed = now - stats.update_times[-1] if stats and stats.update_times else 0.0
    trigger = learn_mod.should_trigger_verification(
        pending_count, elapsed, stats or learn_mod.ToolStats(), cfg)
    print(f"generated {len(batch.rules)} candidate rules "
          f"(pending={pending_count}); verification "
          f"{'REQUIRED' if trigger else 'not yet required'}")
    return 0


def cmd_kb_verify(args, config) -> int:
    embedder = _embedder(config)
    snapshot = _load_store_snapshot(args, embedder)
    decisions = _read_json(args.decisions)
    pending = _pending_dir(_require_store_dir(args))
    batch_files = sorted(pending.glob("batch-*.json")) if pending.exists() else []
    if not batch_files:
        print("no pending batches", file=sys.stderr)
        return 2
    known = set()
    now = time.time()
    for batch_file in batch_files:
        batch = _batch_from_json(json.loads(batch_file.read_text()))
        known.update(r.index for r in batch.rules)
        subset = {k: v for k, v in decisions.items()
                  if k in {r.index for r in batch.rules}}
        if subset:
            snapshot = learn_mod.apply_verification(snapshot, batch, subset,
                                                    embedder, now)
        undecided = {r.index for r in batch.rules} - set(subset)
        if not undecided:
            batch_file.unlink()
    unknown = set(decisions) - known
    if unknown:
        print(f"decisions reference unknown rules: {sorted(unknown)}",
              file=sys.stderr)
        return 2
    save_snapshot(snapshot, args.store)
    print(f"applied {len(decisions)} decisions")
    return 0


def cmd_kb_dedup(args, config) -> int:
    embedder = _embedder(config)
    snapshot = _load_store_snapshot(args, embedder)
    tools = [args.tool] if args.tool else list(TOOLS)
    all_merges = []
    for tool in tools:
        snapshot, merges = learn_mod.dedupe_snapshot(snapshot, embedder, tool)
        all_merges.extend(merges)
    save_snapshot(snapshot, args.store)
    if all_merges:
        for merge in all_merges:
            print(f"merged {merge['absorbed']} into {merge['survivor']}")
    else:
        print("no duplicates found")
    return 0


def cmd_bench(args, config) -> int:
    pairs = _read_jsonl(args.pairs)
    executor = SimulatedExecutor.from_path(args.fixtures, seed=config.seed)
    report = bench_mod.bench(pairs, executor, trials=args.trials,
                             parallel=args.parallel)
    if args.json:
        _print_json({
            "results": [asdict(r) for r in report.results],
            "errors": report.errors,
            "mean_etog": report.mean_etog,
            "total_ets": report.total_ets,
        })
    else:
        for r in report.results:
            print(f"{r.query_id}: pre={r.et_pre:.3f}s post={r.et_post:.3f}s "
                  f"ETS={r.ets:.3f}s ETOG={r.etog:.2f}%")
        for e in report.errors:
            print(f"{e['id']}: EXEC_ERROR on {e['side']} side: {e['error']}")
        print(f"aggregate: mean ETOG={report.mean_etog:.2f}% "
              f"total ETS={report.total_ets:.3f}s")
    return 0 if not report.errors else 1


def cmd_route(args, config) -> int:
    issue = _read_json(args.issue)
    tool = bench_mod.route(issue)
    if args.json:
        _print_json({"tool": tool})
    else:
        print(tool)
    return 0


# --- parser -------------------------------------------------------------

def _add_common(parser, kb=True, playbook=True):
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--json", action="store_true", help="machine output")
    if kb:
        parser.add_argument("--kb", default=None, help="knowledge store dir")
    if playbook:
        parser.add_argument("--playbook", default=None,
                            help="scripted provider playbook (jsonl)")
        parser.add_argument("--provider", default=None,
                            choices=["scripted-strict", "scripted-permissive"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqlgov",
        description="knowledge-base-assisted SQL governance toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fragment", help="decompose a query into fragments")
    p.add_argument("source", help="SQL file or - for stdin")
    _add_common(p, kb=False, playbook=False)
    p.set_defaults(func=cmd_fragment)

    p = sub.add_parser("rewrite", help="evaluate and rewrite a query")
    p.add_argument("source")
    p.add_argument("--verify", action="store_true",
                   help="verify equivalence of the rewrite")
    _add_common(p)
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("verify", help="check semantic equivalence of a pair")
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--batch", help="JSONL of {id, left, right} pairs")
    _add_common(p, kb=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("modify", help="apply a natural-language modification")
    p.add_argument("source")
    p.add_argument("--request", required=True)
    p.add_argument("--history", default=None,
                   help="JSONL of accessed tables from user history")
    p.add_argument("--catalog", default=None, help="catalog JSON")
    p.add_argument("--categories", default=None, help="categories JSON")
    p.add_argument("--context", default=None, help="surrounding context text")
    _add_common(p)
    p.set_defaults(func=cmd_modify)

    p = sub.add_parser("fix-syntax", help="repair a failing query")
    p.add_argument("source")
    p.add_argument("--log", required=True, help="DBMS error log file")
    p.add_argument("--schema", default=None, help="catalog JSON")
    p.add_argument("--max-rounds", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_fix_syntax)

    kb = sub.add_parser("kb", help="knowledge store management")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)

    def kb_parser(name, func):
        sp = kb_sub.add_parser(name)
        sp.add_argument("--store", required=True)
        _add_common(sp, kb=False)
        sp.set_defaults(func=func)
        return sp

    kb_parser("init", cmd_kb_init)
    p = kb_parser("list", cmd_kb_list)
    p.add_argument("--tool", default=None, choices=TOOLS)
    kb_parser("stats", cmd_kb_stats)
    p = kb_parser("add", cmd_kb_add)
    p.add_argument("--kind", required=True, choices=["rule", "case", "strategy"])
    p.add_argument("--data", required=True, help="entry JSON file")
    p = kb_parser("learn", cmd_kb_learn)
    p.add_argument("--records", required=True, help="execution records JSONL")
    p.add_argument("--tool", default=REWRITER, choices=TOOLS)
    p.add_argument("--auto-accept", action="store_true", dest="auto_accept")
    p = kb_parser("verify", cmd_kb_verify)
    p.add_argument("--decisions", required=True,
                   help="JSON map of rule index to ACCEPT/REJECT")
    p = kb_parser("dedup", cmd_kb_dedup)
    p.add_argument("--tool", default=None, choices=TOOLS)

    p = sub.add_parser("bench", help="ETS/ETOG benchmark over scripted fixtures")
    p.add_argument("--pairs", required=True, help="JSONL of query pairs")
    p.add_argument("--fixtures", required=True, help="executor fixtures JSONL")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--parallel", action="store_true")
    _add_common(p, kb=False, playbook=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("route", help="route an issue to the right tool")
    p.add_argument("--issue", required=True, help="issue JSON file or -")
    _add_common(p, kb=False, playbook=False)
    p.set_defaults(func=cmd_route)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = load_config(getattr(args, "config", None))
    try:
        return args.func(args, config)
    except SqlGovError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
