"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 run finished with persisted
endpoint failures (re-run the same command to resume).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from supportscope import __version__
from supportscope._io import ValidationError, read_json, write_json
from supportscope.config import Config
from supportscope.metadata import RunMetadata, sidecar_path

logger = logging.getLogger("supportscope")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2


class ArgumentError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(f"{self.prog}: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool_flag(p, name: str, help: str):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction, default=None,
                   help=help)


def _endpoint_flags(p, prefix: str = ""):
    dash = f"{prefix}-" if prefix else ""
    prefix = f"{prefix}_" if prefix else ""
    p.add_argument(f"--{dash}base-url", dest=f"{prefix}base_url", help="endpoint root, e.g. http://host:8000")
    p.add_argument(f"--{dash}model", dest=f"{prefix}model_name", help="model name sent in requests")
    p.add_argument(f"--{dash}api-key-env", dest=f"{prefix}api_key_env", help="env var holding the API key")
    p.add_argument(f"--{dash}max-concurrency", dest=f"{prefix}max_concurrency", type=int)
    p.add_argument(f"--{dash}max-retries", dest=f"{prefix}max_retries", type=int)
    p.add_argument(f"--{dash}timeout", dest=f"{prefix}timeout", type=float)
    p.add_argument(f"--{dash}max-tokens", dest=f"{prefix}max_tokens", type=int)
    p.add_argument(f"--{dash}backoff-base", dest=f"{prefix}backoff_base", type=float,
                   help="backoff base in seconds (delay ~ U(0, base*2^attempt))")
    p.add_argument(f"--{dash}no-item-marker", dest=f"{prefix}no_item_marker", action="store_true", default=None,
                   help="do not embed the [item:...] marker line (real endpoints)")


def _endpoint(cfg: Config, args, section: str, prefix: str = ""):
    from supportscope.inference import EndpointConfig

    def val(key):
        return cfg.get(section, key, getattr(args, f"{prefix}{key}", None))

    dash = f"--{prefix[:-1]}-" if prefix else "--"
    base_url = cfg.require(section, "base_url", getattr(args, f"{prefix}base_url", None), f"{dash}base-url")
    model = cfg.require(section, "model_name", getattr(args, f"{prefix}model_name", None), f"{dash}model")
    key_env = val("api_key_env")
    endpoint = EndpointConfig(
        base_url=base_url,
        model_name=model,
        api_key=os.environ.get(key_env) if key_env else None,
        timeout=val("timeout"),
        max_retries=val("max_retries"),
        max_concurrency=val("max_concurrency"),
        max_tokens=val("max_tokens"),
        backoff_base=val("backoff_base"),
    )
    embed = False if getattr(args, f"{prefix}no_item_marker", None) else cfg.get(section, "embed_item_marker")
    return endpoint, embed


def _meta(args, cfg: Config, argv) -> RunMetadata:
    meta = RunMetadata(command=["supportscope", *argv], config=cfg.snapshot())
    meta.stamp_start()
    if cfg.source:
        meta.add_input(cfg.source)
    return meta


def _finish(meta: RunMetadata, out) -> str:
    meta.stamp_end()
    return meta.save(sidecar_path(out))


def _load_items_index(paths):
    from supportscope.datasets import load_items

    items = []
    for p in paths:
        items.extend(load_items(p))
    index = {}
    for it in items:
        if it.item_id in index:
            raise ValidationError(f"item_id {it.item_id!r} appears in more than one task; item ids must be unique")
        index[it.item_id] = it
    return items, index


# --------------------------------------------------------------------- commands


def cmd_convert(args, cfg, argv):
    from supportscope.datasets import DEFAULT_QUESTION, convert_to_mcq, load_manifest, save_items

    meta = _meta(args, cfg, argv)
    check = cfg.get("convert", "check_images", args.check_images)
    manifest = load_manifest(args.manifest, check_images=check)
    meta.add_input(args.manifest)
    shuffle = cfg.get("convert", "option_shuffle", args.shuffle)
    seed = cfg.get("convert", "seed", args.seed)
    question = cfg.get("prompt", "question", args.question) or DEFAULT_QUESTION
    items = convert_to_mcq(manifest, option_shuffle=shuffle, seed=seed, question=question)
    save_items(items, args.out)
    meta.seeds["option_shuffle"] = seed
    meta.notes.update({"option_shuffle": shuffle, "question": question, "task_id": manifest.task_id})
    _finish(meta, args.out)
    print(f"{len(items)} items ({manifest.n_classes} options each) -> {args.out}")
    return EXIT_OK


def cmd_tag_modality(args, cfg, argv):
    from supportscope.datasets import DEFAULT_VOCABULARY, MODALITY_PROMPT, load_items, save_tags, tag_modalities

    meta = _meta(args, cfg, argv)
    items = load_items(args.items)
    meta.add_input(args.items)
    judge, embed = _endpoint(cfg, args, "judge", "judge_")
    vocab = args.vocabulary or cfg.get("tagging", "vocabulary") or list(DEFAULT_VOCABULARY)
    tags = tag_modalities(items, judge, vocab, embed_marker=embed)
    save_tags(tags, args.out)
    meta.endpoint = judge.fingerprint
    meta.notes.update({"vocabulary": list(vocab), "judge_prompt": MODALITY_PROMPT})
    _finish(meta, args.out)
    failed = sum(t.note is not None for t in tags)
    counts: dict[str, int] = {}
    for t in tags:
        counts[t.predicted_modality] = counts.get(t.predicted_modality, 0) + 1
    print(", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    if failed:
        print(f"{failed} items could not be tagged (recorded as 'none')", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_balance(args, cfg, argv):
    from supportscope.datasets import apply_tags, balanced_subset, load_items, load_tags, save_items

    meta = _meta(args, cfg, argv)
    items = load_items(args.items)
    meta.add_input(args.items)
    if args.tags:
        items = apply_tags(items, load_tags(args.tags))
        meta.add_input(args.tags)
    total = cfg.require("balance", "total_n", args.total, "--total")
    seed = cfg.get("balance", "seed", args.seed)
    group_by = cfg.get("balance", "group_by", args.group_by)
    subset = balanced_subset(items, total, seed=seed, group_by=group_by)
    save_items(subset, args.out)
    meta.seeds["balance"] = seed
    meta.notes.update({"total_n": total, "group_by": group_by})
    _finish(meta, args.out)
    counts: dict[str, int] = {}
    for it in subset:
        g = it.modality if group_by == "modality" else it.correct_text
        counts[g] = counts.get(g, 0) + 1
    print(", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def cmd_eval(args, cfg, argv):
    from dataclasses import asdict

    from supportscope.datasets import load_items
    from supportscope.inference import PromptTemplate, SamplingPlan, run_plan

    meta = _meta(args, cfg, argv)
    items = load_items(args.items)
    meta.add_input(args.items)
    endpoint, embed = _endpoint(cfg, args, "endpoint")
    template = PromptTemplate(cfg.get("prompt", "template", args.template), embed_item_marker=embed)
    seed_base = cfg.get("sampling", "seed_base", args.seed_base)
    plans = []
    if cfg.get("sampling", "greedy", args.greedy):
        plans.append(("greedy", SamplingPlan.greedy(seed_base)))
    if cfg.get("sampling", "sampled", args.sampled):
        plans.append(("sampled", SamplingPlan(
            k=cfg.get("sampling", "k", args.k),
            temperature=cfg.get("sampling", "temperature", args.temperature),
            top_p=cfg.get("sampling", "top_p", args.top_p),
            seed_base=seed_base,
        )))
    if not plans:
        raise ValidationError("both greedy and sampled runs are disabled; nothing to do")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta.endpoint = endpoint.fingerprint
    meta.seeds["seed_base"] = seed_base
    meta.sampling = {name: asdict(plan) for name, plan in plans}
    meta.notes.update({
        "prompt_template": template.text,
        "item_marker": embed,
        "sample_independence": "one request per sample (n=1), no shared context",
    })
    failed = 0
    for name, plan in plans:
        summary = run_plan(items, endpoint, plan, out_dir / f"{name}.jsonl", template,
                           retry_failed=args.retry_failed)
        meta.notes[f"{name}_summary"] = summary.to_dict()
        failed += summary.failed
        print(f"{name}: {summary.completed} ok, {summary.failed} failed, {summary.skipped_existing} resumed "
              f"({summary.elapsed_s:.1f}s)")
    _finish(meta, out_dir)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_verify(args, cfg, argv):
    from supportscope.inference import load_responses
    from supportscope.verification import RULE_THEN_JUDGE, JUDGE_TEMPLATE, save_records, verdict_counts, verify

    meta = _meta(args, cfg, argv)
    _, index = _load_items_index(args.items)
    for p in args.items:
        meta.add_input(p)
    responses = []
    for p in args.responses:
        responses.extend(load_responses(p))
        meta.add_input(p)
    policy = cfg.get("verify", "policy", args.policy).upper()
    judge, embed = (None, True)
    if policy == RULE_THEN_JUDGE:
        judge, embed = _endpoint(cfg, args, "judge", "judge_")
        meta.endpoint = judge.fingerprint
        meta.notes["judge_prompt"] = JUDGE_TEMPLATE
    records = verify(responses, index, policy, judge, embed)
    save_records(records, args.out)
    meta.notes.update({"policy": policy, "rule_parse_overrides_judge": True})
    _finish(meta, args.out)
    print(", ".join(f"{k}={v}" for k, v in verdict_counts(records).items()))
    return EXIT_OK


def cmd_stats(args, cfg, argv):
    from supportscope.stats import aggregate_by_group, estimate_support
    from supportscope.verification import load_records

    meta = _meta(args, cfg, argv)
    records = []
    for p in args.records:
        records.extend(load_records(p))
        meta.add_input(p)
    if not records:
        raise ValidationError("no records")
    items, index = _load_items_index(args.items)
    for p in args.items:
        meta.add_input(p)
    unknown = sorted({r.item_id for r in records} - set(index))
    if unknown:
        raise ValidationError(f"{len(unknown)} records reference unknown items (first: {unknown[0]!r})")
    ks = args.ks or cfg.get("stats", "ks")
    strict = cfg.get("stats", "strict", None if args.lenient is None else not args.lenient)
    n_boot = cfg.get("stats", "bootstrap", args.bootstrap)
    boot_seed = cfg.get("stats", "bootstrap_seed", args.bootstrap_seed)

    by_task: dict[str, list] = {}
    for r in records:
        by_task.setdefault(index[r.item_id].task_id, []).append(r)
    modality = {it.task_id: it.modality for it in items}
    estimates = [
        estimate_support(by_task[t], ks, t, strict=strict, n_bootstrap=n_boot, seed=boot_seed, modality=modality[t])
        for t in sorted(by_task)
    ]
    meta.seeds["bootstrap"] = boot_seed
    meta.estimators = {
        "acc@1": ",".join(sorted({e.a_source for e in estimates})),
        "pass@k": "unbiased estimator over one shared pool of n samples per item",
        "ci": f"95% percentile bootstrap over items, B={n_boot}",
        "invalid_outputs": "UNPARSEABLE and ENDPOINT_ERROR count as incorrect",
    }
    groups = aggregate_by_group(estimates, modality) if args.group_by_modality else {}
    digest = meta.digest
    for e in [*estimates, *groups.values()]:
        e.metadata_digest = digest
    payload = {
        "metadata_digest": digest,
        "estimates": [e.to_dict() for e in estimates],
        "groups": [g.to_dict() for g in groups.values()],
    }
    write_json(args.out, payload)
    _finish(meta, args.out)
    for e in [*estimates, *groups.values()]:
        cells = " ".join(f"pass@{k}={v:.4f}" for k, v in sorted(e.S.items()))
        print(f"{e.task_id}: acc@1={e.A:.4f} ({e.a_source}) {cells} n_items={e.n_items}")
    return EXIT_OK


def _load_estimates(path, scope: str = "estimates"):
    from supportscope.stats import SupportEstimate

    data = read_json(path)
    if isinstance(data, dict) and "estimates" in data:
        rows = data.get(scope) or []
    elif isinstance(data, list):
        rows = data
    else:
        rows = [data]
    if not rows:
        raise ValidationError(f"{path}: no {scope} found")
    return [SupportEstimate.from_dict(r) for r in rows]


def cmd_decide(args, cfg, argv):
    from supportscope.recipe import RecipeConfig, decide

    meta = _meta(args, cfg, argv)
    scope = "groups" if args.pooled else "estimates"
    estimates = _load_estimates(args.estimate, scope)
    meta.add_input(args.estimate)
    if args.task:
        estimates = [e for e in estimates if e.task_id == args.task]
        if not estimates:
            raise ValidationError(f"task {args.task!r} not found in {args.estimate}")
    config = RecipeConfig(
        tau=cfg.require("recipe", "tau", args.tau, "--tau"),
        k_ref=cfg.get("recipe", "k_ref", args.k),
        collapse_margin=cfg.get("recipe", "collapse_margin", None),
    )
    decisions = [decide(e, config) for e in estimates]
    for d in decisions:
        print(f"{d.task_id}: {d.verdict}  ({d.rationale})")
    if args.out:
        write_json(args.out, {
            "metadata_digest": decisions[0].metadata_digest,
            "scope": "pooled-by-modality" if args.pooled else "per-task",
            "decisions": [d.to_dict() for d in decisions],
        })
        meta.notes["scope"] = scope
        _finish(meta, args.out)
    return EXIT_OK


def cmd_compare(args, cfg, argv):
    from supportscope.recipe import RecipeConfig, compare_runs

    meta = _meta(args, cfg, argv)
    scope = "groups" if args.pooled else "estimates"
    before = {e.task_id: e for e in _load_estimates(args.before, scope)}
    after = {e.task_id: e for e in _load_estimates(args.after, scope)}
    meta.add_input(args.before)
    meta.add_input(args.after)
    shared = sorted(set(before) & set(after))
    if not shared:
        raise ValidationError("before and after estimates share no eval task")
    modalities = {t: e.modality for t, e in {**before, **after}.items() if e.modality}
    if args.train_modality:
        modalities[args.train_task] = args.train_modality
    config = RecipeConfig(
        tau=cfg.get("recipe", "tau", args.tau),
        k_ref=cfg.get("recipe", "k_ref", args.k),
        collapse_margin=cfg.get("recipe", "collapse_margin", args.collapse_margin),
    )
    deltas = [compare_runs(before[t], after[t], config, modalities, args.train_task) for t in shared]
    digest = meta.digest
    for d in deltas:
        d.metadata_digest = digest
        flag = "  COLLAPSE" if d.collapse_flag else ""
        print(f"{d.train_task}->{d.eval_task} [{d.regime}]: dAcc@1={d.delta_a:+.4f} "
              f"dPass@{d.k_ref}={d.delta_s_k:+.4f}{flag}")
    if args.out:
        write_json(args.out, {"metadata_digest": digest, "deltas": [d.to_dict() for d in deltas]})
        _finish(meta, args.out)
    return EXIT_OK


def cmd_report(args, cfg, argv):
    from supportscope import reports
    from supportscope.recipe import DeltaReport, RecipeDecision

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = RunMetadata(command=["supportscope", *argv], config=cfg.snapshot())
    estimates, decisions, deltas = [], [], []
    if args.estimates:
        estimates = _load_estimates(args.estimates, "groups" if args.pooled else "estimates")
        meta.add_input(args.estimates)
    if args.decisions:
        decisions = [RecipeDecision.from_dict(d) for d in read_json(args.decisions)["decisions"]]
        meta.add_input(args.decisions)
    if args.deltas:
        deltas = [DeltaReport.from_dict(d) for d in read_json(args.deltas)["deltas"]]
        meta.add_input(args.deltas)
    if not (estimates or deltas or args.reported):
        raise ValidationError("report needs --estimates, --deltas or --reported")

    fmt = args.format
    written = []
    if estimates or deltas:
        reports.check_metadata(estimates, decisions, deltas)
        if fmt in ("markdown", "both"):
            (out_dir / "report.md").write_text(reports.emit_report(estimates, decisions, deltas, reports.MARKDOWN))
            written.append("report.md")
        if fmt in ("json", "both"):
            (out_dir / "report.json").write_text(reports.emit_report(estimates, decisions, deltas, reports.JSON))
            written.append("report.json")
    if estimates:
        (out_dir / "passk.csv").write_text(reports.passk_csv(estimates))
        written.append("passk.csv")
    if deltas:
        (out_dir / "deltas.csv").write_text(reports.deltas_csv(deltas))
        written.append("deltas.csv")
    if args.reported:
        rows = reports.load_reported_csv(args.reported)
        meta.add_input(args.reported)
        (out_dir / "reported_table.md").write_text(reports.model_table_markdown(rows, args.metric))
        written.append("reported_table.md")
    if args.figures:
        from supportscope import plotting

        if any(e.S for e in estimates):
            plotting.plot_pass_at_k(estimates, out_dir / "passk.png")
            written.append("passk.png")
        if deltas:
            plotting.plot_deltas(deltas, out_dir / "deltas.png")
            written.append("deltas.png")
    meta.save(out_dir / "report.meta.json")
    print("wrote " + ", ".join(str(out_dir / w) for w in written))
    return EXIT_OK


def cmd_probe(args, cfg, argv):
    from supportscope.probe import read_features, train_probe

    meta = _meta(args, cfg, argv)
    train, test = read_features(args.train), read_features(args.test)
    meta.add_input(args.train)
    meta.add_input(args.test)
    result = train_probe(
        train, test,
        lam=cfg.get("probe", "lambda", args.lam),
        max_iters=cfg.get("probe", "max_iters", args.max_iters),
        tol=cfg.get("probe", "tol", args.tol),
        seed=cfg.get("probe", "seed", args.seed),
    )
    payload = {**result.to_dict(), "train_provenance": train.provenance, "test_provenance": test.provenance}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        write_json(args.out, payload)
        _finish(meta, args.out)
    return EXIT_OK


def cmd_serve_mock(args, cfg, argv):
    from supportscope.mock_server import MockServer, ScriptedModelSpec

    spec = ScriptedModelSpec.load(args.spec)
    server = MockServer(spec, port=args.port, host=args.host)
    print(f"mock endpoint listening on {server.url}", flush=True)
    try:
        server._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="supportscope", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"supportscope {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--config", help="INI config file (flags override it)")
        p.set_defaults(func=func)
        return p

    p = add("convert", cmd_convert, "convert a classification manifest into MCQ items")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _bool_flag(p, "shuffle", "shuffle option order per item (seeded)")
    p.add_argument("--seed", type=int)
    _bool_flag(p, "check-images", "fail when an image file is missing")
    p.add_argument("--question", help="question text shown above the options")

    p = add("tag-modality", cmd_tag_modality, "tag item imaging modality with a judge model")
    p.add_argument("--items", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocabulary", type=lambda s: [t.strip() for t in s.split(",") if t.strip()])
    _endpoint_flags(p, "judge")

    p = add("balance", cmd_balance, "draw a group-balanced subset of items")
    p.add_argument("--items", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tags", help="modality tag file; tags replace item modality before balancing")
    p.add_argument("--total", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--group-by", choices=["modality", "label"])

    p = add("eval", cmd_eval, "run greedy and K-sample generation against an endpoint")
    p.add_argument("--items", required=True)
    p.add_argument("--out-dir", required=True)
    _endpoint_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", dest="top_p", type=float)
    p.add_argument("--seed-base", type=int)
    p.add_argument("--template", help="prompt template with {question} and {options}")
    _bool_flag(p, "greedy", "run the greedy (temperature 0) pass")
    _bool_flag(p, "sampled", "run the K-sample pass")
    p.add_argument("--retry-failed", action="store_true", help="on resume, re-request pairs that failed")

    p = add("verify", cmd_verify, "parse responses and assign correctness verdicts")
    p.add_argument("--items", required=True, nargs="+")
    p.add_argument("--responses", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--policy", type=str.upper, choices=["RULE_ONLY", "RULE_THEN_JUDGE"])
    _endpoint_flags(p, "judge")

    p = add("stats", cmd_stats, "estimate Acc@1, Pass@K and the support gap")
    p.add_argument("--records", required=True, nargs="+")
    p.add_argument("--items", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--ks", type=_ints, help="e.g. 1,2,4,8,16")
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--bootstrap-seed", type=int)
    p.add_argument("--lenient", action="store_true", default=None, help="allow per-item sample counts to differ")
    p.add_argument("--group-by-modality", action="store_true", help="also pool tasks by modality")

    p = add("probe", cmd_probe, "train a linear probe on frozen features")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("decide", cmd_decide, "bridge-or-sharpen decision from a support estimate")
    p.add_argument("--estimate", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--k", type=int, help="reference K for Pass@K (default 16)")
    p.add_argument("--task")
    p.add_argument("--pooled", action="store_true", help="decide on modality-pooled estimates")
    p.add_argument("--out")

    p = add("compare", cmd_compare, "before/after deltas with regime tags and collapse flags")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--train-task", required=True)
    p.add_argument("--train-modality", help="modality of the training task if it is not an eval task")
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--collapse-margin", type=float)
    p.add_argument("--pooled", action="store_true")
    p.add_argument("--out")

    p = add("report", cmd_report, "render Markdown/JSON tables, CSV series and figures")
    p.add_argument("--estimates")
    p.add_argument("--decisions")
    p.add_argument("--deltas")
    p.add_argument("--reported", help="CSV of externally reported values (percent) to lay out per model")
    p.add_argument("--metric", default="acc@1", help="metric for --reported tables, e.g. acc@1 or pass@16")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=["markdown", "json", "both"], default="both")
    p.add_argument("--pooled", action="store_true")
    _bool_flag(p, "figures", "render PNG figures next to the CSV series")

    p = add("serve-mock", cmd_serve_mock, "serve the scripted mock endpoint")
    p.add_argument("--spec", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "figures", "absent") is None:
        args.figures = True
    try:
        cfg = Config.load(args.config)
        return args.func(args, cfg, argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
