"""Human-readable and machine-readable summaries of estimates, decisions and deltas."""

from __future__ import annotations

import csv
import io
import json
import re
from collections import OrderedDict
from typing import Mapping, Sequence

from supportscope._io import ValidationError
from supportscope.recipe import REGIMES, DeltaReport, RecipeDecision
from supportscope.stats import SupportEstimate

JSON = "JSON"
MARKDOWN = "MARKDOWN"
UNGROUPED = "unassigned"
DECIMALS = 6


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.{DECIMALS}f}"


def _group_of(e: SupportEstimate) -> str:
    return e.modality or UNGROUPED


def _grouped(estimates: Sequence[SupportEstimate]) -> "OrderedDict[str, list[SupportEstimate]]":
    groups: OrderedDict[str, list[SupportEstimate]] = OrderedDict()
    for e in estimates:
        groups.setdefault(_group_of(e), []).append(e)
    return groups


def _common_digest(things, what: str) -> str | None:
    digests = {t.metadata_digest for t in things}
    if len(digests) > 1:
        raise ValidationError(f"{what} come from different runs (metadata digests: {sorted(map(str, digests))})")
    return next(iter(digests), None)


def check_metadata(estimates, decisions=(), deltas=()) -> dict[str, str | None]:
    """Estimates and decisions must share one run; deltas must share another."""
    est_digest = _common_digest(estimates, "estimates")
    if decisions:
        dec_digest = _common_digest(decisions, "decisions")
        if estimates and dec_digest != est_digest:
            raise ValidationError("decisions were not derived from the supplied estimates (metadata digest mismatch)")
    return {"estimates": est_digest, "deltas": _common_digest(deltas, "deltas") if deltas else None}


def report_tree(
    estimates: Sequence[SupportEstimate],
    decisions: Sequence[RecipeDecision] = (),
    deltas: Sequence[DeltaReport] = (),
) -> dict:
    digests = check_metadata(estimates, decisions, deltas)
    verdicts = {d.task_id: d for d in decisions}
    ks = sorted({k for e in estimates for k in e.S})
    groups = OrderedDict()
    for group, ests in _grouped(estimates).items():
        rows = []
        for e in ests:
            dec = verdicts.get(e.task_id)
            gap_k = dec.config.k_ref if dec else (max(e.S) if e.S else None)
            rows.append({
                "task": e.task_id,
                "n_items": e.n_items,
                "acc@1": round(e.A, DECIMALS),
                "pass@k": {str(k): round(e.S[k], DECIMALS) for k in ks if k in e.S},
                "gap_k": gap_k,
                "gap": None if gap_k is None else round(e.G[gap_k], DECIMALS),
                "verdict": dec.verdict if dec else None,
            })
        groups[group] = rows
    tree = {"metadata": digests, "ks": ks, "groups": groups}
    if deltas:
        tree["deltas"] = [
            {
                "regime": d.regime,
                "train_task": d.train_task,
                "eval_task": d.eval_task,
                "k_ref": d.k_ref,
                "acc@1_before": round(d.before_a, DECIMALS),
                "acc@1_after": round(d.after_a, DECIMALS),
                "delta_acc@1": round(d.delta_a, DECIMALS),
                "pass@k_before": round(d.before_s_k, DECIMALS),
                "pass@k_after": round(d.after_s_k, DECIMALS),
                "delta_pass@k": round(d.delta_s_k, DECIMALS),
                "collapse": d.collapse_flag,
            }
            for d in sorted(deltas, key=lambda d: (REGIMES.index(d.regime), d.train_task, d.eval_task))
        ]
    return tree


def _md_table(header: list[str], rows: list[list[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def tree_to_markdown(tree: dict) -> str:
    ks = tree["ks"]
    lines = ["# Support report", ""]
    meta = tree["metadata"]
    lines.append(f"- estimates run: `{meta['estimates']}`")
    if meta.get("deltas"):
        lines.append(f"- comparison run: `{meta['deltas']}`")
    lines.append("")
    for group, rows in tree["groups"].items():
        gap_ks = sorted({r["gap_k"] for r in rows if r["gap_k"] is not None})
        gap_label = f"G@{gap_ks[0]}" if len(gap_ks) == 1 else "G@K"
        header = ["Task", "Items", "Acc@1", *[f"Pass@{k}" for k in ks], gap_label, "Verdict"]
        body = []
        for r in rows:
            cells = [r["task"], str(r["n_items"]), _fmt(r["acc@1"])]
            cells += [_fmt(r["pass@k"].get(str(k))) for k in ks]
            cells.append(_fmt(r["gap"]) if len(gap_ks) <= 1 else f"{_fmt(r['gap'])} (K={r['gap_k']})")
            cells.append(r["verdict"] or "n/a")
            body.append(cells)
        lines += [f"## {group}", "", *_md_table(header, body), ""]
    if tree.get("deltas"):
        lines += ["## Before / after", ""]
        header = ["Regime", "Train", "Eval", "K", "Acc@1 before", "Acc@1 after", "ΔAcc@1",
                  "Pass@K before", "Pass@K after", "ΔPass@K", "Collapse"]
        body = [
            [d["regime"], d["train_task"], d["eval_task"], str(d["k_ref"]), _fmt(d["acc@1_before"]),
             _fmt(d["acc@1_after"]), _fmt(d["delta_acc@1"]), _fmt(d["pass@k_before"]), _fmt(d["pass@k_after"]),
             _fmt(d["delta_pass@k"]), "yes" if d["collapse"] else "no"]
            for d in tree["deltas"]
        ]
        lines += [*_md_table(header, body), ""]
    return "\n".join(lines)


def emit_report(
    estimates: Sequence[SupportEstimate],
    decisions: Sequence[RecipeDecision] = (),
    deltas: Sequence[DeltaReport] = (),
    format: str = MARKDOWN,
) -> str:
    tree = report_tree(estimates, decisions, deltas)
    if format == JSON:
        return json.dumps(tree, indent=2, ensure_ascii=False) + "\n"
    if format == MARKDOWN:
        return tree_to_markdown(tree)
    raise ValidationError(f"unknown report format {format!r}")


_NUM = re.compile(r"^-?\d+\.\d+$")


def parse_markdown_numbers(markdown: str) -> dict:
    """Recover ``{group: {task: {column: value}}}`` from a rendered report's task tables."""
    out: dict = {}
    group = None
    header = None
    for line in markdown.splitlines():
        if line.startswith("## "):
            group = line[3:].strip()
            header = None
            continue
        if not line.startswith("|") or group is None or group == "Before / after":
            continue
        cells = [c.strip() for c in line.strip("|").split("|")]
        if header is None:
            header = cells
            continue
        if set(line) <= set("|-"):
            continue
        row = dict(zip(header, cells))
        out.setdefault(group, {})[row["Task"]] = {
            col: float(val.split()[0]) for col, val in row.items() if _NUM.match(val.split()[0] if val else "")
        }
    return out


def passk_csv(estimates: Sequence[SupportEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "task", "k", "pass_at_k", "ci_lo", "ci_hi", "acc_at_1"])
    for group, ests in _grouped(estimates).items():
        for e in ests:
            for k in sorted(e.S):
                lo, hi = e.ci.get(f"pass@{k}", (None, None))
                w.writerow([group, e.task_id, k, _fmt(e.S[k]), "" if lo is None else _fmt(lo),
                            "" if hi is None else _fmt(hi), _fmt(e.A)])
    return buf.getvalue()


def deltas_csv(deltas: Sequence[DeltaReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["regime", "train_task", "eval_task", "k_ref", "delta_acc_at_1", "delta_pass_at_k", "collapse"])
    for d in sorted(deltas, key=lambda d: (REGIMES.index(d.regime), d.train_task, d.eval_task)):
        w.writerow([d.regime, d.train_task, d.eval_task, d.k_ref, _fmt(d.delta_a), _fmt(d.delta_s_k),
                    int(d.collapse_flag)])
    return buf.getvalue()


# ------------------------------------------------- model x task (pass-through) layout


def load_reported_csv(path) -> "OrderedDict[str, list[SupportEstimate]]":
    """Read externally reported numbers: columns ``model, task, modality, acc@1[, pass@K ...]`` in percent."""
    rows: OrderedDict[str, list[SupportEstimate]] = OrderedDict()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"model", "task", "modality", "acc@1"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValidationError(f"{path}: reported-values CSV needs columns {sorted(need)}")
        pass_cols = [c for c in reader.fieldnames if re.fullmatch(r"pass@\d+", c)]
        for lineno, r in enumerate(reader, start=2):
            try:
                acc = float(r["acc@1"]) / 100.0
                passes = {int(c[5:]): float(r[c]) / 100.0 for c in pass_cols if r[c] not in ("", None)}
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric value") from None
            rows.setdefault(r["model"], []).append(
                SupportEstimate.from_reported(r["task"], acc, passes, modality=r["modality"])
            )
    return rows


def model_table_markdown(rows: Mapping[str, Sequence[SupportEstimate]], metric: str = "acc@1") -> str:
    """Models as rows, tasks as columns, one table per modality; values in percent, 2 decimals."""
    layout: OrderedDict[str, list[str]] = OrderedDict()
    for ests in rows.values():
        for e in ests:
            tasks = layout.setdefault(_group_of(e), [])
            if e.task_id not in tasks:
                tasks.append(e.task_id)

    def value(e: SupportEstimate) -> float:
        if metric == "acc@1":
            return e.A
        k = int(metric.split("@")[1])
        return e.S[k]

    lines = []
    for group, tasks in layout.items():
        body = []
        for model, ests in rows.items():
            by_task = {e.task_id: e for e in ests if _group_of(e) == group}
            body.append([model] + [f"{100.0 * value(by_task[t]):.2f}" if t in by_task else "n/a" for t in tasks])
        lines += [f"## {group}", "", *_md_table(["Method", *tasks], body), ""]
    return "\n".join(lines)


def parse_model_table(markdown: str) -> dict:
    """Inverse of :func:`model_table_markdown`: ``{group: {model: {task: cell_text}}}``."""
    out: dict = {}
    group = header = None
    for line in markdown.splitlines():
        if line.startswith("## "):
            group, header = line[3:].strip(), None
        elif line.startswith("|") and not set(line) <= set("|-"):
            cells = [c.strip() for c in line.strip("|").split("|")]
            if header is None:
                header = cells
            else:
                out.setdefault(group, {})[cells[0]] = dict(zip(header[1:], cells[1:]))
    return out
