"""CSV/JSON serialization of decode reports, sweeps and cost tables."""

import csv
import io
import json
import math

import numpy as np

from .metrics import empirical_cdf

__all__ = [
    "SCHEMA_VERSION",
    "fmt_float",
    "report_row",
    "session_document",
    "sweep_document",
    "cost_document",
    "topk_cdf",
    "render",
    "write_document",
]

SCHEMA_VERSION = 1
_WORKLOAD_COLS = ("generator", "seq_len", "decode_steps", "turns", "num_groups",
                  "heads_per_group", "head_dim", "needle_count", "needle_margin", "seed")
_METRIC_COLS = ("mean_recall", "mean_output_l2", "mean_output_cos", "mean_traffic_tokens",
                "max_traffic_tokens", "mean_storage_tokens", "unique_topk_count", "max_seq_len")


def fmt_float(x):
    """Round to 9 significant digits; integers and non-floats pass through."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(f"{x:.9g}")
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    return fmt_float(obj)


def report_row(report, workload=None):
    """Flat summary row for one decode report."""
    wl = workload if workload is not None else report.workload
    row = {c: wl.get(c) for c in _WORKLOAD_COLS}
    row.update(method=report.method, budget=report.budget, split_factor=report.split_factor)
    row.update(report.aggregate())
    turns = sorted({s.turn for s in report.steps})
    for t in turns:
        row[f"turn{t + 1}_recall"] = report.turn_recall(t)
    return _clean(row)


def _steps(report):
    return [_clean(vars(s)) for s in report.steps]


def session_document(report):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "session",
        "summary": report_row(report),
        "unique_topk_scope": "per attention group",
        "unique_topk_per_group": list(report.unique_topk_per_group),
        "plans": _clean(report.plans),
        "steps": _steps(report),
    }


def sweep_document(results):
    rows, details = [], []
    for cell, rep in results:
        rows.append(report_row(rep, cell.workload.to_dict()))
        details.append({"summary": rows[-1], "plans": _clean(rep.plans), "steps": _steps(rep)})
    return {"schema_version": SCHEMA_VERSION, "kind": "sweep", "rows": rows, "cells": details}


def cost_document(rows):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "cost_table",
        "rows": [_clean({"method": r.method, "compression_ratio": r.ratio,
                         "storage": r.storage, "traffic": r.traffic}) for r in rows],
    }


def topk_cdf(pairs):
    """Empirical CDFs of per-instance (max_seq_len, unique top-k count) pairs."""
    pairs = list(pairs)
    seq = [p[0] for p in pairs]
    uniq = [p[1] for p in pairs]
    xs, fs = empirical_cdf(seq)
    xu, fu = empirical_cdf(uniq)
    return {"max_seq_len": (xs, fs), "unique_topk": (xu, fu)}


def cdf_document(pairs):
    cdf = topk_cdf(pairs)
    rows = []
    for series, (x, f) in cdf.items():
        rows.extend({"series": series, "value": v, "cdf": p} for v, p in zip(x, f))
    return {"schema_version": SCHEMA_VERSION, "kind": "topk_cdf", "rows": _clean(rows)}


def render(document, fmt):
    """Serialize a document as ``json`` (all detail) or ``csv`` (its ``rows``)."""
    if fmt == "json":
        return json.dumps(_clean(document), indent=2, sort_keys=False) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    rows = document["rows"] if "rows" in document else [document["summary"]]
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return out.getvalue()


def write_document(document, fmt, path=None):
    text = render(document, fmt)
    if path is None:
        return text
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text
