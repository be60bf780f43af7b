"""
Command-line front end.

    kvcompress simulate    --method RocketKV --budget 256 --seq-len 8192 ...
    kvcompress sweep       --method RocketKV,ExactTopK --budget 256,512 --seed 0,1
    kvcompress cost-table  --ratios 2,4,8,16
    kvcompress gen-workload --generator planted_needles --out session.kvtr
    kvcompress ingest      --trace session.kvtr --method RocketKV

Every option may also come from ``--config FILE`` (a JSON object whose keys
are option names, with dashes or underscores); command-line flags win.
List-valued sweep options accept comma-separated strings or JSON arrays.
"""

import argparse
import json
import logging
import sys

from . import report as rep
from .errors import InvalidConfig, KVCompressError, NonFiniteInput, NumericalFailure, TraceFormatError
from .planner import cost_table
from .session import MethodConfig, run_session, sweep
from .trace import read_trace, write_trace
from .workload import GENERATORS, WorkloadSpec, generate_workload

logger = logging.getLogger("kvcompress")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "method": "RocketKV",
    "budget": "256",
    "generator": "planted_needles",
    "seq_len": "4096",
    "decode_steps": 8,
    "turns": 1,
    "groups": 1,
    "heads_per_group": 4,
    "head_dim": 64,
    "needle_count": 64,
    "needle_margin": 5.0,
    "page_len": None,
    "k1": None,
    "k2": None,
    "window": None,
    "kernel": None,
    "pool": "max",
    "split_factor": "adaptive",
    "seed": "0",
    "format": "json",
    "out": None,
    "workers": 1,
    "ratios": "2,4,8,16,32,64,128,256,512,1024",
    "trace": None,
}


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", metavar="PATH", default=S, help="JSON file with option values")
    p.add_argument("--format", choices=("csv", "json"), default=S)
    p.add_argument("--out", metavar="PATH", default=S, help="write the report here instead of stdout")


def _add_workload(p, multi=False):
    S = argparse.SUPPRESS
    p.add_argument("--generator", choices=GENERATORS, default=S)
    p.add_argument("--seq-len", default=S, help="prompt tokens" + (" (comma list)" if multi else ""))
    p.add_argument("--decode-steps", type=int, default=S)
    p.add_argument("--turns", type=int, default=S)
    p.add_argument("--groups", type=int, default=S, help="attention groups (KV heads)")
    p.add_argument("--heads-per-group", type=int, default=S)
    p.add_argument("--head-dim", type=int, default=S)
    p.add_argument("--needle-count", type=int, default=S)
    p.add_argument("--needle-margin", type=float, default=S)
    p.add_argument("--seed", default=S, help="u64 seed" + (" (comma list)" if multi else ""))


def _add_method(p, multi=False):
    S = argparse.SUPPRESS
    lst = " (comma list)" if multi else ""
    p.add_argument("--method", default=S, help="FullKV, ExactTopK, SnapKV, HSA, Quest, SparQ, RocketKV, RocketKV_MT" + lst)
    p.add_argument("--budget", default=S, help="token budget per attention group" + lst)
    p.add_argument("--page-len", type=int, default=S)
    p.add_argument("--k1", type=int, default=S)
    p.add_argument("--k2", type=int, default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--kernel", type=int, default=S)
    p.add_argument("--pool", choices=("max", "avg"), default=S)
    p.add_argument("--split-factor", default=S, help="'adaptive' or a real in [0, 1]" + lst)


def build_parser():
    parser = argparse.ArgumentParser(prog="kvcompress", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one method over one synthetic session")
    _add_workload(p)
    _add_method(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="run a grid of methods, budgets, split factors and seeds")
    _add_workload(p, multi=True)
    _add_method(p, multi=True)
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    _add_common(p)

    p = sub.add_parser("cost-table", help="normalized storage/traffic per method and ratio")
    p.add_argument("--ratios", default=argparse.SUPPRESS, help="comma list of compression ratios")
    _add_common(p)

    p = sub.add_parser("gen-workload", help="write a synthetic session as a trace file")
    _add_workload(p)
    p.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    p.add_argument("--out", metavar="PATH", default=argparse.SUPPRESS, required=False)

    p = sub.add_parser("ingest", help="run one method over a trace file")
    p.add_argument("--trace", metavar="PATH", default=argparse.SUPPRESS, help="input trace file")
    _add_method(p)
    _add_common(p)
    return parser


def _load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InvalidConfig("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _merge(ns):
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    opts = dict(DEFAULTS)
    if "config" in given:
        opts.update(_load_config(given.pop("config")))
    opts.update(given)
    unknown = set(opts) - set(DEFAULTS)
    if unknown:
        raise InvalidConfig(f"unknown option(s): {', '.join(sorted(unknown))}")
    return opts


def _as_list(value, conv):
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [v for v in str(value).split(",") if v.strip()]
    if not items:
        raise InvalidConfig("empty list option")
    return [conv(v) for v in items]


def _split(value):
    if value is None or str(value).strip().lower() == "adaptive":
        return None
    try:
        r = float(value)
    except ValueError:
        raise InvalidConfig(f"split factor must be 'adaptive' or a number, got {value!r}") from None
    return r


def _int(value):
    try:
        return int(str(value).strip())
    except ValueError:
        raise InvalidConfig(f"expected an integer, got {value!r}") from None


def _single(value, conv):
    vals = _as_list(value, conv)
    if len(vals) != 1:
        raise InvalidConfig("this command takes a single value, not a list")
    return vals[0]


def _workload(opts, seq_len, seed):
    return WorkloadSpec(
        generator=opts["generator"],
        seq_len=seq_len,
        decode_steps=int(opts["decode_steps"]),
        turns=int(opts["turns"]),
        num_groups=int(opts["groups"]),
        heads_per_group=int(opts["heads_per_group"]),
        head_dim=int(opts["head_dim"]),
        needle_count=int(opts["needle_count"]),
        needle_margin=float(opts["needle_margin"]),
        seed=seed,
    )


def _method(opts, method, budget, split):
    return MethodConfig(
        method=method,
        budget=budget,
        window=opts["window"],
        kernel=opts["kernel"],
        pool=opts["pool"],
        page_len=opts["page_len"],
        k1=opts["k1"],
        k2=opts["k2"],
        split_factor=split,
    )


def _emit(document, opts):
    text = rep.write_document(document, opts["format"], opts["out"])
    if opts["out"] is None:
        sys.stdout.write(text)


def cmd_simulate(opts):
    wl = _workload(opts, _single(opts["seq_len"], _int), _single(opts["seed"], _int))
    cfg = _method(opts, _single(opts["method"], str), _single(opts["budget"], _int),
                  _single(opts["split_factor"], _split))
    report = run_session(generate_workload(wl), cfg)
    _emit(rep.session_document(report), opts)


def cmd_sweep(opts):
    workloads = [_workload(opts, S, seed)
                 for S in _as_list(opts["seq_len"], _int)
                 for seed in _as_list(opts["seed"], _int)]
    methods = _as_list(opts["method"], str)
    budgets = _as_list(opts["budget"], _int)
    splits = _as_list(opts["split_factor"], _split)
    base = _method(opts, methods[0], budgets[0], None)
    results = sweep(workloads, methods, budgets, splits, workers=int(opts["workers"]), base=base)
    _emit(rep.sweep_document(results), opts)


def cmd_cost_table(opts):
    ratios = _as_list(opts["ratios"], float)
    _emit(rep.cost_document(cost_table(ratios)), opts)


def cmd_gen_workload(opts):
    if not opts["out"]:
        raise InvalidConfig("gen-workload needs --out PATH")
    wl = _workload(opts, _single(opts["seq_len"], _int), _single(opts["seed"], _int))
    n = write_trace(opts["out"], generate_workload(wl))
    logger.info("wrote %d bytes to %s", n, opts["out"])


def cmd_ingest(opts):
    if not opts["trace"]:
        raise InvalidConfig("ingest needs --trace PATH")
    session = read_trace(opts["trace"])
    cfg = _method(opts, _single(opts["method"], str), _single(opts["budget"], _int),
                  _single(opts["split_factor"], _split))
    _emit(rep.session_document(run_session(session, cfg)), opts)


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "cost-table": cmd_cost_table,
    "gen-workload": cmd_gen_workload,
    "ingest": cmd_ingest,
}


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = _merge(ns)
        COMMANDS[ns.command](opts)
    except (NumericalFailure, NonFiniteInput) as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (OSError, TraceFormatError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except (KVCompressError, ValueError, TypeError, json.JSONDecodeError) as exc:
        logger.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
