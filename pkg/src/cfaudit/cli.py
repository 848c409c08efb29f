"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .exceptions import CfauditError, ConfigError, DataError


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_run(args) -> int:
    from .pipeline import AuditConfig, run_audit

    cfg = AuditConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.output or cfg.output
    if out is None:
        raise ConfigError("no output directory: pass -o or set 'output' in the config")
    run_audit(cfg, out, jobs=args.jobs, log=None if args.quiet else _log)
    if not args.quiet:
        _log(f"report written to {out}")
    return 0


def cmd_metrics(args) -> int:
    from .pipeline import Flags, metrics_from_file, write_report

    flags = Flags(missing_as_empty=args.missing_as_empty, mds_input=args.mds_input,
                  mds_pooling="global")
    report = metrics_from_file(args.explanations, args.features, args.methods, flags)
    write_report(report, args.output)
    print(json.dumps({m: report.payload["datasets"][report.datasets[0].name][m]
                      for m in ("exclusion", "span")}, indent=1, sort_keys=True))
    return 0


def _feature_names(args, payload) -> list[str]:
    if args.features:
        from .data import read_schema

        return [f["name"] for f in read_schema(args.features)["features"]]
    # without a schema the universe is every feature named in the file, plus the probed one
    seen = {}
    for rec in payload.get("records", []):
        for name in rec.get("features", []):
            seen.setdefault(name, None)
    seen.setdefault(args.feature, None)
    return list(seen)


def cmd_probe(args) -> int:
    from .explanations import ExplanationSet
    from .metrics import probe

    try:
        with open(args.explanations, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read {args.explanations}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{args.explanations}: invalid JSON ({e})") from None
    names = _feature_names(args, payload)
    if args.feature not in names:
        raise DataError(f"unknown feature {args.feature!r}")
    eset = ExplanationSet.from_dict(payload, names)
    j = names.index(args.feature)
    results = {}
    for oid, recs in eset.by_instance().items():
        if args.instance is not None and oid != args.instance:
            continue
        kept = [r for r in recs.values() if r.found or args.missing_as_empty]
        if not kept:
            continue
        r = probe(kept, j, args.mode, len(names), args.missing_as_empty)
        results[oid] = {"possible": r.possible, "witnesses": list(r.witnesses)}
    if args.instance is not None and not results:
        raise DataError(f"no usable explanations for instance {args.instance!r}")
    rate = sum(r["possible"] for r in results.values()) / len(results) if results else 0.0
    print(json.dumps({"feature": args.feature, "mode": args.mode, "possible_rate": rate,
                      "instances": results}, indent=1))
    return 0


def cmd_mds(args) -> int:
    from .analysis import classical_mds
    from .exceptions import MetricError
    from .metrics import DisagreementMatrix

    try:
        M = DisagreementMatrix.from_csv(args.matrix)
    except OSError as e:
        raise DataError(f"cannot read {args.matrix}: {e.strerror}") from None
    try:
        emb = classical_mds(M, args.dims)
    except MetricError as e:
        # a malformed input matrix is bad input, not a runtime failure
        raise DataError(f"{args.matrix}: {e}") from None
    emb.to_csv(args.output)
    _log(f"stress {emb.stress:.6f}")
    return 0


def cmd_make_datasets(args) -> int:
    from .cfgen import GROUPS
    from .datasets import BUILTIN, write_builtin

    names = args.names or list(BUILTIN)
    entries = write_builtin(args.output, names)
    if args.config:
        out = Path(args.config)
        base = out.parent.resolve()
        for e in entries:
            for k in e:
                p = Path(e[k]).resolve()
                e[k] = str(p.relative_to(base)) if p.is_relative_to(base) else str(p)
        cfg = {"datasets": entries, "methods": list(GROUPS) + ["Anchors", "SHAP"], "sample": 200, "seed": 0}
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(cfg, fh, indent=1)
            fh.write("\n")
    for e in entries:
        print(e["csv"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfaudit", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="generate explanations and compute every table")
    r.add_argument("-c", "--config", required=True)
    r.add_argument("-o", "--output")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int)
    r.add_argument("-q", "--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metrics", help="tables for an interchange file")
    m.add_argument("--explanations", required=True)
    m.add_argument("--features", required=True, help="schema JSON naming the feature universe")
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--methods", nargs="+")
    m.add_argument("--missing-as-empty", action="store_true")
    m.add_argument("--mds-input", choices=("jaccard", "l0"), default="jaccard")
    m.set_defaults(func=cmd_metrics)

    pr = sub.add_parser("probe", help="can a feature be hidden or planted by picking a method?")
    pr.add_argument("--explanations", required=True)
    pr.add_argument("--feature", required=True)
    pr.add_argument("--mode", choices=("exclude", "include"), required=True)
    pr.add_argument("--features", help="schema JSON; defaults to the features named in the file")
    pr.add_argument("--instance")
    pr.add_argument("--missing-as-empty", action="store_true")
    pr.set_defaults(func=cmd_probe)

    d = sub.add_parser("mds", help="classical MDS of a method dissimilarity matrix")
    d.add_argument("--matrix", required=True)
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--dims", type=int, default=2)
    d.set_defaults(func=cmd_mds)

    b = sub.add_parser("make-datasets", help="write the built-in datasets as CSV + schema")
    b.add_argument("-o", "--output", required=True)
    b.add_argument("--names", nargs="+")
    b.add_argument("--config", help="also write a config using every built-in method")
    b.set_defaults(func=cmd_make_datasets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, KeyError) as e:
        _log(f"cfaudit: error: {e.args[0] if e.args else e}")
        return 1
    except CfauditError as e:
        _log(f"cfaudit: failed: {e}")
        return 2
    except OSError as e:
        _log(f"cfaudit: failed: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
