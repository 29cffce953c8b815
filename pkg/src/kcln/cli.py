"""Command-line entry point.

Exit codes: 0 on success, 1 on a configuration or input error, 2 when a run
fails (for example, training diverges).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import runner
from .datagen import GenConfig, generate, write_bench
from .graph import GraphFormatError, SplitSpec, load_graph, load_labels
from .grounding import create_masks, entity_gate_flags
from .metrics import evaluate
from .network import forward, load_checkpoint
from .rules import RuleSyntaxError, load_rules, validate_against

log = logging.getLogger("kcln")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _ConfigProblem(Exception):
    pass


def _experiment(args, protocol):
    overrides = {
        "protocol": protocol,
        "output_dir": args.output_dir,
        "n_seeds": args.n_seeds,
        "sample_fractions": args.fractions,
        "alphas": getattr(args, "alphas", None),
    }
    return runner.load_experiment_config(args.config, **overrides)


def cmd_train(args) -> int:
    cfg = _experiment(args, "epochs")
    print(runner.run_epochs(cfg))
    return EXIT_OK


def cmd_sweep_samples(args) -> int:
    cfg = _experiment(args, "sample_sweep")
    print(runner.run_sample_sweep(cfg))
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    cfg = _experiment(args, "alpha_sweep")
    print(runner.run_alpha_sweep(cfg))
    return EXIT_OK


def cmd_eval(args) -> int:
    g = load_graph(args.entities, args.edges)
    try:
        net_cfg, params, gates, extra = load_checkpoint(args.checkpoint)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise _ConfigProblem(f"malformed checkpoint {args.checkpoint}: {exc}") from None
    if net_cfg.input_dim != g.n_features or net_cfg.n_labels != g.n_labels or net_cfg.n_relations != g.n_relations:
        raise _ConfigProblem("checkpoint does not match the graph's feature, label or relation counts")
    test_ids = extra.get("test_ids")
    if test_ids is None:
        test_ids = range(g.n_entities)
    split = SplitSpec(extra.get("train_ids", []), test_ids, extra.get("seed", 0))
    labels = load_labels(args.labels, g) if args.labels else None
    trace = forward(net_cfg, params, g, gates=gates)
    report = evaluate(trace, g, split, task=args.task or ("binary" if g.n_labels == 2 else "multiclass"), labels=labels)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if args.curve_csv:
        new = not os.path.exists(args.curve_csv) or os.path.getsize(args.curve_csv) == 0
        with open(args.curve_csv, "a", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(runner.CURVE_COLUMNS)
            for name, value in report.metrics.items():
                w.writerow([extra.get("epoch", 0), "eval", name, repr(float(value))])
    return EXIT_OK


def _write_matrix(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_ground(args) -> int:
    g = load_graph(args.entities, args.edges)
    rs = load_rules(args.rules)
    for warning in validate_against(rs, g):
        log.warning(warning)
    masks = create_masks(g, rs, args.threshold)
    os.makedirs(args.out, exist_ok=True)
    _write_matrix(
        os.path.join(args.out, "entity_mask.csv"),
        ["feature", *g.entity_names],
        ([f, *row.tolist()] for f, row in zip(g.feature_names, masks.entity_mask)),
    )
    _write_matrix(
        os.path.join(args.out, "context_mask.csv"),
        ["entity", *g.entity_names],
        ([e, *row.tolist()] for e, row in zip(g.entity_names, masks.context_mask)),
    )
    _write_matrix(
        os.path.join(args.out, "label_mask.csv"),
        ["entity", *g.label_names],
        ([e, *row.tolist()] for e, row in zip(g.entity_names, masks.label_mask)),
    )
    flags = entity_gate_flags(masks)
    summary = {
        "entity_flags": [g.entity_names[i] for i in np.flatnonzero(flags)],
        "preferred_labels": {
            g.entity_names[i]: g.label_names[l] for i, l in enumerate(masks.preferred_label) if l >= 0
        },
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{int(flags.sum())} affected entities")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise _ConfigProblem(f"cannot read {args.config}: {exc}") from None
    for f in fields(GenConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        gen_cfg = GenConfig(**values)
    except TypeError as exc:
        raise _ConfigProblem(str(exc)) from None
    paths = write_bench(generate(gen_cfg), args.out)
    print(paths["manifest"])
    return EXIT_OK


def cmd_plot_data(args) -> int:
    try:
        rows = runner.read_results(args.results)
    except OSError as exc:
        raise _ConfigProblem(str(exc)) from None
    missing = set(runner.RESULT_COLUMNS) - set(rows[0] if rows else runner.RESULT_COLUMNS)
    if missing:
        raise _ConfigProblem(f"results file lacks columns {sorted(missing)}")
    agg = runner.aggregate(rows)
    if args.out:
        runner.write_aggregate(args.out, agg)
        print(args.out)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        cols = ("protocol", "model", "alpha", "sample_fraction", "epoch", "metric", "mean", "sd", "n")
        w.writerow(cols)
        for row in agg:
            w.writerow([row[c] if c not in ("mean", "sd") else repr(row[c]) for c in cols])
    return EXIT_OK


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kcln", description="Knowledge-augmented column networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, fn, help_text, alphas=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--output-dir")
        sp.add_argument("--n-seeds", type=int)
        sp.add_argument("--fractions", type=_floats, help="comma-separated sample fractions")
        if alphas:
            sp.add_argument("--alphas", type=_floats, help="comma-separated alpha values")
        sp.set_defaults(fn=fn)

    experiment("train", cmd_train, "learning curves for K-CLN and vanilla CLN")
    experiment("sweep-samples", cmd_sweep_samples, "final metrics across sample fractions")
    experiment("sweep-alpha", cmd_sweep_alpha, "final K-CLN metrics across alpha values", alphas=True)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    sp.add_argument("checkpoint")
    sp.add_argument("--entities", required=True)
    sp.add_argument("--edges", required=True)
    sp.add_argument("--labels", help="id,label CSV to score against instead of the graph's labels")
    sp.add_argument("--task", choices=("binary", "multiclass"))
    sp.add_argument("--curve-csv", help="append metrics to this learning-curve CSV")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ground", help="ground rules and write advice masks")
    sp.add_argument("--entities", required=True)
    sp.add_argument("--edges", required=True)
    sp.add_argument("--rules", required=True)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ground)

    sp = sub.add_parser("gen-data", help="write a synthetic benchmark")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="JSON with generator settings; flags override it")
    for f in fields(GenConfig):
        kind = {"int": int, "float": float}.get(str(f.type).split(" ")[0], str)
        sp.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("plot-data", help="aggregate a results CSV to mean and sd over seeds")
    sp.add_argument("results")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_plot_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.fn(args)
    except (_ConfigProblem, runner.ConfigError, GraphFormatError, RuleSyntaxError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as exc:
        # bad values that slipped past parsing, e.g. an invalid generator setting
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
