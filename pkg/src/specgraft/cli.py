"""Command-line surface: decode, ablation, calibrate, theory, dump-templates, matrix.

Reports are byte-for-byte reproducible for identical configs and seeds;
timestamps only appear behind ``--timestamps``. Flag overrides win over
file values and are echoed into every report.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone
from importlib import resources

import jsonschema

from .config import RunConfig, derive_prompts, load_run_config
from .engine import (
    ABLATION_SUITES,
    AblationFixture,
    DecodeReport,
    calibrate,
    decode_session,
    run_ablation,
    theory_checks,
)
from .errors import SpecGraftError
from .hybrid import render_tree
from .retrieval import (
    TEMPLATE_DEPTH_COUNTS,
    builtin_templates,
    load_matrix,
    new_matrix,
    save_matrix,
    storage_bytes,
    touched_bytes,
    warmup,
)

OUT_DIR_ENV = "SPECGRAFT_OUT_DIR"

CSV_FIELDS = [
    "suite",
    "variant",
    "method",
    "seed",
    "acceptance",
    "warmup_rounds",
    "steps",
    "tokens",
    "mat",
    "cost_total",
    "speedup_proxy",
    "tradeoff_ratio",
    "stage_d0",
    "stage_d1",
    "stage_d5",
    "stage_none",
    "fill_ratio",
    "regret",
    "coverage_gain_mean",
]


def _schema() -> dict:
    with resources.files("specgraft.schemas").joinpath("report.schema.json").open("r") as fh:
        return json.load(fh)


def _out_path(args, configured: str | None, default_name: str) -> str:
    path = configured or default_name
    if os.path.isabs(path):
        return path
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV, "runs")
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, path)


def _write_report(args, path: str, document: dict) -> None:
    document["generated_at"] = datetime.now(timezone.utc).isoformat() if args.timestamps else None
    jsonschema.validate(document, _schema())
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_row(report: DecodeReport, method: str, seed: int, acceptance: str, warmup_rounds: int,
             suite: str | None = None, variant: str | None = None, include_steps: bool = True) -> dict:
    return {
        "suite": suite,
        "variant": variant,
        "method": method,
        "seed": seed,
        "acceptance": acceptance,
        "warmup_rounds": warmup_rounds,
        "report": report.to_dict(include_steps=include_steps),
    }


def _csv_row(row: dict) -> dict:
    rep = row["report"]
    hist = rep["stage_histogram"]
    return {
        "suite": row.get("suite") or "",
        "variant": row.get("variant") or "",
        "method": row["method"],
        "seed": row["seed"],
        "acceptance": row.get("acceptance", ""),
        "warmup_rounds": row.get("warmup_rounds", ""),
        "steps": rep["steps_count"],
        "tokens": rep["tokens_emitted"],
        "mat": f"{rep['mat']:.6f}",
        "cost_total": f"{rep['cost_total']:.6f}",
        "speedup_proxy": f"{rep['speedup_proxy']:.6f}",
        "tradeoff_ratio": "" if rep.get("tradeoff_ratio") is None else f"{rep['tradeoff_ratio']:.6f}",
        "stage_d0": hist.get("d0", 0),
        "stage_d1": hist.get("d1", 0),
        "stage_d5": hist.get("d5", 0),
        "stage_none": hist.get("none", 0),
        "fill_ratio": "" if rep.get("realized_retrieval_fill") is None else f"{rep['realized_retrieval_fill']:.6f}",
        "regret": "" if rep.get("regret_estimate") is None else f"{rep['regret_estimate']:.6f}",
        "coverage_gain_mean": "" if rep.get("coverage_gain_mean") is None else f"{rep['coverage_gain_mean']:.6f}",
    }


def _write_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(_csv_row(row))


def _overrides(args) -> dict:
    out = {}
    if args.method is not None:
        out["method"] = args.method
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def _load(args) -> RunConfig:
    if not args.config:
        raise SpecGraftError("--config is required for this command")
    return load_run_config(args.config, overrides=_overrides(args))


def _prepared_matrix(run: RunConfig):
    if run.matrix_load:
        matrix = load_matrix(run.matrix_load)
    else:
        matrix = new_matrix(run.vocab.size, run.matrix_k)
        if run.warmup_rounds > 0:
            warmup(matrix, run.target, run.draft, run.warmup_prompts, run.warmup_rounds, config=run.decode)
    return matrix


# ---------------------------------------------------------------------------
# commands


def cmd_decode(args) -> int:
    run = _load(args)
    matrix = _prepared_matrix(run)
    dump_path = args.dump_trees or run.dump_trees
    if dump_path:
        rendered = []
        observer = lambda step, hy: rendered.append(render_tree(hy, run.vocab))  # noqa: E731
        tokens, report = decode_session(
            run.decode, run.target, run.draft, matrix, run.prompt, tree_observer=observer
        )
        with open(_out_path(args, dump_path, "trees.txt"), "w", encoding="utf-8") as fh:
            for i, text in enumerate(rendered):
                fh.write(f"# step {i}\n{text}\n\n")
    else:
        tokens, report = decode_session(run.decode, run.target, run.draft, matrix, run.prompt)

    if args.matrix_out or run.matrix_save:
        save_matrix(_out_path(args, args.matrix_out or run.matrix_save, "matrix.bin"), matrix)

    row = _run_row(report, run.decode.method, run.decode.seed, run.decode.acceptance, run.warmup_rounds)
    document = {
        "schema": "specgraft-report-v1",
        "command": "decode",
        "config": run.raw,
        "overrides": _overrides(args),
        "runs": [row],
    }
    _write_report(args, _out_path(args, run.output_json, "decode.json"), document)
    _write_csv(_out_path(args, run.output_csv, "decode.csv"), [row])
    print(f"method={run.decode.method} mat={report.mat:.3f} proxy={report.speedup_proxy:.3f}")
    return 0


def _ablation_fixture(run: RunConfig) -> AblationFixture:
    prompts = {
        seed: prompt
        for seed, prompt in zip(
            run.ablation_seeds,
            derive_prompts(
                run.corpus_tokens,
                run.vocab,
                count=len(run.ablation_seeds),
                length=run.ablation_prompt_length,
                seed=run.decode.seed ^ 0xAB1A,
            ),
        )
    }
    matrix = new_matrix(run.vocab.size, run.matrix_k)
    if run.warmup_rounds > 0:
        warmup(matrix, run.target, run.draft, run.warmup_prompts, run.warmup_rounds, config=run.decode)
    return AblationFixture(
        target=run.target,
        draft=run.draft,
        warmed_matrix=matrix,
        prompts=prompts,
        config=run.decode,
        warmup_prompts=run.warmup_prompts,
    )


def cmd_ablation(args) -> int:
    run = _load(args)
    fixture = _ablation_fixture(run)
    rows_out = []
    for raw in run_ablation(args.suite, fixture, jobs=args.jobs):
        rows_out.append(
            _run_row(
                raw["report"],
                raw["method"],
                raw["seed"],
                raw["acceptance"],
                raw["warmup_rounds"],
                suite=args.suite,
                variant=raw["variant"],
                include_steps=False,
            )
        )
    document = {
        "schema": "specgraft-report-v1",
        "command": "ablation",
        "config": run.raw,
        "overrides": _overrides(args),
        "runs": rows_out,
    }
    _write_report(args, _out_path(args, run.output_json, f"ablation_{args.suite}.json"), document)
    _write_csv(_out_path(args, run.output_csv, f"ablation_{args.suite}.csv"), rows_out)
    print(f"suite={args.suite} runs={len(rows_out)}")
    return 0


def cmd_calibrate(args) -> int:
    run = _load(args)
    matrix = _prepared_matrix(run)
    result = calibrate(run.target, run.draft, matrix, run.warmup_prompts, run.calibration_grid, run.decode)
    document = {
        "schema": "specgraft-report-v1",
        "command": "calibrate",
        "config": run.raw,
        "overrides": _overrides(args),
        "runs": [],
        "calibration": {
            "thresholds": {str(d): v for d, v in result.thresholds.items()},
            "objective_trace": [
                {"thresholds": {str(d): v for d, v in vec.items()}, "proxy": score}
                for vec, score in result.objective_trace
            ],
        },
    }
    _write_report(args, _out_path(args, run.output_json, "calibrate.json"), document)
    print(" ".join(f"d{d}={v:.3f}" for d, v in sorted(result.thresholds.items())))
    return 0


def cmd_theory(args) -> int:
    report = theory_checks(
        seed=args.seed if args.seed is not None else 0,
        n_monotonic=args.trials,
        n_graft=args.trials,
        n_coverage=max(args.trials // 10, 10),
    )
    document = {
        "schema": "specgraft-report-v1",
        "command": "theory",
        "config": {},
        "overrides": _overrides(args),
        "runs": [],
        "theory": report,
    }
    _write_report(args, _out_path(args, args.out, "theory.json"), document)
    ok = (
        report["subset_monotonicity"]["violations"] == 0
        and report["graft_monotonicity"]["violations"] == 0
        and report["coverage_gain"]["negative"] == 0
        and report["coverage_gain"]["strict_violations"] == 0
    )
    print(f"theory checks {'pass' if ok else 'FAIL'}: {json.dumps(report, sort_keys=True)}")
    return 0 if ok else 1


def cmd_dump_templates(args) -> int:
    templates = builtin_templates(args.k)
    for name in ("full", "d0", "d1", "d5"):
        t = templates[name]
        counts = "+".join(str(c) for c in t.depth_counts())
        print(f"{name}: nodes={t.declared_size} depths={counts}")
        assert tuple(t.depth_counts()) == TEMPLATE_DEPTH_COUNTS[name]
        if args.full:
            for i in range(t.declared_size):
                node = t.node(i)
                print(f"  {i:3d} parent={node.parent:3d} depth={node.depth} rank={node.rank} path={t.rank_path(i)}")
    return 0


def cmd_matrix(args) -> int:
    if args.action == "save":
        run = _load(args)
        matrix = _prepared_matrix(run)
        path = _out_path(args, args.path or run.matrix_save, "matrix.bin")
        save_matrix(path, matrix)
        print(f"saved {path} rows_touched={matrix.touched_rows()}")
        return 0
    if args.action == "load":
        matrix = load_matrix(args.path)
        print(f"loaded vocab={matrix.vocab_size} k={matrix.k} rows_touched={matrix.touched_rows()}")
        return 0
    # stats
    if args.path:
        matrix = load_matrix(args.path)
    else:
        run = _load(args)
        matrix = new_matrix(run.vocab.size, run.matrix_k)
    print(
        f"vocab={matrix.vocab_size} k={matrix.k} rows_touched={matrix.touched_rows()} "
        f"dense_bytes={storage_bytes(matrix)} touched_bytes={touched_bytes(matrix)}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specgraft", description=__doc__)
    parser.add_argument("--config", help="run configuration file (YAML)")
    parser.add_argument("--seed", type=int, default=None, help="override decode seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sessions for ablation")
    parser.add_argument("--out-dir", default=None, help=f"output directory (default ${OUT_DIR_ENV} or ./runs)")
    parser.add_argument("--method", default=None, help="override the decode method")
    parser.add_argument("--timestamps", action="store_true", help="stamp reports with generation time")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="run one decode session and write reports")
    p.add_argument("--matrix-out", default=None, help="save the post-session matrix snapshot")
    p.add_argument("--dump-trees", default=None, help="write a text rendering of each step's tree")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("ablation", help="run a paired ablation suite")
    p.add_argument("--suite", choices=ABLATION_SUITES, required=True)
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser("calibrate", help="calibrate pruning thresholds on warm-up prompts")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("theory", help="run randomized property checks")
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--out", default=None, help="report filename")
    p.set_defaults(fn=cmd_theory)

    p = sub.add_parser("dump-templates", help="print the builtin retrieval templates")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--full", action="store_true", help="also list every template node")
    p.set_defaults(fn=cmd_dump_templates)

    p = sub.add_parser("matrix", help="matrix snapshot save/load/stats")
    p.add_argument("action", choices=("save", "load", "stats"))
    p.add_argument("--path", default=None, help="snapshot path")
    p.set_defaults(fn=cmd_matrix)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SpecGraftError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
