"""Command-line entry point: ``structprompt <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 backend or
runtime failure.  Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import leaderboard as lb
from . import stability as st
from ._version import __version__
from .backends import ScriptedProposer, backend_from_config
from .bfrs import BFRSParams, bfrs_optimize
from .data import load_dataset
from .errors import (BackendError, ConfigError, InvalidArgumentError, LoadError, ProtocolError,
                     QuarantineError, SplitError, StructPromptError, UnavailableError)
from .harness import (ResultGrid, config_hash, evaluate_full, load_fixture_grid, prompt_overhead,
                      run_matrix)
from .mipro import MIPROParams, mipro_optimize
from .program import Method, PromptAssignment, init_from_baseline

log = logging.getLogger("structprompt")

EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 2, 3, 4


class JsonLinesFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({"level": record.levelname, "logger": record.name,
                           "message": record.getMessage()}, sort_keys=True)


def _setup_logging(out: Path | None) -> None:
    root = logging.getLogger("structprompt")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    if out is not None:
        handler = logging.FileHandler(out / "run.log.jsonl", mode="w", encoding="utf-8")
        handler.setFormatter(JsonLinesFormatter())
        root.addHandler(handler)


def load_config(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        data = yaml.safe_load(text) if p.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: cannot parse config ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return data


def _provenance(cfg: Mapping[str, Any], seed: int) -> dict[str, Any]:
    return {"config_hash": config_hash(cfg), "seed": seed, "tool_version": __version__}


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_dir(args) -> Path:
    return Path(args.config).parent if args.config else Path(".")


def _dataset(cfg: Mapping[str, Any], base: Path):
    block = cfg.get("dataset")
    if not isinstance(block, Mapping) or "path" not in block or "baseline_instruction" not in block:
        raise ConfigError("config needs a 'dataset' block with 'path' and 'baseline_instruction'")
    ds_cfg = {k: v for k, v in block.items() if k not in ("path", "baseline_instruction")}
    return load_dataset(base / block["path"], ds_cfg), str(block["baseline_instruction"])


def _backend(cfg: Mapping[str, Any], name: str | None):
    blocks = list(cfg.get("backends", []))
    if "backend" in cfg:
        blocks.append({"id": cfg["backend"].get("id", cfg["backend"].get("kind", "default")),
                       **cfg["backend"]})
    if name:
        for b in blocks:
            if b.get("id") == name:
                return backend_from_config(b)
        if name == "simulated":
            return backend_from_config({"kind": "simulated"})
        raise ConfigError(f"no backend named {name!r} in the config")
    if not blocks:
        raise ConfigError("config names no backend")
    return backend_from_config(blocks[0])


def _proposer(cfg: Mapping[str, Any]):
    block = cfg.get("proposer")
    if block is None:
        return None
    if block.get("kind") == "scripted":
        return ScriptedProposer([str(c) for c in block.get("candidates", [])])
    backend, _ = backend_from_config(block)
    return backend


# --------------------------------------------------------------------------- subcommands


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args)
    _setup_logging(out)
    ds, baseline = _dataset(cfg, _base_dir(args))
    backend, gen = _backend(cfg, args.backend)
    method = Method.parse(args.method or cfg.get("method", "BFRS"))
    block = dict(cfg.get("optimizer", {}))
    if args.seed is not None or "rng_seed" not in block:
        block["rng_seed"] = seed
    program = init_from_baseline(baseline, method)
    try:
        if method is Method.BFRS:
            params = BFRSParams(**block)
            result = bfrs_optimize(program, backend, ds.train, ds.val, params, gen,
                                   parallelism=args.parallelism)
        elif method is Method.MIPROV2:
            params = MIPROParams(**block)
            result = mipro_optimize(program, backend, _proposer(cfg), ds.train, ds.val, params, gen,
                                    parallelism=args.parallelism)
        else:
            raise ConfigError(f"{method.value} is not an optimizer")
    except TypeError as exc:
        raise ConfigError(f"bad optimizer block: {exc}") from exc
    payload = {**_provenance(cfg, seed), "method": method.value, "dataset": ds.name,
               "program": program.to_dict(), **result.to_dict()}
    if out is not None:
        _write_json(out / f"optimize-{method.value}.json", payload)
    summary = {"method": method.value, "best_score": result.best_score,
               "full_val_score": result.full_val_score,
               "demo_ids": [[d.source_example_id for d in s] for s in result.best_assignment.demos],
               "instructions": list(result.best_assignment.instructions),
               "trials": len(result.trials), "warnings": result.warnings}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args)
    _setup_logging(out)
    base = _base_dir(args)
    if "datasets" in cfg and "methods" in cfg:
        matrix_cfg = dict(cfg, seed=seed, parallelism=args.parallelism)
        grid = run_matrix(matrix_cfg, base)
        if out is not None:
            grid.save(out / "grid.json")
        print(json.dumps({"cells": len(grid), "errors": grid.errors}, sort_keys=True))
        return 0

    ds, baseline = _dataset(cfg, base)
    backend, gen = _backend(cfg, args.backend)
    if args.assignment:
        saved = json.loads(Path(args.assignment).read_text())
        assignment = PromptAssignment.from_dict(saved["best_assignment"])
        program = init_from_baseline(baseline, assignment.method).with_assignment(assignment)
    else:
        method = Method.parse(args.method or cfg.get("method", "ZeroShotCoT"))
        if not method.zero_shot:
            raise ConfigError(f"{method.value} needs --assignment from a prior optimize run")
        program = init_from_baseline(baseline, method)
    report = evaluate_full(program, backend, ds.test, gen, args.parallelism, seed)
    payload = {**_provenance(cfg, seed), "method": program.method.value, "dataset": ds.name,
               "split": "test", **report.to_dict()}
    if out is not None:
        _write_json(out / f"evaluate-{program.method.value}.json", payload)
    print(json.dumps({"method": program.method.value, "J": report.J, "ci95": list(report.ci95),
                      "n": report.n, "valid": report.valid}, sort_keys=True))
    if not report.valid:
        return _fail(EXIT_RUNTIME, BackendError(f"{report.flagged}/{report.n} items failed at the backend"))
    return 0


def _grid_from_args(args, cfg: Mapping[str, Any]) -> ResultGrid:
    if getattr(args, "grid", None):
        return ResultGrid.load(args.grid)
    src = args.fixtures or cfg.get("fixtures")
    if src in (None, "bundled"):
        return load_fixture_grid(None)
    return load_fixture_grid(src)


def cmd_leaderboard(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args)
    grid = _grid_from_args(args, cfg)
    report = {**_provenance({"config": cfg, "source": grid.meta.get("source")}, seed),
              **lb.leaderboard_report(grid)}
    rows = lb.leaderboard_rows(grid)
    deltas = report.get("ceiling_delta")
    text = lb.format_table(rows, deltas)
    if out is not None:
        _write_json(out / "leaderboard.json", report)
        (out / "leaderboard.txt").write_text(text + "\n")
        if args.svg:
            from .plots import delta_heatmap
            delta_heatmap(grid, out / "delta_heatmap.svg")
    print(text)
    if "ranks" in report:
        for sel, r in report["ranks"].items():
            ranks = ", ".join(f"{m} {r['mean_rank'][m]:.2f}±{r['rank_std'][m]:.2f}" for m in r["models"])
            print(f"mean rank [{sel}]: {ranks}")
    for f in report.get("flips", []):
        print(f"flip {f['benchmark']}: {f['baseline_order'][0]} > {f['baseline_order'][1]} "
              f"{f['baseline_scores']} -> {f['ceiling_order'][0]} > {f['ceiling_order'][1]} "
              f"{list(reversed(f['ceiling_scores']))}")
    return 0


def cmd_cost_report(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args)
    base = _base_dir(args)
    ds, baseline_text = _dataset(cfg, base)
    baseline = init_from_baseline(baseline_text, Method.HELM_BASELINE)
    items = list(ds.test) or list(ds.examples)
    grid = _grid_from_args(args, cfg) if (args.fixtures or cfg.get("fixtures") or args.grid) else None
    accuracy = lb.method_averages(grid) if grid is not None else {}
    rows = []
    for method in Method:
        if method.zero_shot:
            program = init_from_baseline(baseline_text, method)
        else:
            path = cfg.get("assignments", {}).get(method.value)
            if path is None:
                log.info("no saved assignment for %s; skipped", method.value)
                continue
            saved = json.loads((base / path).read_text())
            program = baseline.with_assignment(PromptAssignment.from_dict(saved["best_assignment"]))
        rec = prompt_overhead(program, baseline, items, macro_accuracy=accuracy.get(method.value))
        rows.append({"method": method.value, "additional_prompt_tokens": rec.additional_prompt_tokens,
                     "macro_accuracy": rec.macro_accuracy})
    if out is not None:
        _write_json(out / "cost_report.json", {**_provenance(cfg, seed), "rows": rows})
        with open(out / "cost_report.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, ["method", "additional_prompt_tokens", "macro_accuracy"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        if args.svg and grid is not None:
            from .plots import cost_scatter
            cost_scatter(rows, out / "cost_scatter.svg")
    for r in rows:
        acc = "-" if r["macro_accuracy"] is None else f"{r['macro_accuracy']:.2f}"
        print(f"{r['method']:<16} +{r['additional_prompt_tokens']:.1f} tokens  accuracy {acc}")
    return 0


def _scenario_report(scn: Mapping[str, Any]) -> dict[str, Any]:
    labels = list(scn["labels"])
    channel = st.AnswerChannel({k: st.Distribution(tuple(labels), tuple(map(float, row)))
                                for k, row in scn["channel"].items()})
    prompts = {name: st.Distribution.of({k: float(v) for k, v in paths.items()})
               for name, paths in scn["prompts"].items()}
    names = list(prompts)
    ref = names[0]
    answers = {n: st.marginal_answer_dist(p, channel) for n, p in prompts.items()}
    out: dict[str, Any] = {"reference": ref, "answers": {n: a.as_dict() for n, a in answers.items()},
                           "margins": {n: st.decision_margin(a).margin for n, a in answers.items()},
                           "pairs": []}
    for n in names[1:]:
        dpi = st.check_dpi(prompts[ref], prompts[n], channel)
        pin = st.check_pinsker(prompts[ref], prompts[n], channel)
        v = st.stability_verdict(answers[ref], answers[n])
        out["pairs"].append({"prompt": n, "tv_tau": dpi.tv_tau, "tv_y": dpi.tv_y,
                             "kl_tau": pin.kl_tau, "pinsker_bound": pin.bound,
                             "dpi_holds": dpi.holds, "pinsker_holds": pin.holds,
                             "guaranteed_invariant": v.guaranteed_invariant,
                             "argmax_equal": v.argmax_equal,
                             "kl_margin_sufficient": bool(
                                 pin.kl_tau != float("inf")
                                 and st.kl_margin_sufficient(pin.kl_tau, out["margins"][ref]))})
    if "direct" in scn:
        direct = st.Distribution.of({k: float(v) for k, v in scn["direct"].items()})
        out["direct_margin"] = st.decision_margin(direct).margin
    return out


def cmd_stability(args) -> int:
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args)
    did_something = False
    if args.demo:
        demo = st.bernoulli_demo()
        print(f"Bernoulli(0.5) vs Bernoulli(0.6): KL = {demo['kl']:.5f}, "
              f"Pinsker bound = {demo['bound']:.5f} (~{demo['bound']:.3f}), "
              f"TV(paths) = {demo['tv_tau']:.5f}, TV(answers) = {demo['tv_y']:.5f}, "
              f"holds = {demo['pinsker_holds']}")
        did_something = True
    if args.scenario:
        scn = json.loads(Path(args.scenario).read_text())
        try:
            report = _scenario_report(scn)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed scenario file: {exc}") from exc
        report = {**_provenance(scn, seed), **report}
        if out is not None:
            _write_json(out / "stability_scenario.json", report)
        print(json.dumps(report, sort_keys=True, default=str))
        did_something = True
    if args.sweep:
        rows = st.stability_sweep(args.sweep, seed=seed)
        summary = {"n": len(rows), "dpi_holds": sum(r.dpi_holds for r in rows),
                   "pinsker_holds": sum(r.pinsker_holds for r in rows),
                   "guaranteed": sum(r.guaranteed for r in rows),
                   "counterexamples": sum(r.guaranteed and not r.argmax_equal for r in rows)}
        if out is not None:
            buf = io.StringIO()
            fields = list(st.SweepRow.__dataclass_fields__)
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(fields)
            for r in rows:
                w.writerow([getattr(r, f) for f in fields])
            (out / "stability_sweep.csv").write_text(buf.getvalue())
            _write_json(out / "stability_sweep.json", {**_provenance({"sweep": args.sweep}, seed),
                                                       **summary})
            if args.svg:
                from .plots import flip_rate_plot
                flip_rate_plot(rows, out / "flip_rate_vs_tv.svg")
        print(json.dumps(summary, sort_keys=True))
        did_something = True
    if not did_something:
        raise InvalidArgumentError("stability needs --demo, --scenario or --sweep")
    return 0


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    grid = load_fixture_grid(None if args.fixtures in (None, "bundled") else args.fixtures)
    grid.meta.update(_provenance({"fixtures": grid.meta.get("source")},
                                 args.seed if args.seed is not None else 0))
    if out is not None:
        grid.save(out / "grid.json")
    print(json.dumps({"cells": len(grid), "models": grid.models, "benchmarks": grid.benchmarks,
                      "methods": [m.value for m in grid.methods]}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--parallelism", type=int, default=8)
    common.add_argument("--out", help="output directory for artifacts")
    common.add_argument("--fixtures", help="fixture CSV, or 'bundled' for the published tables")
    common.add_argument("--method", help="prompting method / optimizer")
    common.add_argument("--backend", help="backend id from the config, or 'simulated'")

    p = argparse.ArgumentParser(prog="structprompt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="run BFRS or MIPROv2").set_defaults(func=cmd_optimize)
    ev = sub.add_parser("evaluate", parents=[common], help="score on the test split (or run a matrix)")
    ev.add_argument("--assignment", help="saved optimize result to evaluate")
    ev.set_defaults(func=cmd_evaluate)
    lbp = sub.add_parser("leaderboard", parents=[common], help="macro stats, ranks and flips")
    lbp.add_argument("--grid", help="saved grid JSON instead of a fixture CSV")
    lbp.add_argument("--svg", action="store_true", help="also write an SVG heat map")
    lbp.set_defaults(func=cmd_leaderboard)
    cr = sub.add_parser("cost-report", parents=[common], help="prompt-token overhead per method")
    cr.add_argument("--grid", help="saved grid JSON for accuracies")
    cr.add_argument("--svg", action="store_true")
    cr.set_defaults(func=cmd_cost_report)
    stp = sub.add_parser("stability", parents=[common], help="path/answer stability lab")
    stp.add_argument("--demo", action="store_true", help="print the Bernoulli worked example")
    stp.add_argument("--scenario", help="scenario JSON with labels, channel and prompts")
    stp.add_argument("--sweep", type=int, default=0, help="number of random triples to check")
    stp.add_argument("--svg", action="store_true")
    stp.set_defaults(func=cmd_stability)
    sub.add_parser("ingest-fixtures", parents=[common],
                   help="load a fixture CSV into a grid JSON").set_defaults(func=cmd_ingest)
    return p


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, LoadError, SplitError, InvalidArgumentError, QuarantineError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (BackendError, UnavailableError, ProtocolError, StructPromptError, OSError) as exc:
        return _fail(EXIT_RUNTIME, exc)


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
