"""Deterministic command-line driver for every pipeline stage.

Every subcommand reads and writes only the documented file formats, logs the
resolved configuration and seed, and embeds the configuration hash plus tool
version in every artifact it produces, so a bundle can be audited for
consistency and reruns are byte-identical. Output is plain text (NO_COLOR is
honored trivially; nothing is ever colored).

Exit codes: 0 success, 1 domain errors (e.g. no unstable direction),
2 usage or schema errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, jsonio, rbm
from .cloning import (
    AttackConfig,
    attack_experiment,
    report_to_csv,
)
from .couplings import (
    OperatorBasis,
    detect_fixed_point,
    flow_trace,
    flow_trace_to_csv,
)
from .errors import CloneGuardError, SchemaError
from .jsonio import canonical_hash
from .poisoning import CHAIN_RULE, SCORE_ORACLE, fim, poison_dataset
from .rbm import CLASSIFICATION, GENERATION, load_model, model_to_json
from .stability import relevance_report
from .states import BinaryState, OutputVector
from .training import (
    TrainingConfig,
    load_dataset,
    make_task,
    save_dataset,
    train_layerwise,
)

TASK_NAMES = ("copy", "parity", "teacher")


# ---------------------------------------------------------------------------
# small parsing / emission helpers
# ---------------------------------------------------------------------------

def _parse_bits(text: str) -> BinaryState:
    raw = text.replace(",", "")
    if not raw or any(c not in "01" for c in raw):
        raise SchemaError(f"expected a bit string like 0110, got {text!r}")
    return BinaryState(tuple(int(c) for c in raw))


def _parse_reals(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise SchemaError(f"expected comma-separated reals, got {text!r}") from exc


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(tok) for tok in text.split(","))
    except ValueError as exc:
        raise SchemaError(f"expected comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise SchemaError("at least one seed is required")
    return seeds


def _parse_basis(text: str, n: int) -> OperatorBasis:
    """'complete' or semicolon-separated subsets like '0;1;0,1'."""
    if text == "complete":
        return OperatorBasis.complete_basis(n)
    try:
        subsets = [tuple(int(tok) for tok in part.split(",")) for part in text.split(";")]
        return OperatorBasis.truncated(n, subsets)
    except ValueError as exc:
        raise SchemaError(f"bad basis spec {text!r}: {exc}") from exc


def _meta_line(config_hash: str) -> str:
    return f"# config_hash={config_hash} tool_version={__version__}\n"


def _write_csv(path: Path, body: str, config_hash: str) -> None:
    path.write_text(_meta_line(config_hash) + body)


def _write_json(path: Path, doc: dict, config_hash: str) -> None:
    stamped = {"config_hash": config_hash, "tool_version": __version__}
    stamped.update(doc)
    path.write_text(jsonio.dumps(stamped))


def _args_config(args: argparse.Namespace, keys: list[str]) -> dict:
    return {"command": args.command, **{k: getattr(args, k) for k in keys}}


def _log_config(config: dict, config_hash: str) -> None:
    print(f"config: {jsonio.dumps_compact(config)}")
    print(f"config_hash: {config_hash}")


def _read_artifact_hash(path: Path) -> str | None:
    """config_hash embedded in a JSON or CSV artifact, if any."""
    text = path.read_text()
    if path.suffix == ".json":
        doc = jsonio.loads(text)
        return doc.get("config_hash") if isinstance(doc, dict) else None
    first = text.splitlines()[0] if text else ""
    if first.startswith("# config_hash="):
        return first.split("config_hash=")[1].split()[0]
    return None


def _validate_outputs(paths: list[Path]) -> None:
    """Self-check: every written artifact re-reads under its schema."""
    for path in paths:
        text = path.read_text()
        if path.suffix == ".json":
            jsonio.loads(text)
        elif path.suffix == ".jsonl":
            load_dataset(path)
        elif path.suffix == ".csv":
            lines = [l for l in text.splitlines() if not l.startswith("#")]
            if not lines:
                raise SchemaError("empty CSV", path=str(path))
            width = len(lines[0].split(","))
            if width == 0:
                raise SchemaError("CSV has no columns", path=str(path))
        print(f"validated: {path}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_task(args) -> int:
    config = _args_config(args, ["name", "n", "seed"])
    h = canonical_hash(config)
    _log_config(config, h)
    dataset = make_task(args.name, args.n, args.seed)
    save_dataset(dataset, args.out)
    print(f"wrote: {args.out} ({len(dataset)} records)")
    if args.validate:
        _validate_outputs([Path(args.out)])
    return 0


def _trainer_from_file(path: str | None) -> TrainingConfig:
    if path is None:
        return TrainingConfig()
    doc = jsonio.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise SchemaError("trainer config must be a JSON object", path=path)
    known = {"learning_rate", "max_sweeps", "inner_steps", "tol", "seed", "init_scale"}
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"unknown trainer field {sorted(unknown)[0]!r}", path=path)
    try:
        return TrainingConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), path=path) from exc


def cmd_train(args) -> int:
    trainer = _trainer_from_file(args.config)
    config = _args_config(args, ["task", "n", "N"])
    config["trainer"] = trainer.to_dict()
    h = canonical_hash(config)
    _log_config(config, h)
    dataset = load_dataset(args.task)
    stack, trace = train_layerwise(args.n, args.N, dataset, trainer)
    out = Path(args.out)
    out.write_text(model_to_json(stack, config_hash=h, tool_version=__version__))
    trace_path = out.with_suffix(".trace.csv")
    body = "sweep,objective\n" + "".join(
        f"{i},{jsonio.fmt17(v)}\n" for i, v in enumerate(trace)
    )
    _write_csv(trace_path, body, h)
    print(f"wrote: {out}")
    print(f"wrote: {trace_path}")
    print(f"final objective: {trace[-1]:.6g} after {len(trace) - 1} sweeps")
    if args.validate:
        load_model(out)
        _validate_outputs([out, trace_path])
    return 0


def cmd_propagate(args) -> int:
    config = _args_config(args, ["model", "x"])
    h = canonical_hash(config)
    _log_config(config, h)
    stack = load_model(args.model)
    x = _parse_bits(args.x)
    flow = rbm.classify_propagate(stack, x)
    q = flow.dists[-1]
    doc = {
        "x": list(x.bits),
        "q_N": [float(p) for p in q.probs],
        "decode": list(BinaryState.from_index(stack.n, int(np.argmax(q.probs))).bits),
    }
    if args.out:
        _write_json(Path(args.out), doc, h)
        print(f"wrote: {args.out}")
        if args.validate:
            _validate_outputs([Path(args.out)])
    else:
        print(jsonio.dumps(doc), end="")
    return 0


def cmd_couplings(args) -> int:
    config = _args_config(args, ["model", "direction", "cond", "basis"])
    h = canonical_hash(config)
    _log_config(config, h)
    stack = load_model(args.model)
    basis = _parse_basis(args.basis, stack.n)
    if args.direction == CLASSIFICATION:
        cond = _parse_bits(args.cond)
    else:
        cond = OutputVector(_parse_reals(args.cond))
    trace = flow_trace(stack, cond, args.direction, basis)
    if trace.approximate:
        print("warning: truncated basis; extracted couplings are approximate")
    _write_csv(Path(args.out), flow_trace_to_csv(trace), h)
    print(f"wrote: {args.out}")
    if args.validate:
        _validate_outputs([Path(args.out)])
    return 0


def cmd_stability(args) -> int:
    config = _args_config(args, ["model", "direction", "cond", "fd_step", "tol_eig",
                                 "fixed_point_tol", "window"])
    h = canonical_hash(config)
    _log_config(config, h)
    stack = load_model(args.model)
    if args.direction == CLASSIFICATION:
        cond = _parse_bits(args.cond)
        cond_doc = list(cond.bits)
    else:
        cond = OutputVector(_parse_reals(args.cond))
        cond_doc = [float(v) for v in cond.components]
    trace = flow_trace(stack, cond, args.direction)
    verdict = None
    if trace.deltas.size >= args.window:
        verdict = detect_fixed_point(trace, tol=args.fixed_point_tol, window=args.window)
    report = relevance_report(stack, trace, fd_step=args.fd_step,
                              tol_eig=args.tol_eig, verdict=verdict)
    doc = report.to_doc()
    doc["conditioning"] = cond_doc
    doc["fixed_point"] = None if verdict is None else {
        "converged": verdict.converged,
        "tail_delta": verdict.tail_delta,
        "tol": verdict.tol,
        "window": verdict.window,
    }
    _write_json(Path(args.out), doc, h)
    print(f"wrote: {args.out}")
    print(f"has_relevant: {report.has_relevant} "
          f"(max eigenvalue modulus {report.max_eigenvalue_modulus:.6g}, "
          f"cumulative top singular {report.cumulative_top_singular:.6g})")
    if args.validate:
        _validate_outputs([Path(args.out)])
    return 0


def _fim_doc(result) -> dict:
    return {
        "method": result.method,
        "y": [float(v) for v in result.y.components],
        "matrix": [[float(v) for v in row] for row in result.matrix],
        "eigenvalues": [float(v) for v in result.eigenvalues],
        "eigenvectors": [[float(v) for v in row] for row in result.eigenvectors],
        "warning": result.warning,
    }


def cmd_fim(args) -> int:
    config = _args_config(args, ["model", "y", "method", "fd_step"])
    h = canonical_hash(config)
    _log_config(config, h)
    stack = load_model(args.model)
    y = OutputVector(_parse_reals(args.y))
    doc: dict = {}
    if args.method in ("chain", "both"):
        doc["chain_rule"] = _fim_doc(fim(stack, y, CHAIN_RULE, args.fd_step))
    if args.method in ("oracle", "both"):
        doc["score_oracle"] = _fim_doc(fim(stack, y, SCORE_ORACLE, args.fd_step))
    if args.method == "both":
        a = np.array(doc["chain_rule"]["matrix"])
        b = np.array(doc["score_oracle"]["matrix"])
        denom = max(float(np.linalg.norm(b)), 1e-300)
        doc["frobenius_difference"] = float(np.linalg.norm(a - b))
        doc["relative_frobenius_difference"] = float(np.linalg.norm(a - b)) / denom
    _write_json(Path(args.out), doc, h)
    print(f"wrote: {args.out}")
    if args.validate:
        _validate_outputs([Path(args.out)])
    return 0


def cmd_poison(args) -> int:
    config = _args_config(args, ["model", "task", "budget", "fd_step"])
    h = canonical_hash(config)
    _log_config(config, h)
    stack = load_model(args.model)
    dataset = load_dataset(args.task)
    poisoned, report = poison_dataset(stack, dataset, args.budget, fd_step=args.fd_step)
    out = Path(args.out)
    save_dataset(poisoned, out)
    report_path = out.with_suffix(".report.json")
    _write_json(report_path, report.to_doc(), h)
    print(f"wrote: {out}")
    print(f"wrote: {report_path}")
    n_poisoned = sum(r.poisoned for r in report.records)
    print(f"poisoned {n_poisoned} of {len(report.records)} distinct labels")
    if args.validate:
        _validate_outputs([out, report_path])
    return 0


def cmd_clone(args) -> int:
    trainer = _trainer_from_file(args.config)
    config = _args_config(args, ["victim", "task", "budget", "seeds", "clone_N"])
    config["trainer"] = trainer.to_dict()
    h = canonical_hash(config)
    _log_config(config, h)
    victim = load_model(args.victim)
    task = load_dataset(args.task)
    depth = args.clone_N if args.clone_N is not None else victim.depth
    attack = AttackConfig(n=victim.n, depth=depth, trainer=trainer,
                          budget=args.budget, seeds=_parse_seeds(args.seeds))
    report = attack_experiment(victim, task, attack)
    out = Path(args.out)
    _write_json(out, report.to_doc(), h)
    csv_path = out.with_suffix(".csv")
    _write_csv(csv_path, report_to_csv(report), h)
    print(f"wrote: {out}")
    print(f"wrote: {csv_path}")
    print(f"poisoning_available: {report.poisoning_available}")
    if args.validate:
        _validate_outputs([out, csv_path])
    return 0


def cmd_report(args) -> int:
    bundle = Path(args.bundle)
    if not bundle.is_dir():
        raise SchemaError(f"bundle directory {bundle} does not exist")
    artifacts = sorted(
        p for p in bundle.iterdir()
        if p.suffix in (".json", ".csv") and p.name != "summary.json"
    )
    if not artifacts:
        raise SchemaError("bundle contains no JSON/CSV artifacts", path=str(bundle))
    hashes = {}
    for p in artifacts:
        h = _read_artifact_hash(p)
        if h is not None:
            hashes[p.name] = h
    distinct = sorted(set(hashes.values()))
    if len(distinct) > 1:
        detail = ", ".join(f"{name}={h[:12]}" for name, h in sorted(hashes.items()))
        raise SchemaError(f"mixed config hashes in bundle: {detail}")
    if not distinct:
        raise SchemaError("no artifact in the bundle carries a config hash")
    summary_path = bundle / "summary.json"
    if not summary_path.exists():
        raise SchemaError("bundle has no summary.json; run the pipeline first")
    summary = jsonio.loads(summary_path.read_text())
    if summary.get("config_hash") != distinct[0]:
        raise SchemaError("summary.json hash does not match the bundle artifacts")
    _write_json(Path(args.out), {k: v for k, v in summary.items()
                                 if k not in ("config_hash", "tool_version")},
                distinct[0])
    print(f"wrote: {args.out}")
    print(f"bundle consistent: {len(artifacts)} artifacts, config_hash {distinct[0][:12]}")
    if args.validate:
        _validate_outputs([Path(args.out)])
    return 0


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

_CONFIG_DEFAULTS = {
    "task": {"name": "copy", "n": 2, "seed": 0},
    "architecture": {"N": 2},
    "trainer": TrainingConfig().to_dict(),
    "basis": "complete",
    "analysis": {"fd_step": 1e-4, "fixed_point_tol": 1e-3, "window": 2, "tol_eig": 1e-6},
    "poison_budget": 0.05,
    "attack_seeds": [0, 1, 2, 3, 4],
}


def _merge_strict(defaults: dict, overrides: dict, path: str) -> dict:
    merged = dict(defaults)
    for key, value in overrides.items():
        if key not in defaults:
            raise SchemaError("unknown field", path=f"{path}{key}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise SchemaError("expected an object", path=f"{path}{key}")
            merged[key] = _merge_strict(defaults[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def load_experiment_config(path: str) -> dict:
    """Strict experiment config: unknown fields are rejected, defaults filled in."""
    try:
        doc = jsonio.loads(Path(path).read_text())
    except ValueError as exc:
        raise SchemaError(f"not valid JSON: {exc}", path=path) from exc
    if not isinstance(doc, dict):
        raise SchemaError("experiment config must be a JSON object", path=path)
    return _merge_strict(_CONFIG_DEFAULTS, doc, "")


def cmd_pipeline(args) -> int:
    config = load_experiment_config(args.config)
    h = canonical_hash(config)
    _log_config(config, h)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = "gen-task"
    try:
        n = config["task"]["n"]
        dataset = make_task(config["task"]["name"], n, config["task"]["seed"])
        task_path = out_dir / "task.jsonl"
        save_dataset(dataset, task_path)

        stage = "train"
        trainer = TrainingConfig(**config["trainer"])
        stack, trace = train_layerwise(n, config["architecture"]["N"], dataset, trainer)
        model_path = out_dir / "model.json"
        model_path.write_text(model_to_json(stack, config_hash=h, tool_version=__version__))
        _write_csv(out_dir / "training_trace.csv",
                   "sweep,objective\n" + "".join(
                       f"{i},{jsonio.fmt17(v)}\n" for i, v in enumerate(trace)), h)

        stage = "stability"
        analysis = config["analysis"]
        basis = (OperatorBasis.complete_basis(n) if config["basis"] == "complete"
                 else _parse_basis(";".join(",".join(str(i) for i in s)
                                            for s in config["basis"]), n))
        if not basis.complete:
            raise SchemaError("stability analysis requires the complete basis", path="basis")
        distinct_xs, distinct_ys = [], []
        for x, y, _ in dataset.items():
            if all(x.index != e.index for e in distinct_xs):
                distinct_xs.append(x)
            if all(y.components != e.components for e in distinct_ys):
                distinct_ys.append(y)
        vulnerability = {"has_relevant": False, "max_eigenvalue_modulus": 0.0,
                         "max_cumulative_top_singular": 0.0, "entries": []}
        for x in distinct_xs:
            tr = flow_trace(stack, x, CLASSIFICATION, basis)
            _write_csv(out_dir / f"flow_classification_x{x.index}.csv",
                       flow_trace_to_csv(tr), h)
            rep = relevance_report(stack, tr, fd_step=analysis["fd_step"],
                                   tol_eig=analysis["tol_eig"])
            doc = rep.to_doc()
            doc["conditioning"] = list(x.bits)
            vulnerability["entries"].append(doc)
            vulnerability["has_relevant"] |= rep.has_relevant
            vulnerability["max_eigenvalue_modulus"] = max(
                vulnerability["max_eigenvalue_modulus"], rep.max_eigenvalue_modulus)
            vulnerability["max_cumulative_top_singular"] = max(
                vulnerability["max_cumulative_top_singular"], rep.cumulative_top_singular)
        _write_json(out_dir / "stability_classification.json", vulnerability, h)
        defence = {"has_relevant": False, "max_eigenvalue_modulus": 0.0,
                   "max_cumulative_top_singular": 0.0, "entries": []}
        for y in distinct_ys:
            tr = flow_trace(stack, y, GENERATION, basis)
            _write_csv(out_dir / f"flow_generation_y{y.rounded().index}.csv",
                       flow_trace_to_csv(tr), h)
            rep = relevance_report(stack, tr, fd_step=analysis["fd_step"],
                                   tol_eig=analysis["tol_eig"])
            doc = rep.to_doc()
            doc["conditioning"] = [float(v) for v in y.components]
            defence["entries"].append(doc)
            defence["has_relevant"] |= rep.has_relevant
            defence["max_eigenvalue_modulus"] = max(
                defence["max_eigenvalue_modulus"], rep.max_eigenvalue_modulus)
            defence["max_cumulative_top_singular"] = max(
                defence["max_cumulative_top_singular"], rep.cumulative_top_singular)
        _write_json(out_dir / "stability_generation.json", defence, h)

        stage = "fim"
        fim_doc = {"entries": []}
        max_top_eigenvalue = 0.0
        for y in distinct_ys:
            chain = fim(stack, y, CHAIN_RULE, analysis["fd_step"])
            oracle = fim(stack, y, SCORE_ORACLE, analysis["fd_step"])
            denom = max(float(np.linalg.norm(oracle.matrix)), 1e-300)
            entry = {
                "chain_rule": _fim_doc(chain),
                "score_oracle": _fim_doc(oracle),
                "relative_frobenius_difference":
                    float(np.linalg.norm(chain.matrix - oracle.matrix)) / denom,
            }
            fim_doc["entries"].append(entry)
            max_top_eigenvalue = max(max_top_eigenvalue, chain.top_eigenvalue)
        fim_doc["max_top_eigenvalue"] = max_top_eigenvalue
        _write_json(out_dir / "fim.json", fim_doc, h)

        stage = "poison"
        poisoned, poison_report = poison_dataset(stack, dataset, config["poison_budget"],
                                                 fd_step=analysis["fd_step"])
        save_dataset(poisoned, out_dir / "poisoned_task.jsonl")
        _write_json(out_dir / "poison_report.json", poison_report.to_doc(), h)

        stage = "clone"
        attack = AttackConfig(n=n, depth=stack.depth, trainer=trainer,
                              budget=config["poison_budget"],
                              seeds=tuple(config["attack_seeds"]))
        clone_report = attack_experiment(stack, dataset, attack)
        _write_json(out_dir / "clone_report.json", clone_report.to_doc(), h)
        _write_csv(out_dir / "clone_summary.csv", report_to_csv(clone_report), h)

        stage = "report"
        summary = {
            "task": config["task"],
            "architecture": config["architecture"],
            "vulnerability": {
                "classification_has_relevant": vulnerability["has_relevant"],
                "max_eigenvalue_modulus": vulnerability["max_eigenvalue_modulus"],
                "max_cumulative_top_singular": vulnerability["max_cumulative_top_singular"],
            },
            "defence": {
                "generation_has_relevant": defence["has_relevant"],
                "max_eigenvalue_modulus": defence["max_eigenvalue_modulus"],
                "max_cumulative_top_singular": defence["max_cumulative_top_singular"],
                "fim_nonzero": bool(max_top_eigenvalue > 1e-12),
                "max_fim_eigenvalue": max_top_eigenvalue,
                "available": bool(defence["has_relevant"] or max_top_eigenvalue > 1e-12),
            },
            "attack": {
                "budget": config["poison_budget"],
                "poisoning_available": clone_report.poisoning_available,
                "aggregates": clone_report.aggregates(),
                "detectability": clone_report.detectability(),
            },
            "artifacts": sorted(p.name for p in out_dir.iterdir() if p.is_file()),
        }
        _write_json(out_dir / "summary.json", summary, h)
    except Exception:
        print(f"pipeline aborted during stage: {stage} "
              f"(partial artifacts retained in {out_dir})", file=sys.stderr)
        raise
    print(f"bundle complete: {out_dir}")
    if args.validate:
        _validate_outputs(sorted(p for p in out_dir.iterdir()
                                 if p.suffix in (".json", ".jsonl", ".csv")))
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloneguard",
        description="Coupling-flow diagnostics and anti-cloning output poisoning "
                    "for desk-scale RBM stacks.",
    )
    parser.add_argument("--version", action="version", version=f"cloneguard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-task", help="write a built-in task dataset")
    p.add_argument("--name", required=True, choices=TASK_NAMES)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_task)

    p = sub.add_parser("train", help="train a stack on a task dataset")
    p.add_argument("--task", required=True)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--N", required=True, type=int)
    p.add_argument("--config", default=None, help="trainer config JSON")
    p.add_argument("--out", required=True, help="model file; trace CSV written beside it")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("propagate", help="classify one input exactly")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True, help="bit string, e.g. 01")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("couplings", help="export a coupling flow trace as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--direction", required=True, choices=(CLASSIFICATION, GENERATION))
    p.add_argument("--cond", required=True,
                   help="bit string (classification) or comma reals (generation)")
    p.add_argument("--basis", default="complete",
                   help="'complete' or subsets like '0;1;0,1'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_couplings)

    p = sub.add_parser("stability", help="stability matrices and relevance report")
    p.add_argument("--model", required=True)
    p.add_argument("--direction", required=True, choices=(CLASSIFICATION, GENERATION))
    p.add_argument("--cond", required=True)
    p.add_argument("--fd-step", dest="fd_step", type=float, default=1e-4)
    p.add_argument("--tol-eig", dest="tol_eig", type=float, default=1e-6)
    p.add_argument("--fixed-point-tol", dest="fixed_point_tol", type=float, default=1e-3)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("fim", help="Fisher information of generation at one output")
    p.add_argument("--model", required=True)
    p.add_argument("--y", required=True, help="comma reals, e.g. 1,0")
    p.add_argument("--method", choices=("chain", "oracle", "both"), default="chain")
    p.add_argument("--fd-step", dest="fd_step", type=float, default=1e-4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fim)

    p = sub.add_parser("poison", help="emit the poisoned counterpart of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--budget", type=float, default=0.05)
    p.add_argument("--fd-step", dest="fd_step", type=float, default=1e-4)
    p.add_argument("--out", required=True,
                   help="poisoned dataset; report JSON written beside it")
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("clone", help="paired clean/poisoned extraction experiment")
    p.add_argument("--victim", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--budget", type=float, default=0.05)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--clone-N", dest="clone_N", type=int, default=None,
                   help="clone depth (defaults to the victim's)")
    p.add_argument("--config", default=None, help="trainer config JSON")
    p.add_argument("--out", required=True, help="report JSON; summary CSV beside it")
    p.set_defaults(func=cmd_clone)

    p = sub.add_parser("report", help="audit a bundle and re-emit its summary")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run every stage from one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_pipeline)

    for name, sp in sub.choices.items():
        sp.add_argument("--validate", action="store_true",
                        help="re-read and schema-check written artifacts")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (CloneGuardError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
