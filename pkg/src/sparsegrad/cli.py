"""Command-line entry point.

Subcommands: gen-data, run, sweep, toy, oracle. Configuration comes from an
optional file (flat ``key = value`` lines, or the config.json emitted by a
previous run) plus repeatable ``--set key=value`` overrides; precedence is
defaults < file < command line. Every artifact directory embeds the fully
resolved configuration, so re-running from an emitted config.json
reproduces the artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness, oracle, problems
from .core import RegTopKParams

EXIT_USAGE = 2
EXIT_NUMERIC = 3

CONFIG_FORMAT_VERSION = 1
TRACE_CSV_COLUMNS = "t,delta,loss,bytes"


class UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_weights(text: str):
    if text == "uniform":
        return "uniform"
    return _parse_float_list(text)


def _parse_z_map(text: str) -> dict[int, float]:
    out: dict[int, float] = {}
    if not text:
        return out
    for item in text.split(","):
        idx, _, val = item.partition(":")
        out[int(idx)] = float(val)
    return out


# key -> (parser, default). None defaults mean "derived elsewhere".
CONFIG_KEYS = {
    "problem": (str, "linear_regression"),
    "sparsifier": (str, "topk"),
    "k": (int, 1),
    "eta": (float, 1e-2),
    "iterations": (int, 100),
    "seed": (int, 0),
    "trace_level": (str, "gap_only"),
    "weights": (_parse_weights, "uniform"),
    "workers": (int, 2),
    "dim": (int, 4),
    "batch_size": (int, 20),
    "model_mean": (float, 0.0),
    "mean_var": (float, 1.0),
    "model_var": (float, 1.0),
    "noise_var": (float, 0.0),
    "homogeneous": (_parse_bool, False),
    "mu": (float, 0.5),
    "c_unselected": (float, 1.0),
    "y_exponent": (float, 1.0),
    "zero_tolerance": (float, 1e-12),
    "sweep_s": (_parse_float_list, [0.25, 0.5, 0.75, 1.0]),
    "sweep_repeats": (int, 1),
    "oracle_a": (_parse_float_list, [3.0, -2.0, 1.0, 0.5]),
    "oracle_z": (_parse_z_map, {}),
    "oracle_weight": (float, 0.5),
    "oracle_samples": (int, 100000),
    "oracle_family": (str, "tanh_sech2"),
    "oracle_scale_with_gradient": (_parse_bool, False),
    "oracle_p0_mean": (float, None),
    "oracle_p0_var": (float, None),
}


def _reject_unknown(key: str) -> None:
    if key not in CONFIG_KEYS:
        valid = ", ".join(sorted(CONFIG_KEYS))
        raise UsageError(f"unknown config key {key!r}; valid keys: {valid}")


def _coerce(key: str, value) -> object:
    _reject_unknown(key)
    parser, _ = CONFIG_KEYS[key]
    try:
        if isinstance(value, str):
            return parser(value)
        if key == "oracle_z" and isinstance(value, dict):
            return {int(i): float(v) for i, v in value.items()}
        return value
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key}: {value!r} ({exc})") from exc


def load_config_file(path: str | Path) -> dict:
    text = Path(path).read_text()
    values: dict = {}
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        data = data.get("config", data)
        for key, value in data.items():
            values[key] = _coerce(key, value)
        return values
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = _coerce(key.strip(), value.strip())
    return values


def resolve_config(args) -> dict:
    values = {key: default for key, (_, default) in CONFIG_KEYS.items()}
    if args.config:
        values.update(load_config_file(args.config))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _coerce(key.strip(), value.strip())
    if args.seed is not None:
        values["seed"] = int(args.seed)
    return values


def build_experiment(values: dict) -> harness.ExperimentConfig:
    gen = None
    if values["problem"] == "linear_regression":
        gen = problems.GenConfig(
            n_workers=values["workers"],
            dim=values["dim"],
            batch_size=values["batch_size"],
            model_mean=values["model_mean"],
            mean_var=values["mean_var"],
            model_var=values["model_var"],
            noise_var=values["noise_var"],
            homogeneous=values["homogeneous"],
            seed=values["seed"],
        )
    params = RegTopKParams(
        mu=values["mu"],
        c_unselected=values["c_unselected"],
        y_exponent=values["y_exponent"],
        zero_tolerance=values["zero_tolerance"],
    )
    return harness.ExperimentConfig(
        problem=values["problem"],
        sparsifier=values["sparsifier"],
        k=values["k"],
        eta=values["eta"],
        iterations=values["iterations"],
        gen=gen,
        regtopk=params,
        weights=values["weights"],
        seed=values["seed"],
        trace_level=values["trace_level"],
    )


def _json_ready(values: dict) -> dict:
    out = {}
    for key, value in sorted(values.items()):
        if isinstance(value, dict):
            value = {str(i): v for i, v in value.items()}
        out[key] = value
    return out


def run_dir(out_root: str | Path, command: str, values: dict) -> Path:
    canonical = json.dumps(_json_ready(values), sort_keys=True)
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:10]
    path = Path(out_root) / f"{command}-{values['seed']}-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_config(path: Path, command: str, values: dict) -> None:
    payload = {
        "format_version": CONFIG_FORMAT_VERSION,
        "trace_format_version": harness.TRACE_FORMAT_VERSION,
        "package_version": __version__,
        "command": command,
        "seed": values["seed"],
        "config": _json_ready(values),
    }
    (path / "config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trace_csv(path: Path, traces) -> None:
    lines = [TRACE_CSV_COLUMNS]
    for tr in traces:
        lines.append(f"{tr.t},{_fmt(tr.delta)},{_fmt(tr.loss)},{_fmt(tr.bytes_estimate)}")
    (path / "trace.csv").write_text("\n".join(lines) + "\n")


def write_full_trace(path: Path, traces) -> None:
    with open(path / "full_trace.jsonl", "w") as fh:
        for tr in traces:
            row = {
                "t": tr.t,
                "aggregation_target": [_fmt(v) for v in tr.aggregation_target],
                "workers": [
                    {
                        "indices": w.payload.indices.tolist(),
                        "values": [_fmt(v) for v in w.payload.values],
                        "mask": [bool(b) for b in w.mask],
                    }
                    for w in tr.per_worker
                ],
            }
            fh.write(json.dumps(row) + "\n")


def cmd_gen_data(values: dict, out_root: str) -> int:
    if values["problem"] != "linear_regression":
        raise UsageError("gen-data only applies to linear_regression")
    cfg = build_experiment(values)
    datasets = problems.generate_datasets(cfg.gen)
    target = run_dir(out_root, "gen-data", values)
    write_config(target, "gen-data", values)
    for n, ds in enumerate(datasets):
        problems.save_dataset(target / f"worker_{n:03d}.csv", ds)
    print(target)
    return 0


def cmd_run(values: dict, out_root: str) -> int:
    cfg = build_experiment(values)
    result = harness.run_experiment(cfg)
    target = run_dir(out_root, "run", values)
    write_config(target, "run", values)
    write_trace_csv(target, result.traces)
    if cfg.trace_level == "full":
        write_full_trace(target, result.traces)
    print(target)
    return 0


def cmd_sweep(values: dict, out_root: str) -> int:
    base = build_experiment(values)
    table = harness.sparsity_sweep(base, values["sweep_s"], values["sweep_repeats"])
    target = run_dir(out_root, "sweep", values)
    write_config(target, "sweep", values)
    lines = ["s,k,mean_final_delta"]
    for s, delta in table:
        k = max(1, round(s * base.dim))
        lines.append(f"{_fmt(s)},{k},{_fmt(delta)}")
    (target / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(target)
    return 0


def cmd_toy(values: dict, out_root: str) -> int:
    values = dict(values)
    values["problem"] = "logistic_toy"
    losses = {}
    for sparsifier in ("none", "topk", "regtopk"):
        cfg = build_experiment({**values, "sparsifier": sparsifier})
        losses[sparsifier] = [tr.loss for tr in harness.run_experiment(cfg).traces]
    target = run_dir(out_root, "toy", values)
    write_config(target, "toy", values)
    lines = ["t,loss_none,loss_topk,loss_regtopk"]
    for t in range(values["iterations"]):
        lines.append(
            f"{t + 1},{_fmt(losses['none'][t])},{_fmt(losses['topk'][t])},{_fmt(losses['regtopk'][t])}"
        )
    (target / "toy_loss.csv").write_text("\n".join(lines) + "\n")
    print(target)
    return 0


def cmd_oracle(values: dict, out_root: str) -> int:
    p0 = None
    if values["oracle_p0_var"] is not None:
        p0 = (values["oracle_p0_mean"] or 0.0, values["oracle_p0_var"])
    model = oracle.InnovationModel(
        family=values["oracle_family"],
        mu=values["mu"],
        scale_with_gradient=values["oracle_scale_with_gradient"],
        p0=p0,
    )
    params = RegTopKParams(
        mu=values["mu"],
        c_unselected=values["c_unselected"],
        y_exponent=values["y_exponent"],
        zero_tolerance=values["zero_tolerance"],
    )
    report = oracle.ranking_agreement(
        np.array(values["oracle_a"]),
        values["oracle_z"],
        model,
        params,
        weight=values["oracle_weight"],
        k=values["k"],
        samples=values["oracle_samples"],
        seed=values["seed"],
    )
    target = run_dir(out_root, "oracle", values)
    write_config(target, "oracle", values)
    payload = {
        "p_hat": report.posterior.p_hat.tolist(),
        "stderr": report.posterior.stderr.tolist(),
        "counts": report.posterior.counts.tolist(),
        "samples": report.posterior.samples,
        "oracle_top_k": np.flatnonzero(report.oracle_mask).tolist(),
        "surrogate_top_k": np.flatnonzero(report.surrogate_mask).tolist(),
        "overlap": report.overlap,
        "rank_correlation": report.rank_correlation,
    }
    (target / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(target)
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "toy": cmd_toy,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsegrad",
        description="Sparsified distributed SGD simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file (flat key=value or config.json)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--out", default="runs", help="output root directory")
        p.add_argument("--seed", type=int, help="override the seed")
    return parser


def _fail(message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = resolve_config(args)
        return COMMANDS[args.command](values, args.out)
    except UsageError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    except (harness.DivergenceError, np.linalg.LinAlgError) as exc:
        return _fail(str(exc), EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
