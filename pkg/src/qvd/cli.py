"""Command-line entry point.

Grammar: ``qvd <gen|calibrate|analyze|scri|footprint|report> [flags]`` with
the shared flags ``--seed``, ``--out``, ``--json``. Every run emits a
RunReport; artifacts are written atomically and are byte-identical across
re-runs with the same seed and config.

Exit codes are a stable scripting contract: 0 success, 2 usage/config errors
(including missing input paths), 3 numerical degeneracy, 4 file format or
I/O failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import harness, quantizers, scri, temporal
from .errors import (
    ArgumentError,
    DegenerateInputError,
    DegenerateRangeError,
    QvdError,
    ReportSchemaError,
    SearchError,
    TensorFormatError,
)
from .footprint import estimate_footprint, footprint_spec_from_json
from .tensor import Tensor, atomic_write_bytes, channel_stats, coverage_ratio, read_tensor, write_tensor

REPORT_SCHEMA = "qvd-report/1"
MERGED_SCHEMA = "qvd-report-merged/1"
DEFAULT_SEED = 42

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_IO = 4


@dataclass
class RunReport:
    """One record per command invocation; the config echo plus the seed is
    enough to reproduce the run's artifacts byte for byte."""

    command: str
    config_echo: dict
    seed: int
    metrics: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    duration_ms: int = 0
    timestamp_ms: int = 0

    def to_dict(self) -> dict:
        for name, value in self.metrics.items():
            if not math.isfinite(float(value)):
                raise ArgumentError(f"non-finite metric {name!r}")
        doc = {"schema": REPORT_SCHEMA}
        doc.update(asdict(self))
        return doc


def _write_json_artifact(path: Path, doc: dict) -> str:
    atomic_write_bytes(path, (json.dumps(doc, sort_keys=True) + "\n").encode())
    return str(path)


def _ensure_out(args) -> Path:
    if not args.out:
        raise ArgumentError("this command writes artifacts: pass --out <dir>")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_input(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ArgumentError(f"input path does not exist: {path}")
    return p


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"malformed JSON in {path}: {exc}") from exc


def _spec_seed(doc: dict, args) -> int:
    return int(doc.get("seed", args.seed))


def _dataclass_from(doc: dict, cls, *, drop=("kind",)):
    kwargs = {k: v for k, v in doc.items() if k not in drop}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ArgumentError(f"bad spec for {cls.__name__}: {exc}") from exc


def cmd_gen(args) -> RunReport:
    spec_doc = _load_json(_require_input(args.spec))
    if not isinstance(spec_doc, dict) or "kind" not in spec_doc:
        raise ArgumentError("generator spec must be a JSON object with a 'kind' field")
    out = _ensure_out(args)
    seed = _spec_seed(spec_doc, args)
    doc = dict(spec_doc)
    doc["seed"] = seed
    kind = doc["kind"]
    report = RunReport(command="gen", config_echo=doc, seed=seed)

    if kind == "skewed_trajectory":
        spec = _dataclass_from(doc, harness.SkewedTemporalSpec)
        traj = harness.gen_skewed_trajectory(spec)
        report.artifacts += temporal.save_trajectory(traj, out / "trajectory")
        stack = traj.stacked()
        report.metrics = {
            "steps": float(traj.length),
            "dim": float(spec.dim),
            "value_min": float(stack.min()),
            "value_max": float(stack.max()),
            "abs_min": float(np.abs(stack).min()),
            "abs_max": float(np.abs(stack).max()),
        }
    elif kind == "interchannel":
        spec = _dataclass_from(doc, harness.InterChannelSpec)
        x = harness.gen_interchannel(spec)
        path = out / "interchannel.qvdt"
        write_tensor(x, path)
        report.artifacts.append(str(path))
        cov = coverage_ratio(x, 1)
        report.metrics = {
            "channels": float(spec.channels),
            "coverage_mean": float(cov.mean()),
            "coverage_min": float(cov.min()),
            "coverage_max": float(cov.max()),
        }
    elif kind == "frames":
        spec = _dataclass_from(doc, harness.FramesSpec)
        x = harness.gen_frames(spec)
        path = out / "frames.qvdt"
        write_tensor(x, path)
        report.artifacts.append(str(path))
        report.metrics = {"frames": float(spec.frames), "channels": float(spec.channels)}
    elif kind == "affine_block":
        spec = _dataclass_from(doc, harness.AffineBlockSpec)
        block = harness.gen_affine_block(spec)
        report.artifacts += scri.save_block(block, out / "block.json")
        report.metrics = {
            "channels": float(block.channels),
            "out_channels": float(block.out_channels),
        }
    else:
        raise ArgumentError(f"unknown generator kind {kind!r}")
    return report


def _load_tensor_or_trajectory(path: Path):
    if path.is_dir():
        return temporal.load_trajectory(path)
    return read_tensor(path)


def _pooled_tensor(data) -> Tensor:
    if isinstance(data, temporal.TemporalTrajectory):
        return Tensor(data.stacked().ravel())
    return data


def cmd_calibrate(args) -> RunReport:
    source = _require_input(args.input)
    out = _ensure_out(args)
    data = _load_tensor_or_trajectory(source)
    config = {
        "input": str(source),
        "method": args.method,
        "bits": args.bits,
        "granularity": args.granularity,
    }
    report = RunReport(command="calibrate", config_echo=config, seed=args.seed)

    if args.method == "minmax":
        x = _pooled_tensor(data)
        params = quantizers.calibrate_minmax(x, args.bits, granularity=args.granularity)
        doc = quantizers.params_to_json(params)
        report.artifacts.append(_write_json_artifact(out / "params.json", doc))
        if isinstance(params, quantizers.UniformParams):
            report.metrics = {"s": params.s, "z": float(params.z)}
        else:
            report.metrics = {"channels": float(len(params.channels))}
    elif args.method == "mse":
        x = _pooled_tensor(data)
        params, fractions, objectives = quantizers.mse_sweep_uniform(x, args.bits)
        chosen = quantizers.first_argmin(objectives)
        report.artifacts.append(
            _write_json_artifact(out / "params.json", quantizers.params_to_json(params)))
        report.artifacts.append(_write_json_artifact(out / "trace.json", {
            "schema": "qvd-mse-trace/1",
            "clip_fraction": fractions,
            "objective": objectives,
            "chosen_index": chosen,
        }))
        report.metrics = {"s": params.s, "z": float(params.z),
                          "objective": objectives[chosen]}
    elif args.method == "htdq":
        if not isinstance(data, temporal.TemporalTrajectory):
            raise ArgumentError("htdq calibration needs a trajectory directory input")
        cfg = temporal.HtdqSearchConfig(
            n=args.window,
            bits=args.bits,
            s_step_exponent=args.s_step_exponent,
            beta_grid_size=args.beta_grid,
            eps=args.eps,
        )
        config.update({
            "window": cfg.n,
            "beta_grid_size": cfg.beta_grid_size,
            "s_step_exponent": cfg.s_step_exponent,
            "eps": cfg.eps,
        })
        result = temporal.search_hidi_params(data, cfg)
        report.artifacts.append(_write_json_artifact(
            out / "params.json", quantizers.params_to_json(result.params)))
        report.artifacts.append(_write_json_artifact(out / "trace.json", result.trace_dict()))
        report.metrics = {
            "s": result.params.s,
            "beta": result.params.beta,
            "objective": result.objective,
            "candidates": float(len(result.objectives)),
        }
    else:  # pragma: no cover - argparse restricts choices
        raise ArgumentError(f"unknown method {args.method!r}")
    return report


def _distinct_codes(values: Tensor, params) -> np.ndarray:
    if isinstance(params, quantizers.UniformParams):
        return quantizers.uniform_quant(values, params).codes
    if isinstance(params, quantizers.Log2Params):
        return quantizers.log2_quant(values, params).codes
    if isinstance(params, quantizers.HiDiParams):
        return quantizers.hidi_quant(values, params).codes
    raise ArgumentError("levels analysis needs per-tensor params")


def cmd_analyze(args) -> RunReport:
    source = _require_input(args.input)
    data = _load_tensor_or_trajectory(source)
    analyses = [a.strip() for a in args.analyses.split(",") if a.strip()]
    if not analyses:
        raise ArgumentError("no analyses requested")
    config = {"input": str(source), "analyses": analyses}
    report = RunReport(command="analyze", config_echo=config, seed=args.seed)
    extra_artifacts: dict[str, dict] = {}

    for analysis in analyses:
        if analysis == "coverage":
            if isinstance(data, temporal.TemporalTrajectory):
                raise ArgumentError("coverage analysis needs a tensor input")
            axis = args.axis if args.axis is not None else data.channel_axis
            if axis is None:
                raise ArgumentError("coverage analysis needs a channel axis "
                                    "(file metadata or --axis)")
            config["axis"] = int(axis)
            cov = coverage_ratio(data, int(axis))
            report.metrics.update({
                "coverage_mean": float(cov.mean()),
                "coverage_min": float(cov.min()),
                "coverage_max": float(cov.max()),
            })
            extra_artifacts["coverage.json"] = {"coverage": [float(v) for v in cov]}
        elif analysis == "tdscore":
            if not isinstance(data, temporal.TemporalTrajectory):
                raise ArgumentError("tdscore analysis needs a trajectory directory")
            config["window"] = args.window
            config["eps"] = args.eps
            scores = [temporal.tdscore(data, t, args.window, args.eps)
                      for t in range(1, data.length)]
            report.metrics.update({
                "tdscore_mean": float(np.mean(scores)),
                "tdscore_min": float(np.min(scores)),
                "tdscore_max": float(np.max(scores)),
            })
            extra_artifacts["tdscore.json"] = {"tdscore": scores}
        elif analysis == "levels":
            if not args.params:
                raise ArgumentError("levels analysis needs --params <params.json>")
            params = quantizers.params_from_json(_load_json(_require_input(args.params)))
            config["params"] = str(args.params)
            pooled = _pooled_tensor(data)
            codes = _distinct_codes(pooled, params)
            values = pooled.data.ravel()
            p5, p95 = np.percentile(values, [5.0, 95.0])
            middle = (values >= p5) & (values <= p95)
            report.metrics.update({
                "levels_total_distinct": float(np.unique(codes.ravel()).size),
                "levels_middle90_distinct": float(np.unique(codes.ravel()[middle]).size),
                "middle90_low": float(p5),
                "middle90_high": float(p95),
            })
        else:
            raise ArgumentError(f"unknown analysis {analysis!r}")

    if args.out:
        out = _ensure_out(args)
        for name, doc in extra_artifacts.items():
            report.artifacts.append(_write_json_artifact(out / name, doc))
    return report


def cmd_scri(args) -> RunReport:
    block_path = _require_input(args.block)
    calib_path = _require_input(args.calib)
    out = _ensure_out(args)
    block = scri.load_block(block_path)
    calib = read_tensor(calib_path)
    config = {
        "block": str(block_path),
        "calib": str(calib_path),
        "bits": args.bits,
        "grid": args.grid,
    }
    report = RunReport(command="scri", config_echo=config, seed=args.seed)
    result = scri.search_t(block, calib, args.bits, args.grid)
    folded = scri.fold_scri(block, result.scale)

    report.artifacts.append(_write_json_artifact(
        out / "scale.json", scri.scale_to_json(result.scale)))
    report.artifacts.append(_write_json_artifact(out / "trace.json", result.trace_dict()))
    report.artifacts += scri.save_block(folded, out / "folded_block.json")

    acts = scri.block_activations(block, calib)
    cov_before = coverage_ratio(acts, 1)
    cov_after = coverage_ratio(scri.apply_scri(acts, result.scale), 1)
    report.metrics = {
        "t": result.scale.t,
        "objective": result.objective,
        "coverage_mean_before": float(cov_before.mean()),
        "coverage_mean_after": float(cov_after.mean()),
    }
    return report


def cmd_footprint(args) -> RunReport:
    spec_doc = _load_json(_require_input(args.spec))
    spec = footprint_spec_from_json(spec_doc)
    estimate = estimate_footprint(spec)
    report = RunReport(command="footprint", config_echo=dict(spec_doc), seed=args.seed)
    report.metrics = estimate.metrics()
    if args.out:
        out = _ensure_out(args)
        report.artifacts.append(_write_json_artifact(out / "footprint.json", {
            "size_bits": estimate.size_bits,
            "size_bytes": [estimate.size_bytes.numerator, estimate.size_bytes.denominator],
            "bops": estimate.bops,
            "size_ratio_vs_fp32": [estimate.size_ratio.numerator,
                                   estimate.size_ratio.denominator],
            "bops_ratio_vs_fp32": [estimate.bops_ratio.numerator,
                                   estimate.bops_ratio.denominator],
        }))
    return report


def cmd_report(args) -> RunReport:
    rows = []
    for raw in args.runs:
        path = Path(raw)
        if path.is_dir():
            path = path / "report.json"
        if not path.is_file():
            raise ArgumentError(f"missing report file: {path}")
        doc = _load_json(path)
        if doc.get("schema") != REPORT_SCHEMA:
            raise ReportSchemaError(
                f"{path}: schema {doc.get('schema')!r}, expected {REPORT_SCHEMA!r}")
        rows.append((doc.get("command", ""), int(doc.get("timestamp_ms", 0)), str(path), doc))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    merged = {"schema": MERGED_SCHEMA, "rows": [r[3] for r in rows]}

    report = RunReport(command="report", config_echo={"runs": list(args.runs)},
                       seed=args.seed)
    report.metrics = {"rows": float(len(rows))}
    if args.out:
        out = _ensure_out(args)
        report.artifacts.append(_write_json_artifact(out / "merged.json", merged))
    if not args.json:
        print(_markdown_table(merged["rows"]))
    else:
        print(json.dumps(merged, sort_keys=True))
    return report


def _markdown_table(rows: list[dict]) -> str:
    lines = ["| command | timestamp_ms | metrics |", "| --- | --- | --- |"]
    for doc in rows:
        metrics = ", ".join(f"{k}={v:.6g}" for k, v in sorted(doc.get("metrics", {}).items()))
        lines.append(f"| {doc.get('command', '')} | {doc.get('timestamp_ms', 0)} | {metrics} |")
    return "\n".join(lines)


def _emit(report: RunReport, args) -> None:
    doc = report.to_dict()
    if args.out:
        _write_json_artifact(Path(args.out) / "report.json", doc)
    if report.command == "report":
        return  # cmd_report prints its own merged output
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(f"command: {report.command}")
        for name in sorted(report.metrics):
            print(f"  {name} = {report.metrics[name]:.10g}")
        for artifact in report.artifacts:
            print(f"  artifact: {artifact}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help="seed for all randomness (default 42)")
    parser.add_argument("--out", help="output directory for artifacts and report.json")
    parser.add_argument("--json", action="store_true",
                        help="print the machine-readable report to stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qvd",
        description="Quantization calibration toolkit: generators, calibrations, "
                    "searches, analyses, and footprint estimates.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="run a synthetic-data generator from a spec JSON")
    p.add_argument("--spec", required=True, help="generator spec JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("calibrate", help="calibrate quantizer params for a tensor/trajectory")
    p.add_argument("input", help="QVDT tensor file or trajectory directory")
    p.add_argument("--method", required=True, choices=["minmax", "mse", "htdq"])
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--granularity", choices=["tensor", "channel"], default="tensor")
    p.add_argument("--window", type=int, default=temporal.DEFAULT_WINDOW,
                   help="similarity window for htdq")
    p.add_argument("--beta-grid", type=int, default=temporal.DEFAULT_BETA_GRID)
    p.add_argument("--s-step-exponent", type=float, default=temporal.DEFAULT_S_STEP_EXPONENT)
    p.add_argument("--eps", type=float, default=temporal.DEFAULT_EPS)
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", help="coverage / tdscore / levels analyses")
    p.add_argument("input", help="QVDT tensor file or trajectory directory")
    p.add_argument("--analyses", required=True,
                   help="comma-separated: coverage,tdscore,levels")
    p.add_argument("--params", help="params JSON for the levels analysis")
    p.add_argument("--axis", type=int, help="channel axis override for coverage")
    p.add_argument("--window", type=int, default=temporal.DEFAULT_WINDOW)
    p.add_argument("--eps", type=float, default=temporal.DEFAULT_EPS)
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("scri", help="search the range-integration divisor and fold it")
    p.add_argument("--block", required=True, help="AffineBlock JSON file")
    p.add_argument("--calib", required=True, help="calibration tensor (QVDT)")
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--grid", type=int, default=scri.DEFAULT_GRID_SIZE)
    _add_common(p)
    p.set_defaults(func=cmd_scri)

    p = sub.add_parser("footprint", help="model size and bit-operations estimate")
    p.add_argument("--spec", required=True, help="layer footprint spec JSON")
    _add_common(p)
    p.set_defaults(func=cmd_footprint)

    p = sub.add_parser("report", help="merge run reports into one table")
    p.add_argument("runs", nargs="+", help="run directories or report.json files")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        report = args.func(args)
    except (ArgumentError, ReportSchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateRangeError, DegenerateInputError, SearchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (TensorFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    report.seed = int(args.seed)
    report.timestamp_ms = int(started * 1000)
    report.duration_ms = int((time.time() - started) * 1000)
    _emit(report, args)
    return EXIT_OK


def app() -> None:  # console-script entry point
    raise SystemExit(main())


if __name__ == "__main__":
    app()
