"""Experiment runner: configuration, orchestration, persistence, reports.

The only module with file-system side effects. Every run writes a
deterministic results.json (bit-identical for identical config + seed;
timestamps live in manifest.json), CSV tables with full float64 round-trip
precision, and binary field dumps in the MXGS0001 format. All outputs
cross-reference the sha256 hash of the canonical config.

Exit codes: 0 success, 2 configuration error, 3 compute failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import struct
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from mxgs import __version__
from mxgs.energies import endpoint_lambda, eval_F
from mxgs.groundstate import (
    ContinuationConfig,
    GroundStateResult,
    SolverConfig,
    SweepError,
    continuation_step,
    solve_ground_state,
    sweep_s,
)
from mxgs.kernels import (
    free_space_tail,
    heat_bound_check,
    heat_kernel_samples,
    kato_norm,
    resolvent_laplace_check,
    tail_exponent,
)
from mxgs.linearized import eigen_lowest, morse_and_kernel_report, radial_gap
from mxgs.spectral import GridSpec, RealField, SymbolParams, build_grid, critical_exponent

MAGIC = b"MXGS"
VERSION_TAG = b"0001"
EXPERIMENTS = ("solve", "sweep", "spectrum", "kernel", "kato", "decay", "continuation")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3


class ConfigError(ValueError):
    """Invalid run configuration."""


class FormatError(ValueError):
    """Malformed or unsupported state file."""


@dataclass
class RunConfig:
    experiment: str
    n: int = 1
    p: float = 2.0
    s: float | None = None
    s_values: list = field(default_factory=list)
    grid_points: int = 4096
    half_length: float = 40.0
    seed: int = 0
    threads: int = 1
    tolerances: dict = field(default_factory=dict)
    state_path: str | None = None
    eigen_count: int = 6
    sector: str = "full"
    betas: list = field(default_factory=lambda: [1.0, 10.0, 100.0])
    radii: list = field(default_factory=list)
    times: list = field(default_factory=list)
    shift_lambda: float = 1.0
    window: list = field(default_factory=lambda: [8.0, 20.0])
    target_s: float | None = None
    scratch_every: int = 1

    def canonical(self):
        data = {k: v for k, v in self.__dict__.items()}
        return json.dumps(data, sort_keys=True)

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in raw:
        raise ConfigError("config requires an 'experiment' key")
    cfg = RunConfig(**raw)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; expected one of {EXPERIMENTS}")
    if cfg.n not in (1, 2, 3):
        raise ConfigError(f"dimension n={cfg.n} outside 1..3")
    pmax = critical_exponent(cfg.n) - 2.0
    if not 0.0 < cfg.p < pmax:
        raise ConfigError(f"supercritical exponent: p={cfg.p} not in (0, {pmax}) for n={cfg.n}")
    for s in list(cfg.s_values) + ([cfg.s] if cfg.s is not None else []):
        if not 0.0 <= float(s) <= 1.0:
            raise ConfigError(f"s={s} outside [0, 1]")
    if cfg.grid_points % 2 != 0 or cfg.grid_points < 8:
        raise ConfigError(f"grid_points={cfg.grid_points} must be even and >= 8")
    if cfg.half_length <= 0:
        raise ConfigError(f"half_length={cfg.half_length} must be positive")
    if cfg.experiment in ("solve", "kato", "decay") and cfg.s is None:
        raise ConfigError(f"experiment {cfg.experiment!r} requires 's'")
    if cfg.experiment == "sweep" and len(cfg.s_values) == 0:
        raise ConfigError("sweep requires a non-empty 's_values' list")
    if cfg.experiment == "continuation" and (cfg.s is None or cfg.target_s is None):
        raise ConfigError("continuation requires 's' (anchor) and 'target_s'")
    if cfg.experiment == "kernel" and cfg.s is None:
        raise ConfigError("kernel requires 's'")
    if cfg.experiment == "spectrum" and cfg.s is None and cfg.state_path is None:
        raise ConfigError("spectrum requires 's' or 'state_path'")
    if cfg.threads < 1:
        raise ConfigError(f"threads={cfg.threads} must be >= 1")


# ---------------------------------------------------------------------------
# state persistence (binary dump + JSON metadata)
# ---------------------------------------------------------------------------


def save_state(result, basepath):
    """Write <base>.field (binary) and <base>.json (metadata); returns paths."""
    grid = result.field.grid
    field_path = basepath + ".field"
    meta_path = basepath + ".json"
    header = MAGIC + VERSION_TAG + struct.pack(
        "<IIddd", grid.n, grid.N, grid.L, result.s, result.p
    )
    with open(field_path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(result.field.values, dtype="<f8").tobytes())
    meta = result.metadata()
    meta["field_file"] = os.path.basename(field_path)
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return meta_path, field_path


def load_state(path):
    """Exact (bit-identical) round-trip of a saved ground state.

    `path` is the metadata JSON; the binary sibling is validated against
    magic, version tag, and the metadata dimensions.
    """
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read state metadata {path}: {exc}") from exc
    field_path = os.path.join(os.path.dirname(path) or ".", meta["field_file"])
    with open(field_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 + 4 + 4 + 24:
        raise FormatError("state file truncated before header end")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}; not a field dump")
    if blob[4:8] != VERSION_TAG:
        raise FormatError(f"unsupported field dump version {blob[4:8]!r}")
    n, N = struct.unpack("<II", blob[8:16])
    L, s, p = struct.unpack("<ddd", blob[16:40])
    expected = N ** n
    data = np.frombuffer(blob[40:], dtype="<f8")
    if data.size != expected:
        raise FormatError(f"field dump holds {data.size} values, expected {expected}")
    if len(meta["center"]) != n:
        raise FormatError("metadata center dimension mismatch")
    if abs(meta["s"] - s) > 1e-12 or abs(meta["p"] - p) > 1e-12:
        raise FormatError("metadata (s, p) disagree with the binary header")
    grid = build_grid(n, N, L)
    fld = RealField(grid, data.reshape(grid.shape).copy())
    from mxgs.energies import EnergyBreakdown

    return GroundStateResult(
        field=fld,
        s=s,
        p=p,
        lambda_s=meta["lambda_s"],
        breakdown=EnergyBreakdown(**meta["breakdown"]),
        residual_linf=meta["residual_linf"],
        iterations=meta["iterations"],
        converged=meta["converged"],
        center=tuple(meta["center"]),
        method=meta.get("method", "unknown"),
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows, config_hash):
    with open(path, "w") as fh:
        fh.write(f"# config={config_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def emit_report(records, out_dir, config_hash):
    """CSV tables for a sweep/continuation trace (lambda curve + contraction)."""
    lam_rows = [(r.s, r.lambda_s) for r in records]
    write_csv(os.path.join(out_dir, "lambda_curve.csv"), ["s", "lambda_s"], lam_rows, config_hash)
    cont_rows = [
        (r.s, r.norm_w, r.contraction_estimate,
         "" if r.scratch_h1_diff is None else r.scratch_h1_diff,
         "" if r.endpoint_h1_diff is None else r.endpoint_h1_diff)
        for r in records
    ]
    write_csv(
        os.path.join(out_dir, "contraction.csv"),
        ["s", "norm_w", "contraction_estimate", "scratch_h1_diff", "endpoint_h1_diff"],
        cont_rows, config_hash,
    )


def emit_spectrum(report, summary, out_dir, config_hash):
    rows = []
    for i, ev in enumerate(report.eigenvalues):
        rows.append(
            (i, ev, report.residuals[i],
             report.sector_labels[i] if report.sector_labels else "",
             report.translation_overlaps.get(i, ""))
        )
    write_csv(
        os.path.join(out_dir, "eigenvalues.csv"),
        ["index", "eigenvalue", "residual", "sector_label", "translation_overlap"],
        rows, config_hash,
    )
    payload = report.to_dict()
    payload["summary"] = {
        k: (v if not isinstance(v, dict) else {str(kk): vv for kk, vv in v.items()})
        for k, v in summary.items()
    }
    write_json(os.path.join(out_dir, "spectrum.json"), payload)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _solver_config(cfg):
    kw = {k: v for k, v in cfg.tolerances.items() if k in SolverConfig.__dataclass_fields__}
    return SolverConfig(**kw)


def _grid(cfg):
    return build_grid(cfg.n, cfg.grid_points, cfg.half_length)


def _run_solve(cfg, out_dir):
    params = SymbolParams(n=cfg.n, s=float(cfg.s), p=cfg.p)
    result = solve_ground_state(params, _grid(cfg), config=_solver_config(cfg))
    save_state(result, os.path.join(out_dir, "u"))
    summary = result.metadata()
    if not result.converged:
        return summary, "ground-state solve did not converge"
    return summary, None


def _run_sweep(cfg, out_dir):
    params = SymbolParams(n=cfg.n, s=float(cfg.s_values[0]), p=cfg.p)
    cont = ContinuationConfig(solver=_solver_config(cfg))
    try:
        trace = sweep_s(cfg.s_values, params, _grid(cfg), cont, scratch_every=cfg.scratch_every)
    except SweepError as exc:
        emit_report(exc.partial_trace.records, out_dir, cfg.hash())
        raise
    emit_report(trace.records, out_dir, cfg.hash())
    for rec in trace.records:
        save_state(rec.result, os.path.join(out_dir, f"u_s{rec.s:.6f}"))
    summary = {
        "direction": trace.direction,
        "records": [
            {
                "s": r.s, "lambda_s": r.lambda_s, "norm_w": r.norm_w,
                "contraction_estimate": r.contraction_estimate,
                "scratch_h1_diff": r.scratch_h1_diff,
                "endpoint_h1_diff": r.endpoint_h1_diff,
            }
            for r in trace.records
        ],
    }
    return summary, None


def _spectrum_state(cfg):
    if cfg.state_path:
        return load_state(cfg.state_path)
    params = SymbolParams(n=cfg.n, s=float(cfg.s), p=cfg.p)
    return solve_ground_state(params, _grid(cfg), config=_solver_config(cfg))


def _run_spectrum(cfg, out_dir):
    state = _spectrum_state(cfg)
    report = eigen_lowest(state, m=cfg.eigen_count, sector=cfg.sector, seed=cfg.seed)
    summary = morse_and_kernel_report(report, state)
    report.radial_gap = radial_gap(state, seed=cfg.seed + 1)
    emit_spectrum(report, summary, out_dir, cfg.hash())
    out = report.to_dict()
    out["morse_kernel_summary"] = {
        "morse_index": summary["morse_index"],
        "kernel_dimension": summary["kernel_dimension"],
        "ambiguous": summary["ambiguous"],
    }
    return out, None


def _run_kernel(cfg, out_dir):
    radii = cfg.radii or list(np.geomspace(0.25, 4.0, 10))
    times = cfg.times or list(np.geomspace(0.05, 2.0, 10))
    sample = heat_kernel_samples(cfg.n, float(cfg.s), radii, times)
    check = heat_bound_check(cfg.n, float(cfg.s), radii, times)
    rows = []
    k = 0
    for i, t in enumerate(times):
        for j, r in enumerate(radii):
            rows.append((sample.points[k], sample.times_or_shift[k], sample.values[k],
                         check["ratios"][i, j]))
            k += 1
    write_csv(os.path.join(out_dir, "heat_kernel.csv"),
              ["r", "t_or_lambda", "value", "bound_ratio"], rows, cfg.hash())
    laplace = resolvent_laplace_check(cfg.n, float(cfg.s), cfg.shift_lambda,
                                      [0.5, 1.0, 2.0])
    summary = {
        "kind": sample.kind,
        "method": sample.method,
        "error_estimate": sample.error_estimate,
        "c1": check["c1"],
        "c1_refined": check["c1_refined"],
        "stability": check["stability"],
        "finite": check["finite"],
        "resolvent_laplace_rel_gaps": laplace,
    }
    return summary, None


def _run_kato(cfg, out_dir):
    params = SymbolParams(n=cfg.n, s=float(cfg.s), p=cfg.p)
    state = (load_state(cfg.state_path) if cfg.state_path
             else solve_ground_state(params, _grid(cfg), config=_solver_config(cfg)))
    V = RealField(state.field.grid, (cfg.p + 1.0) * np.abs(state.field.values) ** cfg.p)
    rows = [(b, kato_norm(V, float(b), float(cfg.s))) for b in cfg.betas]
    write_csv(os.path.join(out_dir, "kato.csv"), ["beta", "kato_norm"], rows, cfg.hash())
    return {"betas": list(cfg.betas), "kato_norms": [r[1] for r in rows]}, None


def _run_decay(cfg, out_dir):
    params = SymbolParams(n=cfg.n, s=float(cfg.s), p=cfg.p)
    state = (load_state(cfg.state_path) if cfg.state_path
             else solve_ground_state(params, _grid(cfg), config=_solver_config(cfg)))
    lo, hi = cfg.window
    radii = cfg.radii or list(np.geomspace(lo, hi, 12))
    vals, trunc = free_space_tail(state, radii)
    fit = tail_exponent(np.asarray(radii), vals, cfg.n, float(cfg.s), window=(lo, hi))
    rows = list(zip(radii, vals))
    write_csv(os.path.join(out_dir, "tail.csv"), ["r", "value"], rows, cfg.hash())
    write_json(os.path.join(out_dir, "tail_fit.json"),
               {**fit.to_dict(), "truncation_error": trunc, "config": cfg.hash()})
    return fit.to_dict(), None


def _run_continuation(cfg, out_dir):
    params = SymbolParams(n=cfg.n, s=float(cfg.s), p=cfg.p)
    anchor = solve_ground_state(params, _grid(cfg), config=_solver_config(cfg))
    step = continuation_step(anchor, float(cfg.target_s),
                             ContinuationConfig(solver=_solver_config(cfg)))
    save_state(step.result, os.path.join(out_dir, "u_continued"))
    rows = [(step.s_from, step.s_to, step.norm_w, step.contraction_estimate,
             step.picard_iterations, step.substeps)]
    write_csv(os.path.join(out_dir, "continuation.csv"),
              ["s_from", "s_to", "norm_w", "contraction_estimate",
               "picard_iterations", "substeps"], rows, cfg.hash())
    return {
        "s_from": step.s_from, "s_to": step.s_to, "norm_w": step.norm_w,
        "contraction_estimate": step.contraction_estimate,
        "picard_iterations": step.picard_iterations,
        "substeps": step.substeps,
        "lambda_s": step.result.lambda_s,
        "residual_linf": step.result.residual_linf,
    }, None


_RUNNERS = {
    "solve": _run_solve,
    "sweep": _run_sweep,
    "spectrum": _run_spectrum,
    "kernel": _run_kernel,
    "kato": _run_kato,
    "decay": _run_decay,
    "continuation": _run_continuation,
}


def run(cfg, out_dir):
    """Execute one experiment; returns the process exit code."""
    os.makedirs(out_dir, exist_ok=True)
    chash = cfg.hash()
    manifest = {
        "config_hash": chash,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "package_version": __version__,
        "seed": cfg.seed,
        "threads": cfg.threads,
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    write_json(os.path.join(out_dir, "config.json"), json.loads(cfg.canonical()))
    try:
        summary, failure = _RUNNERS[cfg.experiment](cfg, out_dir)
    except (SweepError, RuntimeError, ValueError, NotImplementedError) as exc:
        write_json(os.path.join(out_dir, "error.json"),
                   {"error": {"kind": "compute", "message": str(exc)}, "config": chash})
        print(f"compute failure: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    results = {
        "experiment": cfg.experiment,
        "config": chash,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "summary": summary,
    }
    write_json(os.path.join(out_dir, "results.json"), results)
    if failure:
        write_json(os.path.join(out_dir, "error.json"),
                   {"error": {"kind": "compute", "message": failure}, "config": chash})
        print(f"compute failure: {failure}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mxgs",
        description="Ground states and spectra of the mixed local/nonlocal "
                    "Schrodinger operator on periodic grids.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            raise ConfigError(
                f"config experiment {cfg.experiment!r} does not match "
                f"subcommand {args.experiment!r}"
            )
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        elif "MXGS_THREADS" in os.environ:
            cfg.threads = int(os.environ["MXGS_THREADS"])
        validate_config(cfg)
    except ConfigError as exc:
        record = {"error": {"kind": "config", "message": str(exc)}}
        try:
            os.makedirs(args.out, exist_ok=True)
            write_json(os.path.join(args.out, "error.json"), record)
        except OSError:
            pass
        print(json.dumps(record), file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
