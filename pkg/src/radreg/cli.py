"""Command-line interface.

Subcommands:

    register   register one template onto one reference image
    generate   write synthetic case directories
    batch      register every case in a directory under one or more measures
    report     render figures from a batch's CSV outputs

Configuration comes from an optional JSON file (--config); command-line
flags override file values, and the RADREG_SEED environment variable
overrides any configured master seed.  Unknown config keys are rejected.

Exit codes: 0 on success, 1 when at least one batch run failed with an
error, 2 on usage or configuration problems.  Logs go to stderr; machine
readable output goes only to files.

Timing columns (trace seconds, summary seconds) are written as 0.0 unless
timing is enabled, so default artifacts are byte-reproducible run to run.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from .elastic import ElasticParams
from .image import read_image, write_csv_raster, write_image, shepp_logan
from .mesh import jacobian_ratios, write_field_csv, write_field_vtk
from .metrics import batch_stats, evaluate_run, rmse
from .optimize import OptimizerConfig, RegistrationConfig, register, resolve_mesh
from .similarity import MeasureKind, PAPER_BEST_ALPHA
from .synth import DeformationSpec, generate_cases, load_case, save_case
from . import report as report_mod

log = logging.getLogger("radreg")

_OPTIMIZER_KEYS = {"max_iters", "grad_tol", "step_tol", "obj_tol", "obj_patience",
                   "memory", "wolfe_c1", "wolfe_c2", "max_search_evals"}
_ELASTIC_KEYS = {"lam", "mu"}
_SPEC_KEYS = {"scale_min", "scale_max", "rotation_max_deg", "translate_max_px",
              "local_nodes", "local_amplitude_px"}
_REGISTER_KEYS = {"measure", "alpha", "mesh", "n_omega", "n_s",
                  "elastic", "optimizer", "timing"}
_GENERATE_KEYS = {"size", "count", "seed", "noise_stddev", "spec"}
_BATCH_KEYS = _REGISTER_KEYS | {"measures", "jobs"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise click.UsageError(f"unknown config key(s) {unknown} in {where}; "
                               f"allowed: {sorted(allowed)}")


def _load_config(path: str | None, allowed: set) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config {path} must hold a JSON object")
    _check_keys(cfg, allowed, path)
    if "optimizer" in cfg:
        _check_keys(cfg["optimizer"], _OPTIMIZER_KEYS, "optimizer section")
    if "elastic" in cfg:
        _check_keys(cfg["elastic"], _ELASTIC_KEYS, "elastic section")
    if "spec" in cfg:
        _check_keys(cfg["spec"], _SPEC_KEYS, "spec section")
    return cfg


def _parse_alpha(value) -> float | None:
    """'paper-best' (or None) selects the per-measure preset."""
    if value is None or value == "paper-best":
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise click.UsageError(f"alpha must be a number or 'paper-best', got {value!r}")


def _registration_config(cfg: dict) -> RegistrationConfig:
    try:
        measure = MeasureKind(cfg.get("measure", "rssd"))
    except ValueError:
        raise click.UsageError(
            f"unknown measure {cfg.get('measure')!r}; "
            f"choose from {[k.value for k in MeasureKind]}")
    try:
        optimizer = OptimizerConfig(**cfg.get("optimizer", {}))
        elastic = ElasticParams(**cfg.get("elastic", {}))
    except (TypeError, ValueError) as exc:
        raise click.UsageError(str(exc))
    return RegistrationConfig(
        measure=measure,
        alpha=_parse_alpha(cfg.get("alpha")),
        mesh=cfg.get("mesh", "coarse"),
        n_omega=cfg.get("n_omega", 180),
        n_s=cfg.get("n_s"),
        elastic=elastic,
        optimizer=optimizer,
        record_timing=bool(cfg.get("timing", False)))


def _merge_flags(cfg: dict, **flags) -> dict:
    out = dict(cfg)
    for key, val in flags.items():
        if val is not None:
            out[key] = val
    return out


def _prepare_out_dir(out: str, force: bool) -> Path:
    path = Path(out)
    if path.exists():
        if not force:
            raise click.UsageError(f"output directory {path} exists; pass --force to replace it")
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _write_trace_csv(trace, path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "objective", "data_term", "regularizer",
                     "grad_inf_norm", "step_length", "cumulative_evals", "seconds"])
    for rec in trace:
        writer.writerow([rec.iteration, repr(rec.objective), repr(rec.data_term),
                         repr(rec.regularizer), repr(rec.grad_inf_norm),
                         repr(rec.step_length), rec.cumulative_evals, repr(rec.seconds)])
    path.write_text(buf.getvalue())


def _write_jacobian_csv(ratios: np.ndarray, path: Path) -> None:
    lines = ["triangle,area_ratio"]
    lines += [f"{i},{float(r)!r}" for i, r in enumerate(ratios)]
    path.write_text("\n".join(lines) + "\n")


def _run_manifest(run, extra: dict) -> dict:
    res = run.result
    manifest = {
        "measure": MeasureKind(run.config.measure).value,
        "alpha": run.alpha,
        "mesh": run.config.mesh if isinstance(run.config.mesh, str) else "custom",
        "n_omega": run.context.geometry.n_omega,
        "n_s": run.context.geometry.n_s,
        "status": res.status,
        "iterations": res.iterations,
        "n_evals": res.n_evals,
        "objective": res.objective,
        "grad_inf_norm": res.grad_inf_norm,
        "initial_raw": run.initial_raw,
    }
    manifest.update(extra)
    return manifest


# ---------------------------------------------------------------------------
# Command bodies (plain functions so tests can call them directly)
# ---------------------------------------------------------------------------

def run_register(reference_path: str, template_path: str, out: str,
                 cfg: dict, force: bool = False) -> Path:
    reg_cfg = _registration_config(cfg)
    out_dir = _prepare_out_dir(out, force)
    ref = read_image(reference_path)
    tmpl = read_image(template_path)
    t0 = time.perf_counter()
    run = register(ref, tmpl, reg_cfg)
    seconds = time.perf_counter() - t0 if reg_cfg.record_timing else 0.0
    _write_trace_csv(run.result.trace, out_dir / "trace.csv")
    write_field_csv(run.field, out_dir / "field.csv")
    write_field_vtk(run.field, ref.n, out_dir / "field.vtk")
    write_image(run.warped, out_dir / "warped.png")
    write_csv_raster(run.warped, out_dir / "warped.csv")
    ratios = jacobian_ratios(run.field)
    _write_jacobian_csv(ratios, out_dir / "jacobian.csv")
    report_mod.save_jacobian_map(run.field.mesh, ratios, out_dir / "jacobian.png")
    report_mod.save_difference_image(ref, run.warped, out_dir / "difference.png",
                                     title="reference minus warped template")
    manifest = _run_manifest(run, {
        "reference": str(reference_path),
        "template": str(template_path),
        "rmse_initial": rmse(ref, tmpl),
        "rmse_final": rmse(ref, run.warped),
        "seconds": seconds,
    })
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("register: %s, %d iterations, rmse %.4f -> %.4f",
             run.result.status, run.result.iterations,
             manifest["rmse_initial"], manifest["rmse_final"])
    return out_dir


def run_generate(out: str, cfg: dict, force: bool = False) -> Path:
    size = int(cfg.get("size", 128))
    count = int(cfg.get("count", 10))
    seed = int(cfg.get("seed", 1234))
    noise_stddev = cfg.get("noise_stddev")
    base = asdict(DeformationSpec.paper_protocol(size))
    base.update(cfg.get("spec", {}))
    try:
        spec = DeformationSpec(**base)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    out_dir = _prepare_out_dir(out, force)
    reference = shepp_logan(size)
    cases = generate_cases(count, reference, seed, spec, noise_stddev)
    for case in cases:
        save_case(case, out_dir / case.case_id)
    manifest = {"count": count, "size": size, "seed": seed,
                "noise_stddev": noise_stddev, "spec": asdict(spec)}
    (out_dir / "generate_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("generate: wrote %d cases to %s", count, out_dir)
    return out_dir


def _batch_worker(payload: dict) -> dict:
    case = load_case(payload["case_dir"])
    cfg = _registration_config(payload["config"])
    ref, tmpl = case.registration_inputs()
    t0 = time.perf_counter()
    run = register(ref, tmpl, cfg)
    seconds = time.perf_counter() - t0 if cfg.record_timing else 0.0
    metrics = evaluate_run(case, run, seconds=seconds)
    run_dir = Path(payload["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_trace_csv(run.result.trace, run_dir / "trace.csv")
    write_field_csv(run.field, run_dir / "field.csv")
    manifest = _run_manifest(run, {
        "case_id": case.case_id,
        "rmse_initial": metrics.rmse_initial,
        "rmse_final": metrics.rmse_final,
        "field_norm": metrics.field_norm,
        "success": metrics.success,
        "seconds": metrics.seconds,
    })
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {
        "measure": MeasureKind(cfg.measure).value,
        "alpha": run.alpha,
        "case_id": case.case_id,
        "rmse_initial": metrics.rmse_initial,
        "rmse_final": metrics.rmse_final,
        "field_norm": metrics.field_norm,
        "iters": metrics.iterations,
        "success": metrics.success,
        "seconds": metrics.seconds,
        "data_curve": [rec.data_term for rec in run.result.trace],
    }


def run_batch(cases: str, out: str, measures: list[str], cfg: dict,
              jobs: int = 1, force: bool = False) -> int:
    """Run the batch; returns the process exit code (0 ok, 1 had failures)."""
    cases_root = Path(cases)
    case_dirs = sorted(p for p in cases_root.iterdir() if (p / "case.json").is_file())
    if not case_dirs:
        raise click.UsageError(f"no case directories under {cases_root}")
    kinds = []
    for name in measures:
        try:
            kinds.append(MeasureKind(name))
        except ValueError:
            raise click.UsageError(f"unknown measure {name!r}")
    out_dir = _prepare_out_dir(out, force)
    payloads = []
    for kind in kinds:
        for case_dir in case_dirs:
            run_cfg = dict(cfg)
            run_cfg["measure"] = kind.value
            payloads.append({
                "case_dir": str(case_dir),
                "config": run_cfg,
                "run_dir": str(out_dir / "runs" / f"{case_dir.name}__{kind.value}"),
            })
        _registration_config({**cfg, "measure": kind.value})  # validate before spawning

    rows, failures = [], []
    if jobs <= 1:
        for payload in payloads:
            try:
                rows.append(_batch_worker(payload))
            except Exception as exc:  # run isolation: one failure must not kill the batch
                log.error("run failed for %s: %s", payload["run_dir"], exc)
                failures.append({"run_dir": payload["run_dir"], "error": str(exc)})
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(p, pool.submit(_batch_worker, p)) for p in payloads]
            for payload, fut in futures:
                try:
                    rows.append(fut.result())
                except Exception as exc:
                    log.error("run failed for %s: %s", payload["run_dir"], exc)
                    failures.append({"run_dir": payload["run_dir"], "error": str(exc)})

    rows.sort(key=lambda r: (r["measure"], r["case_id"]))
    _write_summary_csv(rows, out_dir / "summary.csv")
    _write_convergence_csv(rows, [k.value for k in kinds], out_dir / "convergence.csv")
    manifest = {
        "cases": str(cases_root),
        "measures": [k.value for k in kinds],
        "config": cfg,
        "jobs": jobs,
        "n_runs": len(payloads),
        "n_failed": len(failures),
        "failures": failures,
    }
    (out_dir / "batch_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for kind in kinds:
        vals = [r["rmse_final"] for r in rows if r["measure"] == kind.value]
        if vals:
            stats = batch_stats(vals)
            wins = sum(r["success"] for r in rows if r["measure"] == kind.value)
            log.info("batch %s: %d/%d successful, median final rmse %.4f",
                     kind.value, wins, len(vals), stats["median"])
    return 1 if failures else 0


def _write_summary_csv(rows: list[dict], path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", "alpha", "case_id", "rmse_initial", "rmse_final",
                     "field_norm", "iters", "success", "seconds"])
    for r in rows:
        writer.writerow([r["measure"], repr(r["alpha"]), r["case_id"],
                         repr(r["rmse_initial"]), repr(r["rmse_final"]),
                         repr(r["field_norm"]), r["iters"],
                         "true" if r["success"] else "false", repr(r["seconds"])])
    path.write_text(buf.getvalue())


def _write_convergence_csv(rows: list[dict], measures: list[str], path: Path) -> None:
    """Mean normalized data term of successful runs, carried forward after a
    run finishes, plus how many of them are still iterating."""
    curves = {m: [r["data_curve"] for r in rows if r["measure"] == m and r["success"]]
              for m in measures}
    max_iter = max((len(c) for cs in curves.values() for c in cs), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["iteration"]
    for m in measures:
        header += [f"{m}_mean_data", f"{m}_pending"]
    writer.writerow(header)
    for k in range(1, max_iter + 1):
        row = [k]
        for m in measures:
            cs = curves[m]
            if cs:
                vals = [c[min(k, len(c)) - 1] for c in cs if len(c)]
                row.append(repr(float(np.mean(vals))) if vals else "")
                row.append(sum(len(c) >= k for c in cs))
            else:
                row += ["", 0]
        writer.writerow(row)
    path.write_text(buf.getvalue())


def run_report(batch: str, out: str | None = None) -> Path:
    batch_dir = Path(batch)
    summary = batch_dir / "summary.csv"
    if not summary.is_file():
        raise click.UsageError(f"{summary} not found; run 'radreg batch' first")
    out_dir = Path(out) if out else batch_dir / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(summary, newline="") as f:
        rows = list(csv.DictReader(f))
    measures = sorted({r["measure"] for r in rows})
    rmse_groups = {m: [float(r["rmse_final"]) for r in rows if r["measure"] == m]
                   for m in measures}
    field_groups = {m: [float(r["field_norm"]) for r in rows if r["measure"] == m]
                    for m in measures}
    iter_groups = {m: [int(r["iters"]) for r in rows
                       if r["measure"] == m and r["success"] == "true"]
                   for m in measures}
    report_mod.save_box_plot(rmse_groups, "final RMSE", out_dir / "rmse_box.png")
    report_mod.save_box_plot(field_groups, "field difference norm",
                             out_dir / "field_norm_box.png")
    report_mod.save_box_plot(iter_groups, "iterations (successful runs)",
                             out_dir / "iterations_box.png")
    conv_path = batch_dir / "convergence.csv"
    if conv_path.is_file():
        with open(conv_path, newline="") as f:
            conv_rows = list(csv.DictReader(f))
        curves, pending = {}, {}
        for m in measures:
            key = f"{m}_mean_data"
            if conv_rows and key in conv_rows[0]:
                # iteration 0 is the self-normalized starting value, exactly 1
                curves[m] = [1.0] + [float(r[key]) for r in conv_rows if r[key]]
                pending[m] = [int(r[f"{m}_pending"]) for r in conv_rows]
        report_mod.save_convergence_plot(curves, out_dir / "convergence.png")
        report_mod.save_pending_plot(pending, out_dir / "pending.png")
    log.info("report: figures written to %s", out_dir)
    return out_dir


# ---------------------------------------------------------------------------
# Click wiring
# ---------------------------------------------------------------------------

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="debug logging")
def main(verbose: bool) -> None:
    """Deformable registration with Radon-domain similarity measures."""
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(message)s")


@main.command("register")
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.argument("template", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, help="output directory")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--measure", type=click.Choice([k.value for k in MeasureKind]))
@click.option("--alpha", help="regularization weight or 'paper-best'")
@click.option("--mesh", help="coarse | fine | structured:K | mesh file path")
@click.option("--n-omega", type=int)
@click.option("--n-s", type=int)
@click.option("--max-iters", type=int)
@click.option("--timing/--no-timing", "timing", default=None,
              help="record wall-clock columns (off by default for reproducible bytes)")
@click.option("--force", is_flag=True, help="replace an existing output directory")
def register_cmd(reference, template, out, config_path, measure, alpha, mesh,
                 n_omega, n_s, max_iters, timing, force):
    """Register TEMPLATE onto REFERENCE and write run artifacts."""
    cfg = _load_config(config_path, _REGISTER_KEYS)
    cfg = _merge_flags(cfg, measure=measure, alpha=alpha, mesh=mesh,
                       n_omega=n_omega, n_s=n_s, timing=timing)
    if max_iters is not None:
        cfg.setdefault("optimizer", {})
        cfg["optimizer"] = {**cfg["optimizer"], "max_iters": max_iters}
    run_register(reference, template, out, cfg, force=force)


@main.command("generate")
@click.option("--out", required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--count", type=int)
@click.option("--size", type=int)
@click.option("--seed", type=int)
@click.option("--noise-stddev", type=float)
@click.option("--force", is_flag=True)
def generate_cmd(out, config_path, count, size, seed, noise_stddev, force):
    """Write synthetic case directories under --out."""
    cfg = _load_config(config_path, _GENERATE_KEYS)
    cfg = _merge_flags(cfg, count=count, size=size, seed=seed, noise_stddev=noise_stddev)
    if "RADREG_SEED" in os.environ:
        try:
            cfg["seed"] = int(os.environ["RADREG_SEED"])
        except ValueError:
            raise click.UsageError("RADREG_SEED must be an integer")
    run_generate(out, cfg, force=force)


@main.command("batch")
@click.option("--cases", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--measures", default=None,
              help="comma-separated measure names [default: rssd,ssd]")
@click.option("--alpha", help="regularization weight or 'paper-best'")
@click.option("--jobs", type=int, default=None, help="concurrent runs (default: cpu count)")
@click.option("--timing/--no-timing", "timing", default=None)
@click.option("--force", is_flag=True)
@click.pass_context
def batch_cmd(ctx, cases, out, config_path, measures, alpha, jobs, timing, force):
    """Register every case under --cases with each measure."""
    cfg = _load_config(config_path, _BATCH_KEYS)
    cfg = _merge_flags(cfg, alpha=alpha, timing=timing)
    measure_list = cfg.pop("measures", None)
    if measures is not None:
        measure_list = [m.strip() for m in measures.split(",") if m.strip()]
    if not measure_list:
        measure_list = ["rssd", "ssd"]
    if jobs is None:
        jobs = cfg.pop("jobs", None) or (os.cpu_count() or 1)
    else:
        cfg.pop("jobs", None)
    code = run_batch(cases, out, measure_list, cfg, jobs=jobs, force=force)
    if code:
        ctx.exit(code)


@main.command("report")
@click.option("--batch", "batch_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", default=None)
def report_cmd(batch_dir, out):
    """Render figures from a batch directory's CSV files."""
    run_report(batch_dir, out)


if __name__ == "__main__":
    main()
