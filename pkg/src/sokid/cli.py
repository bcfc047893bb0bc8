"""``sokid`` command line: simulate -> fit -> export-curves / eval.

Every command reads a JSON run config.  Keys and defaults::

    {
      "sde": "paper_quadratic",                 # builtin name,
                                                # {"name": ..., "params": {...}}, or
                                                # {"drift": "x**2 - x", "diffusion": "x/10"}
      "simulation": {
        "t_start": 0.0, "t_end": 1.0, "num_times": 100,
        "initial_conditions": {"count": 10, "low": 0.1, "high": 0.9},   # or a list
        "trajectories_per_ic": 10, "substeps": 10, "seed": 1
      },
      "drift": {"kernel": {"type": "gaussian", "bandwidth": 1.0},
                "lambda": 1e-6, "pairing": "distinct"},
      "diffusion": {"features": {"type": "polynomial_features", "p": 2}, "lambda": 1e-6},
      "evaluation": {"low": 0.0, "high": 1.2, "count": 121},
      "output_dir": "run"
    }

Errors are reported on stderr as one line ``<ErrorClass>: <message>`` with a
nonzero exit status.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import TimeGrid, file_sha256, load_ensemble, save_ensemble
from .diffusion import (DiffusionModel, fit_diffusion, load_diffusion_model,
                        save_diffusion_model)
from .drift import PAIRINGS, DriftModel, fit_drift, load_drift_model, save_drift_model
from .kernels import FeatureMapSpec, GaussianKernel, kernel_from_dict
from .simulator import (SdeSpec, SimPlan, builtin_sde, draw_initial_conditions,
                        sde_from_expressions, simulate_ensemble)

log = logging.getLogger("sokid")

DRIFT_FILE = "drift_model.json"
DIFFUSION_FILE = "diffusion_model.json"
REPORT_FILE = "report.json"

DEFAULTS = {
    "sde": "paper_quadratic",
    "simulation": {
        "t_start": 0.0,
        "t_end": 1.0,
        "num_times": 100,
        "initial_conditions": {"count": 10, "low": 0.1, "high": 0.9},
        "trajectories_per_ic": 10,
        "substeps": 10,
        "seed": 1,
    },
    "drift": {"kernel": {"type": "gaussian", "bandwidth": 1.0}, "lambda": 1e-6,
              "pairing": "distinct"},
    "diffusion": {"features": {"type": "polynomial_features", "p": 2}, "lambda": 1e-6},
    "evaluation": {"low": 0.0, "high": 1.2, "count": 121},
    "output_dir": "run",
}


class ConfigError(ValueError):
    pass


class UnknownSdeError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class RunConfig:
    sde: SdeSpec | None
    plan: SimPlan
    drift_kernel: GaussianKernel
    lambda_drift: float
    pairing: str
    features: FeatureMapSpec
    lambda_diff: float
    eval_grid: tuple[float, float, int]
    output_dir: Path
    raw: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        doc = _merge(DEFAULTS, doc)
        try:
            sde = _parse_sde(doc["sde"])
            sim = doc["simulation"]
            num = int(sim["num_times"])
            if num < 2:
                raise ConfigError("simulation.num_times must be >= 2")
            grid = TimeGrid.uniform(float(sim["t_start"]), float(sim["t_end"]), num)
            seed = int(sim["seed"])
            ics = sim["initial_conditions"]
            if isinstance(ics, dict):
                ics = draw_initial_conditions(int(ics.get("count", 10)),
                                              float(ics.get("low", 0.1)),
                                              float(ics.get("high", 0.9)), seed)
            plan = SimPlan(grid, tuple(float(c) for c in ics), int(sim["trajectories_per_ic"]),
                           sim["substeps"], seed)
            kern = kernel_from_dict(doc["drift"]["kernel"])
            feats = kernel_from_dict(doc["diffusion"]["features"])
            if not isinstance(kern, GaussianKernel):
                raise ConfigError("drift.kernel must be of type 'gaussian'")
            if not isinstance(feats, FeatureMapSpec):
                raise ConfigError("diffusion.features must be of type 'polynomial_features'")
            ev = doc["evaluation"]
            grid_eval = (float(ev["low"]), float(ev["high"]), int(ev["count"]))
            lam_d = float(doc["drift"]["lambda"])
            lam_s = float(doc["diffusion"]["lambda"])
        except (ConfigError, UnknownSdeError):
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not grid_eval[0] < grid_eval[1] or grid_eval[2] < 2:
            raise ConfigError("evaluation grid needs low < high and count >= 2")
        if lam_d < 0 or lam_s < 0:
            raise ConfigError("lambda values must be non-negative")
        pairing = doc["drift"].get("pairing", "distinct")
        if pairing not in PAIRINGS:
            raise ConfigError(f"drift.pairing must be one of {PAIRINGS}, got {pairing!r}")
        return cls(sde, plan, kern, lam_d, pairing, feats,
                   lam_s, grid_eval, Path(doc["output_dir"]), doc)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(_apply_overrides(doc, **overrides))


def _apply_overrides(doc: dict, seed=None, lambda_drift=None, lambda_diff=None) -> dict:
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc.setdefault("simulation", {})["seed"] = seed
    if lambda_drift is not None:
        doc.setdefault("drift", {})["lambda"] = lambda_drift
    if lambda_diff is not None:
        doc.setdefault("diffusion", {})["lambda"] = lambda_diff
    return doc


def _parse_sde(spec) -> SdeSpec | None:
    if spec is None:
        return None
    if isinstance(spec, str):
        try:
            return builtin_sde(spec)
        except KeyError as exc:
            raise UnknownSdeError(exc.args[0]) from None
    if isinstance(spec, dict):
        if "name" in spec:
            try:
                return builtin_sde(spec["name"], **spec.get("params", {}))
            except KeyError as exc:
                raise UnknownSdeError(exc.args[0]) from None
        if "drift" in spec and "diffusion" in spec:
            return sde_from_expressions(spec["drift"], spec["diffusion"])
    raise ConfigError(f"cannot interpret sde entry {spec!r}")


# -- commands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out, fmt: str | None = None) -> str:
    """Simulate the configured SDE, write the ensemble and return its sha256."""
    if cfg.sde is None:
        raise UnknownSdeError("config has no SDE to simulate")
    out = Path(out)
    fmt = fmt or (out.suffix.lstrip(".") or "csv")
    ensemble = simulate_ensemble(cfg.sde, cfg.plan)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ensemble(ensemble, out, fmt)
    return file_sha256(out)


def cmd_fit(cfg: RunConfig, data, outdir, debug_sdp=None) -> dict:
    """Fit drift then diffusion; write both model files and a run report."""
    data = Path(data)
    outdir = Path(outdir)
    ensemble = load_ensemble(data)
    outdir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    drift = fit_drift(ensemble, cfg.drift_kernel, cfg.lambda_drift, cfg.pairing)
    t1 = time.perf_counter()
    diff = fit_diffusion(ensemble, cfg.features, drift, cfg.lambda_diff, debug_path=debug_sdp)
    t2 = time.perf_counter()

    save_drift_model(drift, outdir / DRIFT_FILE, data)
    save_diffusion_model(diff, outdir / DIFFUSION_FILE)
    report = {
        "dataset": str(data.resolve()),
        "dataset_sha256": file_sha256(data),
        "lambda_drift": cfg.lambda_drift,
        "lambda_diff": cfg.lambda_diff,
        "drift_solver": drift.solver,
        "alpha_norm_drift": float(np.linalg.norm(drift.alpha)),
        "solver": diff.diagnostics,
        "timings_s": {"drift": t1 - t0, "diffusion": t2 - t1},
    }
    (outdir / REPORT_FILE).write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    return report


def load_models(model_dir) -> tuple[DriftModel, DiffusionModel]:
    model_dir = Path(model_dir)
    return (load_drift_model(model_dir / DRIFT_FILE),
            load_diffusion_model(model_dir / DIFFUSION_FILE))


def eval_grid(cfg: RunConfig) -> np.ndarray:
    lo, hi, count = cfg.eval_grid
    return np.linspace(lo, hi, count)


def curve_table(xs, f_hat, sigma_hat, sde: SdeSpec | None):
    """Rows ``(x, f_hat, sigma_hat[, f_true, sigma_true])`` and the header."""
    header = ["x", "f_hat", "sigma_hat"]
    cols = [xs, np.asarray(f_hat(xs), dtype=float), np.asarray(sigma_hat(xs), dtype=float)]
    if sde is not None:
        header += ["f_true", "sigma_true"]
        cols += [sde.eval_drift(xs), sde.eval_diffusion(xs)]
    return header, np.column_stack(cols)


def cmd_export_curves(cfg: RunConfig, model_dir, out) -> int:
    drift, diff = load_models(model_dir)
    header, table = curve_table(eval_grid(cfg), drift, diff, cfg.sde)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in table:
            writer.writerow([format(v, ".17g") for v in row])
    return table.shape[0]


def _rel_l2(est: np.ndarray, true: np.ndarray) -> float:
    denom = np.linalg.norm(true)
    if denom == 0:
        return float("nan")
    return float(np.linalg.norm(est - true) / denom)


def curve_metrics(f_hat, sigma_hat, sde: SdeSpec, xs: np.ndarray, states: np.ndarray) -> dict:
    """Relative L2 and max errors over the part of ``xs`` inside the occupied range.

    The occupied range is the 5th-95th percentile of observed ``states``.
    """
    lo, hi = np.percentile(states, [5.0, 95.0])
    inside = xs[(xs >= lo) & (xs <= hi)]
    if inside.size == 0:
        raise ValueError(f"no evaluation points inside the occupied range [{lo:.4g}, {hi:.4g}]")
    f_est = np.asarray(f_hat(inside), dtype=float)
    s_est = np.asarray(sigma_hat(inside), dtype=float)
    f_true = sde.eval_drift(inside)
    s_true = sde.eval_diffusion(inside)
    return {
        "occupied_range": [float(lo), float(hi)],
        "points": int(inside.size),
        "drift_rel_l2": _rel_l2(f_est, f_true),
        "diffusion_rel_l2": _rel_l2(s_est, s_true),
        "drift_max_abs": float(np.max(np.abs(f_est - f_true))),
        "diffusion_max_abs": float(np.max(np.abs(s_est - s_true))),
    }


def cmd_eval(cfg: RunConfig, model_dir, out=None) -> dict:
    if cfg.sde is None:
        raise UnknownSdeError("metrics need the true SDE; config has none")
    drift, diff = load_models(model_dir)
    metrics = curve_metrics(drift, diff, cfg.sde, eval_grid(cfg), drift.ensemble.all_states())
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return metrics


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sokid", description=(
        "Learn drift and diffusion of a 1-D SDE from trajectory snapshots."))
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, help="override simulation.seed")
        p.add_argument("--lambda-drift", type=float, help="override drift.lambda")
        p.add_argument("--lambda-diff", type=float, help="override diffusion.lambda")

    p = sub.add_parser("simulate", help="generate a snapshot ensemble")
    common(p)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--format", choices=["csv", "json"])

    p = sub.add_parser("fit", help="fit drift and diffusion models")
    common(p)
    p.add_argument("-d", "--data", required=True)
    p.add_argument("-o", "--out", help="output directory (default: config output_dir)")
    p.add_argument("--debug-sdp", metavar="PATH", help="dump the SDP pencil and iterates")

    p = sub.add_parser("export-curves", help="tabulate fitted curves on the evaluation grid")
    common(p)
    p.add_argument("-m", "--models", required=True)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("eval", help="error metrics against the true SDE")
    common(p)
    p.add_argument("-m", "--models", required=True)
    p.add_argument("-o", "--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, lambda_drift=args.lambda_drift,
                             lambda_diff=args.lambda_diff)
        if args.command == "simulate":
            digest = cmd_simulate(cfg, args.out, args.format)
            print(f"sha256 {digest}  {args.out}")
        elif args.command == "fit":
            outdir = args.out or cfg.output_dir
            report = cmd_fit(cfg, args.data, outdir, args.debug_sdp)
            print(f"status {report['solver']['status']}  models in {outdir}")
        elif args.command == "export-curves":
            rows = cmd_export_curves(cfg, args.models, args.out)
            print(f"{rows} rows  {args.out}")
        elif args.command == "eval":
            metrics = cmd_eval(cfg, args.models, args.out)
            print(json.dumps(metrics, sort_keys=True))
    except Exception as exc:  # noqa: BLE001 -- single-line report is the CLI contract
        msg = " ".join(str(exc).split())
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
