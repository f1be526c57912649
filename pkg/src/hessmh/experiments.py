"""Configuration-driven sweeps, rate studies and fuzz checks with CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hessmh.catalog import CATALOG, CatalogError, get_model
from hessmh.diagnostics import (
    VarianceResult,
    average_acceptance,
    directional_esjd,
    gaussian_reference_alpha,
    gaussian_reference_esjd,
    iact,
    modified_pcn_reference_esjd,
    pooled,
    target_variance,
)
from hessmh.distances import MAX_DIM, hellinger_rate_study
from hessmh.laplace import laplace_approximation
from hessmh.mh_core import DEFAULT_BURN_IN, ConfigurationError, run_replicas
from hessmh.proposals import HessianRw, ModifiedPcn, Pcn, RandomWalk
from hessmh.pushforward import run_fuzz

VARIANTS = ("rw", "pcn", "hessian-rw", "modified-pcn", "rw-shrinking")
DEFAULT_N_GRID = (1.0, 10.0, 100.0, 1000.0, 10000.0)

SWEEP_COLUMNS = [
    "model", "n", "proposal", "step", "direction",
    "abar", "abar_se", "rho", "rho_se", "rhobar", "rhobar_se", "tau",
    "variance", "variance_provenance",
    "ref_abar", "ref_abar_se", "ref_rhobar", "ref_rhobar_se", "error",
]
RATE_COLUMNS = ["n", "hellinger", "tv"]


@dataclass
class ExperimentConfig:
    """Resolved settings for one experiment.

    ``proposals`` holds ``(variant, step)`` pairs. ``rw-shrinking`` is the
    random walk with proposal covariance ``(s / n) I``.
    """

    model: str = "gauss_ridge"
    n_grid: List[float] = field(default_factory=lambda: list(DEFAULT_N_GRID))
    proposals: List[Tuple[str, float]] = field(default_factory=lambda: [("hessian-rw", 1.0),
                                                                        ("modified-pcn", 0.6)])
    steps: int = 100_000
    burn_in: int = DEFAULT_BURN_IN
    seeds: List[int] = field(default_factory=lambda: list(range(8)))
    directions: Optional[List[List[float]]] = None
    out: Optional[str] = None
    format: str = "csv"
    reference_budget: int = 10**7
    fuzz_cases: int = 200
    fuzz_seed: int = 20240901

    def validate(self, need_model: bool = True) -> "ExperimentConfig":
        if need_model and self.model not in CATALOG:
            raise ConfigurationError(f"unknown model {self.model!r}; known: {sorted(CATALOG)}")
        if not self.n_grid:
            raise ConfigurationError("n_grid is empty")
        grid = [float(n) for n in self.n_grid]
        if any(n <= 0 or not math.isfinite(n) for n in grid):
            raise ConfigurationError("n_grid entries must be positive and finite")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("n_grid must be strictly increasing")
        self.n_grid = grid
        for variant, s in self.proposals:
            if variant not in VARIANTS:
                raise ConfigurationError(f"unknown proposal {variant!r}; known: {list(VARIANTS)}")
            if not s > 0 or (variant in ("pcn", "modified-pcn") and s > 1):
                raise ConfigurationError(f"step {s} is outside the legal range of {variant}")
        if self.steps < 1 or self.burn_in < 0:
            raise ConfigurationError("need steps >= 1 and burn_in >= 0")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be nonempty and distinct")
        if self.format not in ("csv", "json"):
            raise ConfigurationError("format must be csv or json")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proposals"] = [list(p) for p in self.proposals]
        return d


def build_kernel(variant: str, step: float, target, n: float):
    d = target.dim
    if variant == "rw":
        return RandomWalk(np.eye(d), step)
    if variant == "rw-shrinking":
        return RandomWalk(np.eye(d), math.sqrt(step / n))
    if variant == "pcn":
        return Pcn(np.eye(d), step)
    la = laplace_approximation(target, n)
    if variant == "hessian-rw":
        return HessianRw(la, step)
    if variant == "modified-pcn":
        return ModifiedPcn(la, step)
    raise ConfigurationError(f"unknown proposal {variant!r}")


def reference_values(variant: str, step: float, d: int, budget: int = 10**7):
    """Concentration-limit ``(abar, rhobar)`` references as ``(value, se)`` pairs; NaN when none exists."""
    if variant == "hessian-rw":
        a = gaussian_reference_alpha(d, step, budget)
        r = gaussian_reference_esjd(d, step, budget)
        return (a.value, a.se), (r.value, r.se)
    if variant == "modified-pcn":
        return (1.0, 0.0), (modified_pcn_reference_esjd(step), 0.0)
    nan = float("nan")
    return (nan, nan), (nan, nan)


def _directions(config: ExperimentConfig, d: int) -> dict:
    if config.directions is None:
        return {f"e{i + 1}": np.eye(d)[i] for i in range(d)}
    out = {}
    for i, v in enumerate(config.directions):
        v = np.asarray(v, dtype=float)
        if v.shape != (d,) or not np.linalg.norm(v) > 0:
            raise ConfigurationError(f"direction {v} does not fit dimension {d}")
        out[f"v{i + 1}"] = v / np.linalg.norm(v)
    return out


def _variance(entry, target, n, v, records) -> VarianceResult:
    exact = entry.exact_posterior(n) if entry.exact_posterior is not None else None
    return target_variance(target, n, v, exact=exact, records=records, quadrature_max_dim=MAX_DIM)


def _error_row(config, n, variant, step, label, message) -> dict:
    row = {c: float("nan") for c in SWEEP_COLUMNS}
    row.update(model=config.model, n=n, proposal=variant, step=step, direction=label,
               variance_provenance="", error=message)
    return row


def run_sweep(config: ExperimentConfig, workers: int = 1) -> Tuple[List[dict], bool]:
    """One row per ``(n, proposal, direction)``.

    Returns:
        ``(rows, ok)``; ``ok`` is False when any row carries an error.
    """
    config.validate()
    entry = get_model(config.model)
    target = entry.target()
    dirs = _directions(config, target.dim)
    refs = {(v, s): reference_values(v, s, target.dim, config.reference_budget)
            for v, s in config.proposals}
    rows, ok = [], True
    for n in config.n_grid:
        for variant, step in config.proposals:
            try:
                kernel = build_kernel(variant, step, target, n)
                x0 = entry.x_star if variant in ("rw", "pcn", "rw-shrinking") else None
                records = run_replicas(target, n, kernel, x0, config.steps, config.burn_in,
                                       config.seeds, workers=workers)
                abar = pooled([average_acceptance(r) for r in records])
            except Exception as err:  # recorded per row, reported through the exit code
                ok = False
                rows.extend(_error_row(config, n, variant, step, lab, f"{type(err).__name__}: {err}")
                            for lab in dirs)
                continue
            (ra, ra_se), (rr, rr_se) = refs[(variant, step)]
            for label, v in dirs.items():
                try:
                    var = _variance(entry, target, n, v, records)
                    rho = pooled([directional_esjd(r, v) for r in records])
                    try:
                        tau = float(np.mean([iact(r, lambda xs, v=v: xs @ v).tau for r in records]))
                    except ValueError:
                        tau = float("nan")
                except Exception as err:
                    ok = False
                    rows.append(_error_row(config, n, variant, step, label, f"{type(err).__name__}: {err}"))
                    continue
                rows.append(dict(
                    model=config.model, n=n, proposal=variant, step=step, direction=label,
                    abar=abar.value, abar_se=abar.se, rho=rho.value, rho_se=rho.se,
                    rhobar=rho.value / var.value, rhobar_se=rho.se / var.value, tau=tau,
                    variance=var.value, variance_provenance=var.provenance,
                    ref_abar=ra, ref_abar_se=ra_se, ref_rhobar=rr, ref_rhobar_se=rr_se, error="",
                ))
    return rows, ok


def run_rate_study(config: ExperimentConfig) -> List[dict]:
    """Hellinger and total variation distance to the Laplace approximation over ``n_grid``.

    The last row holds the fitted log-log slopes with ``n = "slope"``.
    """
    config.validate()
    entry = get_model(config.model)
    if not entry.satisfies_thm49:
        raise ConfigurationError(f"model {config.model!r} is not flagged for Laplace-rate studies")
    if entry.dim > MAX_DIM:
        raise ConfigurationError(f"rate studies need dimension <= {MAX_DIM}")
    study = hellinger_rate_study(entry.target(), config.n_grid)
    rows = [dict(n=float(n), hellinger=float(h), tv=float(t))
            for n, h, t in zip(study.n, study.hellinger, study.tv)]
    tv = np.asarray(study.tv)
    tv_slope = float(np.polyfit(np.log(study.n), np.log(tv), 1)[0]) if np.all(tv > 0) else float("nan")
    rows.append(dict(n="slope", hellinger=study.slope, tv=tv_slope))
    return rows


def run_pushforward_check(config: ExperimentConfig) -> Tuple[str, bool]:
    """Finite-chain fuzz suite as a JSON document (identical bytes for identical settings)."""
    summary = run_fuzz(config.fuzz_cases, config.fuzz_seed)
    cfg = {"fuzz_cases": config.fuzz_cases, "fuzz_seed": config.fuzz_seed}
    return summary.to_json(cfg), summary.ok


def map_report(model: str, n: float) -> dict:
    entry = get_model(model)
    la = laplace_approximation(entry.target(), n)
    return {"model": model, "n": n, "map_point": la.map_point.tolist(),
            "H_n": la.precision_core.dense.tolist(), "C_n": la.covariance.dense.tolist(),
            "iterations": la.trace.iterations, "grad_norm": la.trace.grad_norm}


# --- output --------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(rows: Sequence[dict], columns: Sequence[str], provenance: Optional[dict] = None) -> str:
    """CSV text with ``# ``-prefixed provenance lines, then header and rows.

    Floats are written with ``repr`` so they read back bit-identically.
    """
    buf = io.StringIO()
    if provenance is not None:
        buf.write("# " + json.dumps(provenance, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> Tuple[List[dict], Optional[dict]]:
    """Inverse of :func:`write_csv`; numeric-looking fields are parsed as floats."""
    lines = text.splitlines()
    provenance = None
    while lines and lines[0].startswith("# "):
        provenance = json.loads(lines.pop(0)[2:])
    rows = []
    for raw in csv.DictReader(lines):
        row = {}
        for k, v in raw.items():
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        rows.append(row)
    return rows, provenance


def strict_json_value(obj):
    """Replace non-finite floats by ``None`` so the output is standard JSON."""
    if isinstance(obj, dict):
        return {k: strict_json_value(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [strict_json_value(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(rows: Sequence[dict], provenance: Optional[dict] = None) -> str:
    return json.dumps(strict_json_value({"config": provenance, "rows": list(rows)}), indent=2,
                      sort_keys=True, allow_nan=False)


def render(rows, columns, config: ExperimentConfig) -> str:
    prov = config.to_dict()
    if config.format == "json":
        return write_json(rows, prov)
    return write_csv(rows, columns, prov)
