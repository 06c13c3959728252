"""Monte Carlo experiment harness and CLI.

Runs seeded trials over a sweep axis (SNR, bounce-to-direct power ratio, or
target count), scores each algorithm's angle estimates, and emits plot-ready
CSV plus a JSON summary.  Every trial is reproducible from (base seed, sweep
index, trial index, resample counter).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import driver, scenario as scen
from .driver import AlgorithmConfig
from .grid import GridCollisionError, build_grid, nearest_grid_assignment
from .mstep import MStepConfig
from .prior import SparsityHyper

ALGORITHMS = ("sf_tvbi", "sf_tvbi_no_cross", "turbo_vbi", "omp")
SWEEP_AXES = ("snr_db", "nlos_los_ratio_db", "target_count")
UNMATCHED_PENALTY_DEG = 90.0  # half the field of view

CSV_COLUMNS = ("sweep_value", "algorithm", "rmse_deg", "p_detect", "mean_ms",
               "convergence_rate", "trials")


@dataclass(frozen=True)
class ExperimentConfig:
    radar: scen.RadarConfig
    grid_q: int = 16
    targets: int = 2
    sweep_axis: str = "snr_db"
    sweep_values: tuple = (0.0, 10.0)
    trials: int = 10
    seed: int = 0
    algorithms: tuple = ALGORITHMS
    snr_db: float = 10.0                 # fixed value when not the axis
    nlos_los_ratio_db: float | None = None  # None keeps natural geometry
    placement: str = "on_grid"           # or "jitter" for off-grid scenes
    jitter_fraction: float = 0.99        # of half a cell, for "jitter"
    distance_range: tuple = (45.0, 55.0)
    rcs_dbsm: float = -10.0
    bistatic_rcs_dbsm: float = 0.0
    algorithm_config: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    omp_extra_atoms: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}")
        if not all(np.isfinite(v) for v in self.sweep_values):
            raise ValueError("sweep values must be finite")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")


@dataclass
class AlgorithmOutcome:
    angles: list
    sq_errors_deg2: list   # per true target
    detected: list         # per true target
    wall_clock_ms: float
    converged: bool


@dataclass
class TrialRecord:
    sweep_value: float
    trial_index: int
    seed: tuple
    true_angles: list
    outcomes: dict  # algorithm -> AlgorithmOutcome


def _greedy_match(true_angles, est_angles):
    """Greedy nearest assignment with exclusion; returns the per-true-target
    matched estimate (or None when estimates run out)."""
    matches = [None] * len(true_angles)
    remaining_true = set(range(len(true_angles)))
    remaining_est = set(range(len(est_angles)))
    while remaining_true and remaining_est:
        best = None
        for ti in remaining_true:
            for ei in remaining_est:
                d = abs(true_angles[ti] - est_angles[ei])
                if best is None or d < best[0]:
                    best = (d, ti, ei)
        _, ti, ei = best
        matches[ti] = est_angles[ei]
        remaining_true.discard(ti)
        remaining_est.discard(ei)
    return matches


def score_angles(true_angles, est_angles):
    """Per-target squared errors in degrees^2; unmatched targets receive the
    half-field-of-view penalty."""
    matches = _greedy_match(list(true_angles), list(est_angles))
    errs = []
    for truth, est in zip(true_angles, matches):
        if est is None:
            errs.append(UNMATCHED_PENALTY_DEG ** 2)
        else:
            errs.append(np.degrees(truth - est) ** 2)
    return errs


def _sample_targets(config, grid, rng):
    q = config.grid_q
    k = config.targets
    if k > q:
        raise ValueError("cannot place more targets than base grid cells")
    cells = rng.choice(q, size=k, replace=False)
    angles = grid.base[cells].copy()
    if config.placement == "jitter":
        jit = rng.uniform(-1.0, 1.0, size=k) * \
            config.jitter_fraction * grid.half_spacing
        angles = angles + jit
    dists = rng.uniform(*config.distance_range, size=k)
    rcs = scen.dbsm_to_m2(config.rcs_dbsm)
    return [scen.Target(angle=float(a), distance=float(d), rcs=rcs)
            for a, d in zip(angles, dists)]


def _ratio_scale(targets, config, ratio_db):
    """Inter-target distance scale that sets the bounce-to-direct received
    power ratio; bounce power goes as 1/scale^2."""
    base = scen.synthesize(config.radar, targets, np.random.default_rng(0),
                           bistatic_rcs=scen.dbsm_to_m2(config.bistatic_rcs_dbsm))
    p_los, p_nlos = scen.expected_receive_power(base, config.radar)
    if p_nlos == 0:
        return 1.0
    target_ratio = 10.0 ** (ratio_db / 10.0)
    return float(np.sqrt(p_nlos / (p_los * target_ratio)))


def _trial_settings(config, sweep_value):
    k = config.targets
    snr_db = config.snr_db
    ratio_db = config.nlos_los_ratio_db
    if config.sweep_axis == "snr_db":
        snr_db = float(sweep_value)
    elif config.sweep_axis == "nlos_los_ratio_db":
        ratio_db = float(sweep_value)
    elif config.sweep_axis == "target_count":
        k = int(sweep_value)
    return k, snr_db, ratio_db


def run_trial(config, sweep_index, trial_index):
    """One deterministic trial: synthesize, observe, run every requested
    algorithm, score.  Grid-collision scenes are resampled with an advanced
    sub-seed."""
    sweep_value = config.sweep_values[sweep_index]
    k, snr_db, ratio_db = _trial_settings(config, sweep_value)
    trial_cfg = config if k == config.targets else \
        _with_targets(config, k)
    grid = build_grid(config.grid_q)

    assignment = None
    for resample in range(32):
        seed = (config.seed, sweep_index, trial_index, resample)
        rng = np.random.default_rng(seed)
        targets = _sample_targets(trial_cfg, grid, rng)
        try:
            assignment = nearest_grid_assignment(
                [t.angle for t in targets], grid)
            break
        except GridCollisionError:
            continue
    if assignment is None:
        raise RuntimeError("could not draw a collision-free scene")

    psi = scen.dbsm_to_m2(config.bistatic_rcs_dbsm)
    scale = 1.0 if ratio_db is None else _ratio_scale(targets, trial_cfg,
                                                      ratio_db)
    shell = scen.synthesize(trial_cfg.radar, targets, np.random.default_rng(seed),
                            bistatic_rcs=psi, pair_range_scale=scale)
    noise_var = scen.noise_variance_for_snr(shell, trial_cfg.radar, snr_db)
    scene = scen.synthesize(trial_cfg.radar, targets, rng, bistatic_rcs=psi,
                            pair_range_scale=scale, noise_variance=noise_var)
    obs = scen.generate_observation(scene, trial_cfg.radar, rng)

    true_angles = [t.angle for t in targets]
    true_cells = set(int(assignment.cells[i, i]) for i in range(k))

    outcomes = {}
    for name in config.algorithms:
        est, ms, converged = _run_algorithm(name, obs, grid, trial_cfg, k)
        diag_cells = set(
            int(q) for q in grid.diagonal_cells() if est.support[q] > 0)
        detected = [int(assignment.cells[i, i]) in diag_cells
                    for i in range(k)]
        outcomes[name] = AlgorithmOutcome(
            angles=[float(a) for a in est.direct_angles],
            sq_errors_deg2=score_angles(true_angles, est.direct_angles),
            detected=detected,
            wall_clock_ms=ms,
            converged=converged,
        )
    return TrialRecord(sweep_value=float(sweep_value),
                       trial_index=trial_index, seed=seed,
                       true_angles=true_angles, outcomes=outcomes)


def _with_targets(config, k):
    from dataclasses import replace
    return replace(config, targets=k)


def _run_algorithm(name, obs, grid, config, k):
    algo_cfg = config.algorithm_config
    t0 = time.perf_counter()
    if name == "sf_tvbi":
        est = driver.sf_tvbi(obs, grid, algo_cfg)
        converged = bool(np.all(est.diagnostics["mp_converged"])) \
            if est.diagnostics["mp_converged"] else True
    elif name == "sf_tvbi_no_cross":
        from dataclasses import replace
        est = driver.sf_tvbi(obs, grid,
                             replace(algo_cfg, cross_sparsity_enabled=False))
        converged = True
    elif name == "turbo_vbi":
        est = driver.turbo_vbi(obs, grid, algo_cfg)
        converged = bool(np.all(est.diagnostics["mp_converged"])) \
            if est.diagnostics["mp_converged"] else True
    elif name == "omp":
        budget = min(k + k * (k - 1) + config.omp_extra_atoms, grid.q_total)
        est = driver.omp(obs, grid, max_atoms=budget)
        converged = True
    else:
        raise ValueError(f"unknown algorithm {name!r}")
    ms = (time.perf_counter() - t0) * 1e3
    return est, ms, converged


def rmse(records, algorithm):
    """Root mean squared angle error in degrees over all targets and trials."""
    errs = []
    for rec in records:
        errs.extend(rec.outcomes[algorithm].sq_errors_deg2)
    if not errs:
        raise ValueError("no records to score")
    return float(np.sqrt(np.mean(errs)))


def detection_probability(records, algorithm):
    """Fraction of (target, trial) pairs whose true diagonal cell appears in
    the estimated diagonal support."""
    flags = []
    for rec in records:
        flags.extend(rec.outcomes[algorithm].detected)
    if not flags:
        raise ValueError("no records to score")
    return float(np.mean(flags))


def _aggregate(records, algorithm):
    ms = [r.outcomes[algorithm].wall_clock_ms for r in records]
    conv = [r.outcomes[algorithm].converged for r in records]
    return {
        "rmse_deg": rmse(records, algorithm),
        "p_detect": detection_probability(records, algorithm),
        "mean_ms": float(np.mean(ms)),
        "convergence_rate": float(np.mean(conv)),
        "trials": len(records),
    }


def sweep(config, out_dir=None):
    """Run the whole experiment: trials x sweep points x algorithms.

    Returns (rows, records); when out_dir is given, writes results.csv,
    trials.csv and summary.json there.  Trial failures are recorded and do
    not abort the sweep.
    """
    all_records = []
    failures = []

    def one(point_trial):
        si, ti = point_trial
        try:
            return run_trial(config, si, ti)
        except Exception as exc:  # recorded, never fatal for the sweep
            failures.append((si, ti, repr(exc)))
            return None

    jobs = [(si, ti) for si in range(len(config.sweep_values))
            for ti in range(config.trials)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    all_records = [r for r in results if r is not None]

    rows = []
    for si, value in enumerate(config.sweep_values):
        point_records = [r for r in all_records
                         if r.sweep_value == float(value)]
        if not point_records:
            continue
        for name in config.algorithms:
            agg = _aggregate(point_records, name)
            rows.append({"sweep_value": float(value), "algorithm": name, **agg})

    if out_dir is not None:
        emit(config, rows, all_records, failures, out_dir)
    return rows, all_records


def emit(config, rows, records, failures, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})
    with open(out / "trials.csv", "w", newline="") as fh:
        cols = ("sweep_value", "trial_index", "seed", "algorithm",
                "true_angles", "est_angles", "sq_errors_deg2", "detected",
                "wall_clock_ms", "converged")
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for rec in records:
            for name, oc in rec.outcomes.items():
                writer.writerow({
                    "sweep_value": rec.sweep_value,
                    "trial_index": rec.trial_index,
                    "seed": json.dumps(list(rec.seed)),
                    "algorithm": name,
                    "true_angles": json.dumps(rec.true_angles),
                    "est_angles": json.dumps(oc.angles),
                    "sq_errors_deg2": json.dumps(oc.sq_errors_deg2),
                    "detected": json.dumps(oc.detected),
                    "wall_clock_ms": oc.wall_clock_ms,
                    "converged": oc.converged,
                })
    summary = {
        "config": config_to_dict(config),
        "rows": rows,
        "failures": failures,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)


def read_results_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "sweep_value": float(row["sweep_value"]),
                "algorithm": row["algorithm"],
                "rmse_deg": float(row["rmse_deg"]),
                "p_detect": float(row["p_detect"]),
                "mean_ms": float(row["mean_ms"]),
                "convergence_rate": float(row["convergence_rate"]),
                "trials": int(row["trials"]),
            })
    return rows


# ---------------------------------------------------------------------------
# Config file handling

def config_to_dict(config):
    d = asdict(config)
    d["radar"] = asdict(config.radar)
    d["algorithm_config"] = asdict(config.algorithm_config)
    return d


def config_from_dict(d):
    d = dict(d)
    radar = scen.RadarConfig(**d.pop("radar"))
    algo = d.pop("algorithm_config", {})
    mstep_cfg = algo.pop("mstep", {})
    armijo = mstep_cfg.pop("armijo", {})
    hyper = algo.pop("hyper", {})
    from .mstep import ArmijoConfig
    algo_cfg = AlgorithmConfig(
        mstep=MStepConfig(armijo=ArmijoConfig(**armijo), **mstep_cfg),
        hyper=SparsityHyper(**hyper),
        **algo)
    for key in ("sweep_values", "algorithms", "distance_range"):
        if key in d and isinstance(d[key], list):
            d[key] = tuple(d[key])
    return ExperimentConfig(radar=radar, algorithm_config=algo_cfg, **d)


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="crossdoa",
        description="Monte Carlo angle-estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run a sweep from a JSON config")
    run_p.add_argument("--config", required=True, help="JSON experiment config")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--trials", type=int, default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--algorithms", type=str, default=None,
                       help="comma-separated subset of " + ",".join(ALGORITHMS))
    run_p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        overrides = {}
        if args.trials is not None:
            overrides["trials"] = args.trials
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.algorithms is not None:
            overrides["algorithms"] = tuple(args.algorithms.split(","))
        if args.threads is not None:
            overrides["threads"] = args.threads
        if overrides:
            from dataclasses import replace
            config = replace(config, **overrides)
    except (OSError, ValueError, TypeError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    rows, _ = sweep(config, out_dir=args.out)
    print(f"wrote {len(rows)} result rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
