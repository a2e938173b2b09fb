"""The two sampler comparisons and the exact property diagnostics, end to end.

Every result directory holds deterministic files (``results.csv``,
``summary.json``, ``model.json`` and for denoising the PGM images) plus a
timing sidecar (``timing.csv``, ``timing.json``) with everything derived from
wall-clock measurements.  Trial ``j`` of scheme ``s`` under master seed ``m``
draws from ``SeedSequence([m, crc32(s), j])``.
"""
from __future__ import annotations

import csv
import io
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import oracle
from ..estimators import RbAccumulator, belief_estimate, best_beliefs, map_reconstruction, reconstruction_error
from ..model import GridMrf, PotentialSpec, build_grid_mrf
from ..samplers import run_chain
from .config import ExperimentConfig
from .data import atomic_write_text, corrupt_flip, generate_patch_image, write_pgm

SEED_RULE = "trial seed = numpy SeedSequence([master_seed, zlib.crc32(scheme), trial_index])"


@dataclass
class TrialResult:
    """One chain's output.

    ``cumulative_time[t]`` and ``error_trace[t]`` refer to post-burn-in
    sample ``t + 1``; time counts from the first kernel call (burn-in
    included) in the configured units.
    """

    scheme: str
    trial: int
    seed_entropy: tuple
    estimates: np.ndarray
    mc_estimates: np.ndarray
    cumulative_time: np.ndarray
    error_trace: np.ndarray | None = None

    @property
    def kernel_time(self) -> float:
        return float(self.cumulative_time[-1])


def trial_seed(master: int, scheme: str, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), zlib.crc32(scheme.encode()), int(trial)])


def _run_trial(task) -> TrialResult:
    mrf, scheme, trial, cfg, truth = task
    ss = trial_seed(cfg.seed, scheme, trial)
    acc = RbAccumulator.for_model(mrf)
    n_keep = cfg.n_iters - cfg.effective_burn_in
    cum = np.empty(n_keep)
    err = np.empty(n_keep) if truth is not None else None
    by_iter = cfg.time_units == "iterations"
    burn = cfg.effective_burn_in

    def checkpoint(t, elapsed):
        cum[t - 1] = burn + t if by_iter else elapsed
        if err is not None:
            err[t - 1] = reconstruction_error(map_reconstruction(best_beliefs(acc)), truth)

    run_chain(mrf, scheme, cfg.n_iters, burn_in=burn, seed=np.random.default_rng(ss), sinks=[acc],
              pg_rb=cfg.pg_rb, checkpoint_every=1, on_checkpoint=checkpoint)
    values = acc.state_values
    est = best_beliefs(acc) @ values
    mc = belief_estimate(acc, "mc") @ values
    return TrialResult(scheme, trial, tuple(ss.entropy), est, mc, cum, err)


def run_trials(mrf: GridMrf, cfg: ExperimentConfig, truth=None, jobs: int = 1) -> dict[str, list[TrialResult]]:
    """All trials of all configured schemes, ordered by (scheme, trial)."""
    tasks = [(mrf, s, j, cfg, truth) for s in cfg.schemes for j in range(cfg.n_trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_trial(t) for t in tasks]
    out: dict[str, list[TrialResult]] = {s: [] for s in cfg.schemes}
    for r in results:
        out[r.scheme].append(r)
    return out


# ---------------------------------------------------------------------------
# outputs


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _json_text(obj) -> str:
    return json.dumps(_json_clean(obj), indent=2, sort_keys=True) + "\n"


def model_document(cfg: ExperimentConfig, spec: PotentialSpec, observations, seed) -> dict:
    return {"rows": cfg.rows, "cols": cfg.cols, "n_states": cfg.n_states, "potential_spec": spec.to_dict(),
            "observations": np.asarray(observations).reshape(-1).tolist(), "seed": seed}


def load_model_document(doc: dict) -> GridMrf:
    obs = np.asarray(doc["observations"], dtype=np.int64).reshape(doc["rows"], doc["cols"])
    return build_grid_mrf(doc["rows"], doc["cols"], doc["n_states"], PotentialSpec.from_dict(doc["potential_spec"]), obs)


def _metadata(cfg: ExperimentConfig) -> dict:
    # the output location is not part of the result
    conf = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    return {"config": conf, "seed_rule": SEED_RULE, "burn_in": cfg.effective_burn_in}


def _checkpoints(n_keep: int, every: int) -> np.ndarray:
    t = np.arange(every, n_keep + 1, every)
    if len(t) == 0 or t[-1] != n_keep:
        t = np.append(t, n_keep)
    return t


# ---------------------------------------------------------------------------
# variance study


def variance_model(cfg: ExperimentConfig) -> tuple[GridMrf, PotentialSpec, np.ndarray, int]:
    seed = cfg.seed if cfg.model_seed is None else cfg.model_seed
    spec = cfg.potential_spec()
    obs = np.random.default_rng(seed).integers(0, cfg.n_states, size=(cfg.rows, cfg.cols))
    return build_grid_mrf(cfg.rows, cfg.cols, cfg.n_states, spec, obs), spec, obs, seed


def _across_trial_var(values: np.ndarray):
    return np.var(values, axis=0, ddof=1) if len(values) > 1 else None


def run_variance_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Across-trial variance of per-node mean estimates, raw and time-adjusted.

    The time factor of a scheme is its mean per-trial kernel time over the
    fastest scheme's; with one trial the variances are undefined (``None``).
    """
    mrf, spec, obs, mseed = variance_model(cfg)
    trials = run_trials(mrf, cfg, jobs=jobs)
    raw = {s: _across_trial_var(np.array([r.estimates for r in trials[s]])) for s in cfg.schemes}
    raw_mc = {s: _across_trial_var(np.array([r.mc_estimates for r in trials[s]])) for s in cfg.schemes}
    mean_time = {s: float(np.mean([r.kernel_time for r in trials[s]])) for s in cfg.schemes}
    fastest = min(mean_time.values())
    factor = {s: mean_time[s] / fastest for s in cfg.schemes}
    adj = {s: None if raw[s] is None else raw[s] * factor[s] for s in cfg.schemes}

    def med(v):
        return None if v is None else float(np.median(v))

    summary = {
        **_metadata(cfg),
        "model_seed": mseed,
        "schemes": {
            s: {
                "median_raw_variance": med(raw[s]),
                "mean_raw_variance": None if raw[s] is None else float(np.mean(raw[s])),
                "median_raw_variance_mc": med(raw_mc[s]),
                "rb_not_worse_fraction": None if raw[s] is None else float(np.mean(raw[s] <= raw_mc[s])),
            }
            for s in cfg.schemes
        },
    }
    timing = {
        "time_units": cfg.time_units,
        "schemes": {
            s: {
                "mean_kernel_time": mean_time[s],
                "time_factor": factor[s],
                "median_time_adjusted_variance": med(adj[s]),
                "mean_time_adjusted_variance": None if adj[s] is None else float(np.mean(adj[s])),
            }
            for s in cfg.schemes
        },
    }
    rows, trows = [], []
    for s in cfg.schemes:
        for i in range(mrf.n_nodes):
            r, c = mrf.coords(i)
            rows.append((r, c, s, None if raw[s] is None else raw[s][i]))
            trows.append((r, c, s, factor[s], None if adj[s] is None else adj[s][i]))

    out = Path(cfg.out)
    atomic_write_text(out / "model.json", _json_text(model_document(cfg, spec, obs, mseed)))
    atomic_write_text(out / "results.csv", _csv_text(("node_row", "node_col", "scheme", "raw_variance"), rows))
    atomic_write_text(out / "summary.json", _json_text(summary))
    atomic_write_text(out / "timing.csv", _csv_text(
        ("node_row", "node_col", "scheme", "time_factor", "time_adjusted_variance"), trows))
    atomic_write_text(out / "timing.json", _json_text(timing))
    return {"summary": summary, "timing": timing, "trials": trials, "raw": raw, "adjusted": adj}


# ---------------------------------------------------------------------------
# denoising


def denoise_data(cfg: ExperimentConfig):
    """Truth image, its corrupted copy and the model built on the corruption."""
    base = np.random.SeedSequence(cfg.seed)
    img_ss, noise_ss = base.spawn(2)
    img_seed = img_ss if cfg.image_seed is None else cfg.image_seed
    noise_seed = noise_ss if cfg.noise_seed is None else cfg.noise_seed
    truth = generate_patch_image(cfg.rows, cfg.cols, cfg.n_states, cfg.n_rects, img_seed)
    obs = corrupt_flip(truth, cfg.flip_prob, noise_seed, n_states=cfg.n_states)
    spec = cfg.potential_spec()
    return truth, obs, build_grid_mrf(cfg.rows, cfg.cols, cfg.n_states, spec, obs), spec


def equal_time_errors(trials: dict[str, list[TrialResult]], budget: float | None = None):
    """Each trial's error at the last sample whose cumulative time is within ``budget``.

    The default budget is the smallest per-scheme median of total kernel
    time, so every scheme is judged at a time the typical run of the
    fastest one has reached.  Trials with no sample inside the budget
    give ``nan``.
    """
    if budget is None:
        budget = min(float(np.median([r.kernel_time for r in rs])) for rs in trials.values())
    out = {}
    for s, rs in trials.items():
        vals = []
        for r in rs:
            idx = np.searchsorted(r.cumulative_time, budget, side="right") - 1
            vals.append(float(r.error_trace[idx]) if idx >= 0 else float("nan"))
        out[s] = np.array(vals)
    return budget, out


def run_denoise_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    truth, obs, mrf, spec = denoise_data(cfg)
    trials = run_trials(mrf, cfg, truth=truth, jobs=jobs)
    burn = cfg.effective_burn_in
    cps = _checkpoints(cfg.n_iters - burn, cfg.checkpoint_every)

    final = {s: np.array([r.error_trace[-1] for r in trials[s]]) for s in cfg.schemes}
    budget, at_budget = equal_time_errors(trials)

    def stats(v):
        ok = v[np.isfinite(v)]
        return {"median": float(np.median(ok)) if len(ok) else None,
                "std": float(np.std(ok)) if len(ok) else None,
                "n_missing": int(len(v) - len(ok))}

    summary = {
        **_metadata(cfg),
        "input_error": reconstruction_error(obs, truth),
        "alpha": float(spec.alpha) if spec.kind == "potts" else None,
        "final_error": {s: stats(final[s]) for s in cfg.schemes},
    }
    timing = {
        "time_units": cfg.time_units,
        "budget": budget,
        "error_at_budget": {s: stats(at_budget[s]) for s in cfg.schemes},
        "median_kernel_time": {s: float(np.median([r.kernel_time for r in trials[s]])) for s in cfg.schemes},
    }
    rows, trows = [], []
    for s in cfg.schemes:
        for r in trials[s]:
            for t in cps:
                rows.append((s, r.trial, burn + t, r.error_trace[t - 1]))
                trows.append((s, r.trial, burn + t, r.cumulative_time[t - 1]))

    out = Path(cfg.out)
    write_pgm(out / "truth.pgm", truth, cfg.n_states)
    write_pgm(out / "observed.pgm", obs, cfg.n_states)
    atomic_write_text(out / "model.json", _json_text(model_document(cfg, spec, obs, cfg.seed)))
    atomic_write_text(out / "results.csv", _csv_text(("scheme", "trial", "checkpoint_iter", "reconstruction_error"), rows))
    atomic_write_text(out / "summary.json", _json_text(summary))
    time_col = "cumulative_kernel_seconds" if cfg.time_units == "seconds" else "cumulative_kernel_iterations"
    atomic_write_text(out / "timing.csv", _csv_text(("scheme", "trial", "checkpoint_iter", time_col), trows))
    atomic_write_text(out / "timing.json", _json_text(timing))
    return {"summary": summary, "timing": timing, "trials": trials, "final": final,
            "at_budget": at_budget, "truth": truth, "observed": obs}


# ---------------------------------------------------------------------------
# diagnostics

DIAGNOSE_FLAGS = ("thm1_pass", "thm2_pass", "prop1_pass", "rate_bound_pass", "rate_contract_pass", "rate_order_pass")


def diagnose_seeds(master: int, n: int) -> list[int]:
    return [int(master) + i for i in range(n)]


def run_diagnostics(n_seeds: int, rows: int, cols: int, n_states: int, family: str, master_seed: int,
                    out, n_max: int = 60) -> list[dict]:
    """Property sweep over ``n_seeds`` random models, one CSV row per model seed."""
    if family not in oracle.FAMILIES:
        raise ValueError(f"family must be one of {oracle.FAMILIES}")
    report = oracle.property_sweep(diagnose_seeds(master_seed, n_seeds), rows, cols, n_states, family, n_max)
    header = list(report[0].keys())
    out = Path(out)
    atomic_write_text(out, _csv_text(header, ([row[h] for h in header] for row in report)))
    totals = {f: int(sum(bool(r[f]) for r in report)) for f in DIAGNOSE_FLAGS}
    atomic_write_text(out.with_suffix(".summary.json"), _json_text(
        {"n_models": len(report), "rows": rows, "cols": cols, "n_states": n_states, "family": family,
         "master_seed": master_seed, "seed_rule": "model seed i = master_seed + i", "passes": totals}))
    return report


def run_experiment(cfg: ExperimentConfig, jobs: int = 1):
    if cfg.experiment == "variance":
        return run_variance_experiment(cfg, jobs)
    if cfg.experiment == "denoise":
        return run_denoise_experiment(cfg, jobs)
    family = cfg.potential.get("kind", "potts")
    return run_diagnostics(cfg.n_trials, cfg.rows, cfg.cols, cfg.n_states, family, cfg.seed,
                           Path(cfg.out) / "results.csv", n_max=cfg.n_iters)
