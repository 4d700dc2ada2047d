"""Experiment runners behind the CLI: simulation ensembles, coupled
refinement studies, transform reports, and stationary-measure checks.

Each runner is a pure function of a resolved configuration.  Per-path
randomness derives from (master seed, experiment id, path index), so runs
are reproducible regardless of scheduling; ensembles advance whole seed
batches in lockstep, and the optional worker pool splits seed ranges with a
fixed reduction order.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from scipy import stats

from .config import RunConfig, make_drift, make_model, make_potential, write_manifest
from .errors import ConfigurationError
from .integrate import (
    BrownianIncrements,
    _dyadic_indices,
    a_profile,
    evolve_batch,
    simulate_path,
    write_diagnostics_csv,
    write_path_csv,
)
from .mc import Z95
from .rng import StreamLog, substream
from .spectral import sample_gamma, synth
from .zvonkin import (
    ResolventEstimator,
    _resolvent_batch,
    build_transform,
    c_lambda,
)

__all__ = [
    "run_simulate",
    "run_uniqueness",
    "run_transform",
    "run_resolvent",
    "run_invariants",
    "uniqueness_ensemble",
    "girsanov_weights_batch",
    "sign_test_pvalue",
]


def _write_rows(dest, header, rows):
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def girsanov_weights_batch(states, dw, h, B) -> np.ndarray:
    """Drift-removal weights for a batch of trajectories.

    ``states``: (S, n+1, N) (pre-step states used), ``dw``: (S, n, N).
    """
    bvals = B.eval(states[:, :-1])
    exponent = -np.sum(bvals * dw, axis=(1, 2)) - 0.5 * np.sum(bvals**2, axis=(1, 2)) * h
    return np.exp(exponent)


def sign_test_pvalue(wins: int, total: int) -> float:
    """One-sided binomial sign test against a fair coin."""
    return float(stats.binomtest(wins, total, p=0.5, alternative="greater").pvalue)


def _ensemble_inputs(model, T, level_max, n_seeds, master_seed, experiment_id):
    z = np.empty((n_seeds, model.n_modes))
    dw = np.empty((n_seeds, 1 << level_max, model.n_modes))
    h = T / (1 << level_max)
    for s in range(n_seeds):
        rng = substream(master_seed, experiment_id, s)
        z[s] = sample_gamma(model, rng)
        dw[s] = math.sqrt(h) * rng.standard_normal((1 << level_max, model.n_modes))
    return z, dw


def _coarsen(dw, level_from, level_to):
    s, n, m = dw.shape
    fac = 1 << (level_from - level_to)
    return dw.reshape(s, n // fac, fac, m).sum(axis=2)


def _uniq_chunk(args):
    (model, V, B, T, levels, seeds, master_seed, scheme_pair, alpha_pair) = args
    n_fine = 1 << max(levels)
    z = np.empty((len(seeds), model.n_modes))
    dwf = np.empty((len(seeds), n_fine, model.n_modes))
    for j, s in enumerate(seeds):
        rng = substream(master_seed, "uniqueness", s)
        z[j] = sample_gamma(model, rng)
        dwf[j] = math.sqrt(T / n_fine) * rng.standard_normal((n_fine, model.n_modes))
    trajs = {}
    for lv in levels:
        dw = _coarsen(dwf, max(levels), lv)
        trajs[lv] = evolve_batch(model, V, B, z, dw, T / (1 << lv), scheme_pair[0], alpha_pair[0])
    sup = {}
    for la, lb in zip(levels[:-1], levels[1:]):
        stride = 1 << (lb - la)
        d = trajs[la] - trajs[lb][:, ::stride]
        sup[(la, lb)] = np.sqrt(np.sum(d * d, axis=-1)).max(axis=1)
    cross = None
    if scheme_pair[1] != scheme_pair[0] or alpha_pair[1] != alpha_pair[0]:
        finest = levels[-1]
        dw = _coarsen(dwf, max(levels), finest)
        other = evolve_batch(
            model, V, B, z, dw, T / (1 << finest), scheme_pair[1], alpha_pair[1]
        )
        d = trajs[finest] - other
        cross = np.sqrt(np.sum(d * d, axis=-1)).max(axis=1)
    la, lb = levels[-2], levels[-1]
    return sup, cross, trajs[la], trajs[lb][:, :: 1 << (lb - la)]


def uniqueness_ensemble(
    model,
    V,
    B,
    T,
    levels,
    n_seeds,
    master_seed,
    scheme_pair=("split-implicit", "split-implicit"),
    alpha_pair=(None, None),
    transform=None,
    a_nodes: int = 9,
    workers: int = 1,
):
    """Coupled refinement study over an ensemble of seeds.

    Returns a dict with per-seed sup-difference arrays per consecutive level
    pair, the optional cross-scheme array at the finest level, and the final
    ratio-functional values on the finest pair when a transform is given.
    """
    levels = sorted(int(l) for l in levels)
    seeds = list(range(n_seeds))
    chunks = [seeds] if workers <= 1 else [
        seeds[i::workers] for i in range(workers)
    ]
    args = [
        (model, V, B, T, levels, chunk, master_seed, scheme_pair, alpha_pair)
        for chunk in chunks if chunk
    ]
    if workers <= 1:
        results = [_uniq_chunk(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_uniq_chunk, args))
    # stitch chunk results back into seed order
    order = np.argsort(np.concatenate([np.array(c) for c in chunks if c]))
    sup = {}
    for la, lb in zip(levels[:-1], levels[1:]):
        sup[(la, lb)] = np.concatenate([r[0][(la, lb)] for r in results])[order]
    cross = None
    if results[0][1] is not None:
        cross = np.concatenate([r[1] for r in results])[order]
    out = {"levels": levels, "sup": sup, "cross": cross, "a_final": None}
    if transform is not None:
        xa = np.concatenate([r[2] for r in results])[order]
        xb = np.concatenate([r[3] for r in results])[order]
        n_common = xa.shape[1] - 1
        idx = _dyadic_indices(n_common, a_nodes)
        ts = np.linspace(0.0, T, n_common + 1)[idx]
        a_vals = a_profile(ts, xa[:, idx], xb[:, idx], transform, V)
        out["a_final"] = a_vals[:, -1]
    return out


# ---------------------------------------------------------------------------
# CLI-facing runners


def run_simulate(cfg: RunConfig):
    model = make_model(cfg)
    V = make_potential(cfg, model)
    B = make_drift(cfg, model)
    T = cfg.get_float("dynamics", "t_final", positive=True)
    n_steps = 1 << cfg.get_int("dynamics", "n_steps_log2", minimum=0)
    scheme = cfg.get("dynamics", "scheme")
    alpha = float(cfg.get("dynamics", "alpha")) if cfg.get("dynamics", "alpha") else None
    ensemble = cfg.get_int("experiment", "ensemble", minimum=1)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    log = StreamLog()
    files = []
    level = n_steps.bit_length() - 1
    for i in range(ensemble):
        rng = log.derive(cfg.seed, "simulate", i)
        z = sample_gamma(model, rng)
        noise = BrownianIncrements.generate(model.n_modes, T, level, rng)
        path = simulate_path(model, V, B, z, T, n_steps, scheme, noise, alpha)
        pfile = out / f"path_{i}.csv"
        dfile = out / f"diagnostics_{i}.csv"
        write_path_csv(path, pfile)
        write_diagnostics_csv(path, dfile)
        files += [pfile, dfile]
    manifest = write_manifest(cfg, out, files, {"streams": log.entries()})
    return files + [manifest]


def run_uniqueness(cfg: RunConfig):
    model = make_model(cfg)
    V = make_potential(cfg, model)
    B = make_drift(cfg, model)
    T = cfg.get_float("dynamics", "t_final", positive=True)
    levels = cfg.get_levels()
    ensemble = cfg.get_int("experiment", "ensemble", minimum=1)
    scheme = cfg.get("dynamics", "scheme")
    transform = None
    if cfg.get_bool("experiment", "transform_enabled") and B.b_inf > 0:
        lam_raw = cfg.get("experiment", "lambda_override")
        transform = build_transform(
            model,
            V,
            B,
            K=cfg.get_int("experiment", "series_depth", minimum=0),
            n_paths=cfg.get_int("experiment", "resolvent_paths", minimum=2),
            steps_per_draw=cfg.get_int("experiment", "steps_per_draw", minimum=1),
            seed=cfg.seed,
            lam=float(lam_raw) if lam_raw else None,
        )
    study = uniqueness_ensemble(
        model,
        V,
        B,
        T,
        levels,
        ensemble,
        cfg.seed,
        scheme_pair=(scheme, scheme),
        transform=transform,
        a_nodes=cfg.get_int("experiment", "a_nodes", minimum=2),
        workers=cfg.workers,
    )
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for (la, lb), vals in study["sup"].items():
        for s, v in enumerate(vals):
            a_val = study["a_final"][s] if study["a_final"] is not None and lb == levels[-1] else float("nan")
            rows.append([str(s), f"2^{la} vs 2^{lb}", v, a_val])
    per_seed = out / "divergence.csv"
    _write_rows(per_seed, ["seed", "pair", "sup_diff", "a_final"], rows)
    medians = {
        f"2^{la} vs 2^{lb}": float(np.median(vals)) for (la, lb), vals in study["sup"].items()
    }
    pair_keys = list(study["sup"].keys())
    sign_tests = {}
    for p1, p2 in zip(pair_keys[:-1], pair_keys[1:]):
        wins = int(np.sum(study["sup"][p2] < study["sup"][p1]))
        sign_tests[f"{p1}->{p2}"] = {
            "wins": wins,
            "total": ensemble,
            "pvalue": sign_test_pvalue(wins, ensemble),
        }
    summary = {
        "median_sup_diff": medians,
        "sign_tests": sign_tests,
        "a_final_max": (
            None if study["a_final"] is None else float(np.max(study["a_final"]))
        ),
        "a_final_all_finite": (
            None if study["a_final"] is None else bool(np.all(np.isfinite(study["a_final"])))
        ),
    }
    sfile = out / "summary.json"
    sfile.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = write_manifest(cfg, out, [per_seed, sfile])
    return summary, [per_seed, sfile, manifest]


def run_transform(cfg: RunConfig):
    model = make_model(cfg)
    V = make_potential(cfg, model)
    B = make_drift(cfg, model)
    if B.b_inf <= 0:
        raise ConfigurationError("transform experiment needs a nonzero drift")
    lam_raw = cfg.get("experiment", "lambda_override")
    tr = build_transform(
        model,
        V,
        B,
        K=cfg.get_int("experiment", "series_depth", minimum=0),
        n_paths=cfg.get_int("experiment", "resolvent_paths", minimum=2),
        steps_per_draw=cfg.get_int("experiment", "steps_per_draw", minimum=1),
        seed=cfg.seed,
        lam=float(lam_raw) if lam_raw else None,
    )
    report = tr.summary(n_pairs=50, rng=substream(cfg.seed, "transform-pairs"))
    # bi-Lipschitz spot check and inverse residual on a handful of points
    rng = substream(cfg.seed, "transform-check")
    xs = sample_gamma(model, rng, size=12)
    ys = sample_gamma(model, rng, size=12)
    phx, phy = tr.phi_apply(xs), tr.phi_apply(ys)
    sep = np.sqrt(np.sum((xs - ys) ** 2, axis=-1))
    ratio = np.sqrt(np.sum((phx - phy) ** 2, axis=-1)) / sep
    inv_res = float(np.max(np.abs(tr.phi_inverse(phx) - xs)))
    report["phi_ratio_min"] = float(ratio.min())
    report["phi_ratio_max"] = float(ratio.max())
    report["phi_inverse_residual"] = inv_res
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rfile = out / "transform.json"
    rfile.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = write_manifest(cfg, out, [rfile])
    return report, [rfile, manifest]


def run_resolvent(cfg: RunConfig):
    model = make_model(cfg)
    V = make_potential(cfg, model)
    lam_raw = cfg.get("experiment", "lambda_override")
    lambdas = [float(lam_raw)] if lam_raw else [4.0, 16.0]
    n = max(256, cfg.get_int("experiment", "resolvent_paths", minimum=2))
    rows = []
    report = {"lambdas": lambdas, "checks": []}
    rng = substream(cfg.seed, "resolvent-pairs")
    xs = sample_gamma(model, rng, size=100)
    ys = sample_gamma(model, rng, size=100)
    pts = np.vstack([xs, ys])
    sign_obs = lambda x: np.sign(x[..., 0])
    for lam in lambdas:
        est = ResolventEstimator(
            model, V, lam, n_paths=n,
            steps_per_draw=cfg.get_int("experiment", "steps_per_draw", minimum=1) * 2,
            seed=cfg.seed,
        )
        mass_vals, _ = _resolvent_batch(est, lambda x: np.ones(x.shape[:-1]), np.zeros((1, model.n_modes)), n, "mass")
        mass_err = abs(float(mass_vals[0]) - 1.0 / lam)
        vals, samples = _resolvent_batch(est, sign_obs, pts, n, "lip")
        diff_samples = samples[:100] - samples[100:]
        diffs = np.abs(vals[:100] - vals[100:])
        cis = Z95 * diff_samples.std(axis=-1, ddof=1) / math.sqrt(n)
        sep = np.sqrt(np.sum((xs - ys) ** 2, axis=-1))
        bound = math.sqrt(math.pi / lam)
        margin = (diffs - 3.0 * cis) / sep - bound
        passed = bool(np.all(margin <= 0.0) and mass_err <= 1e-12)
        report["checks"].append(
            {
                "lambda": lam,
                "mass_error": mass_err,
                "lipschitz_bound": bound,
                "max_sampled_ratio": float(np.max(diffs / sep)),
                "pass": passed,
            }
        )
        rows.append([f"{lam}", mass_err, bound, float(np.max(diffs / sep)), "pass" if passed else "fail"])
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rfile = out / "resolvent.csv"
    _write_rows(rfile, ["lambda", "mass_error", "lipschitz_bound", "max_sampled_ratio", "status"], rows)
    manifest = write_manifest(cfg, out, [rfile])
    report["pass"] = all(c["pass"] for c in report["checks"])
    return report, [rfile, manifest]


def run_invariants(cfg: RunConfig):
    """Stationary-variance report for the configured potential.

    The analytic oracle covers the quadratic case: per-mode variance
    1 / (2 (a_k + omega)).
    """
    model = make_model(cfg)
    V = make_potential(cfg, model)
    B = make_drift(cfg, model)
    T = max(cfg.get_float("dynamics", "t_final", positive=True), 16.0)
    level = max(cfg.get_int("dynamics", "n_steps_log2", minimum=0), 11)
    ensemble = max(cfg.get_int("experiment", "ensemble", minimum=1), 256)
    z, dw = _ensemble_inputs(model, T, level, ensemble, cfg.seed, "invariants")
    traj = evolve_batch(model, V, B, z, dw, T / (1 << level), cfg.get("dynamics", "scheme"), None)
    burn = traj.shape[1] // 2
    samples = traj[:, burn:, :].reshape(-1, model.n_modes)
    emp = samples.var(axis=0)
    rows = []
    omega = getattr(V, "omega_shift", 0.0)
    analytic_known = cfg.get("potential", "kind") in ("zero", "quadratic")
    for k in range(model.n_modes):
        target = 1.0 / (2.0 * (model.a[k] + omega)) if analytic_known else float("nan")
        rel = abs(emp[k] - target) / target if analytic_known else float("nan")
        rows.append([str(k + 1), emp[k], target, rel])
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rfile = out / "invariants.csv"
    _write_rows(rfile, ["mode", "empirical_var", "analytic_var", "rel_error"], rows)
    manifest = write_manifest(cfg, out, [rfile])
    return rows, [rfile, manifest]
