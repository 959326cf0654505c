"""Experiment driver: JSON config in, CSV/JSON artifacts plus a manifest out.

Subcommands: gen, score-check, estimation, hessian, overlap, train, sample,
report.  Exit codes: 0 success, 2 validation/config error, 3 numerical
failure (divergence or non-finite states).  Every run writes manifest.json
listing the config hash, seed, library versions, wall time, and artifacts.
All CSVs are UTF-8 with \n line endings and round-trip-exact floats.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .calculus import (
    hessian_empirical,
    overlap_analysis,
    sample_noised,
)
from .errors import (
    ConfigParseError,
    MolrmogError,
    NoArtifactsFound,
    NumericalError,
    UnknownSubcommand,
    ValidationError,
)
from .model import build_model, forward_noise, sample_data
from .objective import (
    estimation_gap_experiment,
    make_theta_grid,
)
from .optimizer import GDConfig, contraction_check, gd_train, init_near
from .sampler import SamplerConfig, model_score_fn, reverse_sample, sample_quality
from .schedule import make_schedule
from .score import (
    LatentParams,
    SymmetricParams,
    ambient_log_density,
    ambient_score,
    from_model_subspace,
    latent_score,
    mixture_log_density,
)

SUBCOMMANDS = ("gen", "score-check", "estimation", "hessian", "overlap",
               "train", "sample", "report")


# ---------------------------------------------------------------------------
# config plumbing


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigParseError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"config is not valid JSON: {exc}") from exc


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigParseError(f"override must look like path.to.field=value: {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigParseError(f"override path {dotted!r} crosses a non-object field")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[keys[-1]] = value


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def resolve_threads(cfg: dict) -> int:
    env = os.environ.get("MOLRG_THREADS")
    if env is not None:
        return int(env)
    raw = cfg.get("threads", "auto")
    if raw == "auto" or raw is None:
        return os.cpu_count() or 1
    return int(raw)


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _schedule_from(cfg: dict):
    block = cfg.get("schedule", {})
    kind = block.get("kind", "constant_drift")
    rate = block.get("g0") if kind == "constant_drift" else block.get("beta")
    if rate is None:
        raise ConfigParseError(f"schedule block missing rate for kind {kind!r}")
    return make_schedule(kind, rate, block.get("t_min", 0.01), block.get("t_max", 1.0))


def _model_from(cfg: dict):
    if "model" not in cfg:
        raise ConfigParseError("config has no model block")
    return build_model(cfg["model"])


def _params_from(cfg_block: dict, model):
    """Trainable parameters: a tied two-mode block or a model subspace."""
    if "symmetric" in cfg_block:
        sym = cfg_block["symmetric"]
        return SymmetricParams(mu=np.asarray(sym["mu"], float),
                               U=np.asarray(sym["U"], float)), None
    sub = model.subspaces[int(cfg_block.get("subspace", 0))]
    return from_model_subspace(sub)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    n = int(cfg.get("gen", {}).get("n", 1000))
    data = sample_data(model, n, np.random.default_rng(seed))
    header = ["k", "l"] + [f"x_{i}" for i in range(model.D)]
    rows = ([int(k), int(l)] + list(x) for k, l, x in zip(data.k, data.l, data.x))
    write_csv(out / "dataset.csv", header, rows)
    return ["dataset.csv"]


def _fd_score_err(score_vals, logdens_fn, X, h):
    """Max relative error of analytic scores vs central FD of log density."""
    n, d = X.shape
    fd = np.empty_like(X)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd[:, j] = (logdens_fn(X + e) - logdens_fn(X - e)) / (2.0 * h)
    num = np.linalg.norm(score_vals - fd, axis=1)
    den = np.maximum(np.linalg.norm(fd, axis=1), 1e-12)
    return num / den


def cmd_score_check(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    sched = _schedule_from(cfg)
    block = cfg.get("score_check", {})
    n_points = int(block.get("n_points", 40))
    h = float(block.get("h", 1e-5))
    times = block.get("times", [sched.t_min, 0.5 * (sched.t_min + sched.t_max), sched.t_max])
    rng = np.random.default_rng(seed)
    rows = []
    max_err = 0.0
    for t in times:
        t = float(t)
        clean = sample_data(model, n_points, rng)
        X = forward_noise(clean.x, sched, t, rng)
        errs = _fd_score_err(
            ambient_score(model, sched, t, X),
            lambda P: np.asarray(ambient_log_density(model, sched, t, P)),
            X, h)
        for i, e in enumerate(errs):
            rows.append(["ambient", t, i, float(e)])
        max_err = max(max_err, float(np.max(errs)))
        for k, sub in enumerate(model.subspaces):
            params, pis = from_model_subspace(sub)
            Z = sample_noised(params, pis, sched, t, n_points, rng)
            errs = _fd_score_err(
                latent_score(params, pis, sched, t, Z),
                lambda P, pa=params, pi=pis, tt=t: np.asarray(
                    mixture_log_density(pa, pi, sched, tt, P)),
                Z, h)
            for i, e in enumerate(errs):
                rows.append([f"latent_k{k}", t, i, float(e)])
            max_err = max(max_err, float(np.max(errs)))
    write_csv(out / "score_fd_errors.csv", ["kind", "t", "index", "rel_err"], rows)
    write_json(out / "score_check_summary.json", {"max_rel_err": max_err, "h": h})
    return ["score_fd_errors.csv", "score_check_summary.json"]


def cmd_estimation(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    sched = _schedule_from(cfg)
    block = cfg.get("estimation", {})
    t = float(block.get("t", 0.5))
    truth_set = tuple(from_model_subspace(sub)[0] for sub in model.subspaces)
    grid = make_theta_grid(truth_set, float(block.get("half_width", 0.25)),
                           int(block.get("grid", 64)), seed)
    report = estimation_gap_experiment(
        model, grid,
        block.get("n_schedule", [128, 256, 512, 1024, 2048, 4096, 8192]),
        int(block.get("trials", 20)), sched, t,
        np.random.default_rng(seed), n_mc=int(block.get("n_mc", 1_000_000)))
    write_csv(out / "estimation.csv", ["n", "sup_gap", "stderr"], report.rows)
    write_json(out / "estimation_summary.json", {
        "slope": report.slope, "C1": report.C1, "sigma2": report.sigma2,
        "p": report.p, "pop_stderr_max": report.pop_stderr_max})
    return ["estimation.csv", "estimation_summary.json"]


def cmd_hessian(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    sched = _schedule_from(cfg)
    block = cfg.get("hessian", {})
    t = float(block.get("t", 0.5))
    params, pis = _params_from(block, model)
    rep = hessian_empirical(params, pis, sched, t, int(block.get("n_mc", 20000)),
                            np.random.default_rng(seed),
                            jac_mode=block.get("jac_mode", "exact"))
    evals = np.linalg.eigvalsh(rep.H)
    write_csv(out / "hessian_spectrum.csv", ["index", "eigenvalue"],
              [(i, float(v)) for i, v in enumerate(evals)])
    blocks = [
        ("mumu", rep.H_mumu), ("UU", rep.H_UU), ("muU", rep.H_muU),
    ]
    rows = []
    for name, B in blocks:
        lam = float(np.linalg.eigvalsh(B)[0]) if B.size and B.shape[0] == B.shape[1] else float("nan")
        rows.append((name, float(np.linalg.norm(B)), lam))
    write_csv(out / "blocks.csv", ["block", "fro_norm", "lambda_min"], rows)
    write_json(out / "hessian_summary.json", {
        "alpha_formula": rep.alpha_formula, "lambda_min_H": rep.lambda_min,
        "lambda_min_mumu": rep.lambda_min_mumu, "lambda_min_UU": rep.lambda_min_UU,
        "cross_norm": rep.cross_norm, "corr_r": rep.corr_r, "factor2": True})
    return ["hessian_spectrum.csv", "blocks.csv", "hessian_summary.json"]


def cmd_overlap(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    sched = _schedule_from(cfg)
    block = cfg.get("overlap", {})
    t = float(block.get("t", 0.5))
    params, pis = _params_from(block, model)
    if pis is None:
        lat, lpis = params.as_latent()
        X = sample_noised(lat, lpis, sched, t, int(block.get("n_mc", 20000)),
                          np.random.default_rng(seed))
    else:
        X = sample_noised(params, pis, sched, t, int(block.get("n_mc", 20000)),
                          np.random.default_rng(seed))
    rep = overlap_analysis(params, pis, sched, t, X,
                           mode=block.get("mode", "two_mode_sup"))
    write_json(out / "overlap_summary.json", {
        "mode": rep.mode, "xi_max": rep.xi_max, "eps_overlap": rep.eps_overlap,
        "eps_total": None if rep.eps_total is None else list(map(float, rep.eps_total)),
        "lambda_base": rep.lambda_base, "alpha_eff": rep.alpha_eff,
        "lambda_min_H": rep.lambda_min_H, "lambda_min_Hdiag": rep.lambda_min_Hdiag,
        "delta_norm": rep.delta_norm, "weyl_gap": rep.weyl_gap,
        "C": rep.constants.C, "S_mu": rep.constants.S_mu, "S_U": rep.constants.S_U})
    return ["overlap_summary.json"]


def cmd_train(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    sched = _schedule_from(cfg)
    block = cfg.get("train", {})
    t = float(block.get("t", 0.5))
    truth, pis = _params_from(block, model)
    rng = np.random.default_rng(seed)
    if pis is None:
        lat, lpis = truth.as_latent()
        X = sample_noised(lat, lpis, sched, t, int(block.get("n", 10000)), rng)
    else:
        X = sample_noised(truth, pis, sched, t, int(block.get("n", 10000)), rng)
    theta0 = init_near(truth, float(block.get("init_radius", 0.1)), rng)
    gd = GDConfig(eta=block.get("eta"), m_max=int(block.get("m_max", 500)),
                  tol=float(block.get("tol", 1e-10)))
    trace = gd_train(theta0, truth, pis, sched, t, X, gd)
    write_csv(out / "trace.csv", ["m", "loss", "grad_norm", "dist", "ratio"],
              [(r.m, r.loss, r.grad_norm, r.dist, r.ratio) for r in trace.rows])
    check = contraction_check(trace, trace.rho_bound, slack=0.05,
                              dist_floor=float(block.get("dist_floor", 0.0)))
    write_json(out / "train_summary.json", {
        "eta": trace.eta, "kappa": trace.kappa, "rho_bound": trace.rho_bound,
        "converged": trace.converged, "iterations": trace.rows[-1].m,
        "final_dist": trace.final_dist,
        "contraction_fraction": check.fraction,
        "first_violation": check.first_violation})
    return ["trace.csv", "train_summary.json"]


def _ambient_moment_init(model, sched, n, rng):
    """Draws from the Gaussian matching the ambient mixture at t_max."""
    s = sched.s(sched.t_max)
    gamma = sched.gamma(sched.t_max)
    from .model import component_weights

    mean = np.zeros(model.D)
    cov = np.zeros((model.D, model.D))
    for k, l, w in component_weights(model):
        sub = model.subspaces[k]
        comp = sub.components[l]
        m = s * (sub.A @ comp.mu)
        W = sub.A @ comp.U
        mean += w * m
        cov += w * ((s * s) * W @ W.T + (gamma * gamma) * np.eye(model.D) + np.outer(m, m))
    cov -= np.outer(mean, mean)
    cf = np.linalg.cholesky(cov + 1e-12 * np.eye(model.D))
    return mean + rng.standard_normal((n, model.D)) @ cf.T


def cmd_sample(cfg, seed, out: Path) -> list[str]:
    model = _model_from(cfg)
    block = cfg.get("sampler", {})
    # a variance-preserving horizon makes the Gaussian prior exact; allow the
    # sampler to use its own schedule when the global one keeps mass bimodal at T
    sched = _schedule_from(block if "schedule" in block else cfg)
    scfg = SamplerConfig(steps=int(block.get("steps", 500)),
                         n=int(block.get("n", 10000)), seed=seed)
    rng = np.random.default_rng(seed + 1)
    init = _ambient_moment_init(model, sched, scfg.n, rng)
    samples = reverse_sample(model_score_fn(model, sched), sched, scfg, init=init)
    write_csv(out / "samples.csv", [f"x_{i}" for i in range(model.D)], samples)
    rep = sample_quality(samples, model, sched, sched.t_min)
    write_json(out / "quality.json", {
        "components": [
            {"k": r.k, "l": r.l, "weight_true": r.weight_true,
             "weight_emp": r.weight_emp, "mean_err": r.mean_err,
             "cov_err": r.cov_err}
            for r in rep.rows],
        "max_weight_err": rep.max_weight_err})
    return ["samples.csv", "quality.json"]


def cmd_report(cfg, seed, out: Path) -> list[str]:
    lines = ["# run report", ""]
    found = False

    def load(name):
        p = out / name
        if p.is_file():
            return json.loads(p.read_text(encoding="utf-8"))
        return None

    sc = load("score_check_summary.json")
    if sc is not None:
        found = True
        ok = sc["max_rel_err"] <= 1e-5
        lines.append(f"- score FD check: max rel err {sc['max_rel_err']:.3e} "
                     f"(threshold 1e-5): {'PASS' if ok else 'FAIL'}")
    est = load("estimation_summary.json")
    if est is not None:
        found = True
        ok = abs(est["slope"] + 0.5) <= 0.1
        lines.append(f"- estimation slope {est['slope']:.3f} vs -0.5 +/- 0.1: "
                     f"{'PASS' if ok else 'FAIL'}")
    hes = load("hessian_summary.json")
    if hes is not None:
        found = True
        alpha = hes.get("alpha_formula")
        if alpha:
            ok = hes["lambda_min_H"] >= 0.8 * alpha
            lines.append(f"- lambda_min(H) {hes['lambda_min_H']:.4f} vs 0.8*alpha "
                         f"{0.8 * alpha:.4f}: {'PASS' if ok else 'FAIL'}")
        else:
            lines.append(f"- lambda_min(H) {hes['lambda_min_H']:.4f} (no closed-form alpha)")
    ov = load("overlap_summary.json")
    if ov is not None:
        found = True
        ok = ov["weyl_gap"] >= -1e-8
        lines.append(f"- Weyl gap {ov['weyl_gap']:.3e} >= 0: {'PASS' if ok else 'FAIL'}")
    tr = load("train_summary.json")
    if tr is not None:
        found = True
        frac = tr.get("contraction_fraction", 0.0)
        ok = frac >= 0.95
        lines.append(f"- contraction fraction {frac:.3f} vs rho+0.05 "
                     f"(rho {tr['rho_bound']:.3f}): {'PASS' if ok else 'FAIL'}")
    qu = load("quality.json")
    if qu is not None:
        found = True
        ok = qu["max_weight_err"] <= 0.01
        lines.append(f"- sampler max weight err {qu['max_weight_err']:.4f} "
                     f"vs 0.01: {'PASS' if ok else 'FAIL'}")
    if not found:
        raise NoArtifactsFound(f"no artifact summaries under {out}")
    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ["report.md"]


DISPATCH = {
    "gen": cmd_gen,
    "score-check": cmd_score_check,
    "estimation": cmd_estimation,
    "hessian": cmd_hessian,
    "overlap": cmd_overlap,
    "train": cmd_train,
    "sample": cmd_sample,
    "report": cmd_report,
}


def run(subcommand: str, config_path: str | None, overrides=(), seed=None,
        out_dir=None) -> int:
    """Programmatic entry point mirroring the command line; returns exit code."""
    start = time.time()
    try:
        if subcommand not in DISPATCH:
            raise UnknownSubcommand(f"unknown subcommand {subcommand!r}")
        cfg = load_config(config_path) if config_path else {}
        for assignment in overrides:
            apply_override(cfg, assignment)
        if seed is None:
            seed = int(cfg.get("seed", 0))
        out = Path(out_dir if out_dir is not None else cfg.get("out_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "subcommand": subcommand,
            "config_hash": config_hash(cfg),
            "seed": seed,
            "threads": resolve_threads(cfg),
            "versions": {
                "python": sys.version.split()[0],
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "molrmog": __version__,
            },
        }
        try:
            artifacts = DISPATCH[subcommand](cfg, seed, out)
            manifest["artifacts"] = artifacts
            manifest["status"] = "ok"
            code = 0
        except NumericalError as exc:
            manifest["artifacts"] = []
            manifest["status"] = "numerical-failure"
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            code = 3
        manifest["wall_time_s"] = time.time() - start
        write_json(out / "manifest.json", manifest)
        if code != 0:
            print(manifest["error"], file=sys.stderr)
        return code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="molrmog",
        description="mixture-of-low-rank-MoG diffusion laboratory")
    parser.add_argument("subcommand", help=f"one of {', '.join(SUBCOMMANDS)}")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="PATH=VALUE", help="dot-path config override")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    return run(args.subcommand, args.config, args.overrides, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
