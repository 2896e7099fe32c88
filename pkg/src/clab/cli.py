"""Command line entry point: ``clab env|walk|corrector|verify``.

Options come from built-in defaults, then an optional ``--config`` JSON file,
then explicit flags.  Every run ends by atomically writing
``run_manifest.json`` into the output directory.

Exit codes: 0 success, 1 usage or I/O error, 2 a verification check failed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from clab import __version__
from clab.analysis.bounds import (
    exit_tail_check,
    exit_tail_stability,
    fit_then_validate,
    localization_bounds,
)
from clab.analysis.events import scan_lrp_events, trap_probability_mc
from clab.analysis.kernels import check_hk_bounds, killed_kernel_check
from clab.analysis.qip import qip_stats
from clab.analysis.report import BoundCheck, VerificationReport
from clab.corrector import SolverError, covariance_sigma, solve_corrector, sublinearity_profile
from clab.env import (
    EnvError,
    TrapSpec,
    constant,
    default_schedule,
    load_environment,
    moment_report,
    plant_long_edge,
    plant_trap,
    sample_iid_nn,
    sample_lrp,
    sample_stable_like,
    sample_trap,
    save_environment,
)
from clab.lattice import Geometry
from clab.walk import exit_times, jump_counts, mean_exit_time_exact, run_walk

SAMPLERS = ("constant", "iid-nn", "lrp", "stable-like", "trap", "planted-trap",
            "planted-long-edge")
SUITES = ("bounds", "qip", "exit", "heat", "time-change", "trap-mc", "events")

DEFAULTS = {
    "out": ".", "d": 2, "side": 16, "value": 1.0, "dist": "uniform:1,2", "s": None,
    "beta": 1.0, "rho": 0.5, "r_max": 8.0, "p": 1.5, "q": 1.5, "p_prime": 1.9,
    "q_prime": 1.9, "k_max": 3, "k": 3, "x": None, "y": None, "moments": "2,2",
    "kind": "Y", "x0": 0, "horizon": 1000.0, "trajectories": 1, "tol": 1e-10,
    "max_iter": None, "radii": None, "deltas": "0.1", "suite": "bounds",
    "n": 10_000, "times": "0.5,1", "R": None, "kappa": "0.25,0.5,1", "t": 10_000.0,
    "eps": 1.0, "trials": 100_000, "gamma": 0.9, "fast_reduce": False,
}


class UsageError(Exception):
    pass


def _ints(text) -> list:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text) -> list:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _site(text, g: Geometry) -> int:
    if text is None:
        raise UsageError("site argument missing")
    vals = _ints(text)
    return g.site(vals[0] if len(vals) == 1 else vals)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--seed", type=int, help="master seed (required)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--fast-reduce", dest="fast_reduce", action="store_true",
                        help="allow nondeterministic summation order")

    p = argparse.ArgumentParser(prog="clab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"clab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("env", parents=[common], argument_default=S,
                       help="sample an environment and its moment report")
    e.add_argument("--sampler", choices=SAMPLERS)
    e.add_argument("--d", type=int)
    e.add_argument("--side", type=int)
    e.add_argument("--value", type=float, help="constant conductance")
    e.add_argument("--dist", help="marginal, e.g. uniform:1,2")
    e.add_argument("--s", type=float, help="decay exponent")
    e.add_argument("--beta", type=float)
    e.add_argument("--rho", type=float)
    e.add_argument("--r-max", dest="r_max", type=float)
    for name in ("p", "q", "p-prime", "q-prime"):
        e.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    e.add_argument("--k-max", dest="k_max", type=int)
    e.add_argument("--k", type=int, help="planted trap scale index")
    e.add_argument("--x", help="site index or comma coordinates")
    e.add_argument("--y", help="site index or comma coordinates")
    e.add_argument("--moments", help="p,q for the moment report")
    e.add_argument("--name", help="file name of the environment header")

    w = sub.add_parser("walk", parents=[common], argument_default=S,
                       help="simulate trajectories")
    w.add_argument("--env")
    w.add_argument("--kind", choices=("Z", "X", "Y"))
    w.add_argument("--x0")
    w.add_argument("--horizon", type=float)
    w.add_argument("--trajectories", type=int)

    c = sub.add_parser("corrector", parents=[common], argument_default=S,
                       help="solve the corrector and report sigma")
    c.add_argument("--env")
    c.add_argument("--tol", type=float)
    c.add_argument("--max-iter", dest="max_iter", type=int)
    c.add_argument("--radii", help="comma list for the sublinearity profile")
    c.add_argument("--deltas", help="comma list of thresholds")

    v = sub.add_parser("verify", parents=[common], argument_default=S,
                       help="run a verification suite")
    v.add_argument("--env")
    v.add_argument("--suite", choices=SUITES)
    v.add_argument("--n", type=int)
    v.add_argument("--trajectories", type=int)
    v.add_argument("--times")
    v.add_argument("--R", help="comma list of radii")
    v.add_argument("--kappa", help="comma list")
    v.add_argument("--t", type=float)
    v.add_argument("--eps", type=float)
    v.add_argument("--trials", type=int)
    v.add_argument("--gamma", type=float)
    v.add_argument("--s", type=float)
    for name in ("p", "q", "p-prime", "q-prime"):
        v.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    v.add_argument("--k-max", dest="k_max", type=int)
    v.add_argument("--k", type=int)
    v.add_argument("--d", type=int)
    return p


def resolve(argv) -> dict:
    ns = vars(build_parser().parse_args(argv))
    cfg = dict(DEFAULTS)
    if "config" in ns:
        try:
            cfg.update(json.loads(Path(ns["config"]).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    cfg.update(ns)
    if cfg.get("seed") is None:
        raise UsageError("--seed is required")
    return cfg


# -- commands ------------------------------------------------------------------


def _spec(cfg) -> TrapSpec:
    return TrapSpec(int(cfg["d"]), cfg["p"], cfg["q"], cfg["p_prime"], cfg["q_prime"],
                    default_schedule(int(cfg["k_max"])))


def cmd_env(cfg, out: Path) -> dict:
    sampler = cfg.get("sampler")
    if sampler is None:
        raise UsageError("--sampler is required")
    g = Geometry(int(cfg["d"]), int(cfg["side"]))
    seed = int(cfg["seed"])
    extra = {}
    if sampler == "constant":
        env = constant(g, cfg["value"])
    elif sampler == "iid-nn":
        env = sample_iid_nn(cfg["dist"], g, seed)
    elif sampler == "lrp":
        if cfg["s"] is None:
            raise UsageError("lrp needs --s")
        env = sample_lrp(cfg["s"], g, seed, cfg["beta"])
    elif sampler == "stable-like":
        if cfg["s"] is None:
            raise UsageError("stable-like needs --s")
        env = sample_stable_like(cfg["s"], g, seed, cfg["rho"], cfg["r_max"])
    elif sampler == "trap":
        env, trace = sample_trap(_spec(cfg), g, seed)
        extra = {"flagged": int(trace.flag.sum()), "conflicts": trace.conflicts}
    elif sampler == "planted-trap":
        env = plant_trap(_spec(cfg), int(cfg["k"]), _site(cfg["x"] or 0, g), g)
    else:
        env = plant_long_edge(constant(g), _site(cfg["x"], g), _site(cfg["y"], g))
    name = cfg.get("name") or "env.json"
    head, edges = save_environment(env, out / name)
    p, q = _floats(cfg["moments"])
    try:
        moments = moment_report(env, p, q).as_dict()
    except EnvError as exc:
        moments = {"error": str(exc)}
    (out / "moments.json").write_text(json.dumps(moments, indent=2) + "\n")
    return {"outputs": [head, edges, out / "moments.json"], "summary": {
        "n_edges": env.n_edges, **extra}}


def _load(cfg) -> tuple:
    path = cfg.get("env")
    if path is None:
        raise UsageError("--env is required")
    try:
        return load_environment(path), Path(path)
    except OSError as exc:
        raise UsageError(f"cannot read environment: {exc}") from exc


def cmd_walk(cfg, out: Path) -> dict:
    env, src = _load(cfg)
    g = env.geometry
    x0 = _site(cfg["x0"], g)
    outputs, records = [], []
    for i in range(int(cfg["trajectories"])):
        tr = run_walk(env, cfg["kind"], x0, cfg["horizon"], int(cfg["seed"]), stream_id=i)
        path = out / f"trajectory_{i}.csv"
        tr.to_csv(path)
        outputs.append(path)
        rec = {"stream": i, "jumps": tr.n_jumps(), "end_site": int(tr.jump_sites[-1]),
               "end_position": tr.positions[-1].tolist()}
        if cfg["kind"] != "Z":
            rec["jumps_per_time"] = tr.n_jumps() / tr.horizon
        records.append(rec)
    stats = out / "walk_stats.json"
    stats.write_text(json.dumps(records, indent=1) + "\n")
    return {"inputs": [src], "outputs": outputs + [stats], "summary": {"trajectories": len(records)}}


def cmd_corrector(cfg, out: Path) -> dict:
    env, src = _load(cfg)
    cf = solve_corrector(env, cfg["tol"], cfg["max_iter"])
    S = covariance_sigma(env, cf)
    chi_path = out / "chi.csv"
    cf.to_csv(chi_path)
    summary = {"sigma": S.tolist(), **cf.summary()}
    if cfg["radii"]:
        summary["profile"] = sublinearity_profile(env, cf, _ints(cfg["radii"]),
                                                  _floats(cfg["deltas"])).as_dict()
    sig = out / "sigma.json"
    sig.write_text(json.dumps(summary, indent=1) + "\n")
    return {"inputs": [src], "outputs": [chi_path, sig], "summary": {"sigma": S.tolist()}}


def _radii(cfg, g) -> list:
    if cfg["R"]:
        return _ints(cfg["R"])
    return [R for R in (4, 8, 16) if 4 * R < g.half]


def suite_checks(cfg, env) -> list:
    suite = cfg["suite"]
    seed = int(cfg["seed"])
    if suite == "trap-mc":
        return [trap_probability_mc(_spec(cfg), int(cfg["k"]), int(cfg["trials"]), seed)]
    g = env.geometry
    if suite == "bounds":
        out = []
        for R in _radii(cfg, g):
            ks = [k for k in _floats(cfg["kappa"]) if k * R >= 1]
            for pair in localization_bounds(env, R, ks):
                out.extend(pair)
        return out
    if suite == "qip":
        S = covariance_sigma(env, solve_corrector(env, cfg["tol"]))
        q = qip_stats(env, int(cfg["n"]), int(cfg["trajectories"]), _floats(cfg["times"]),
                      S, seed)
        info = q.summary()
        info.pop("cov")
        return [BoundCheck("qip_ks", [-float(q.ks_p.min())], [-0.01], info=info),
                BoundCheck("qip_cov", [q.cov_rel_error()], [0.1]),
                BoundCheck("qip_offdiag", [q.max_offdiag()], [0.05])]
    if suite == "exit":
        n_traj = int(cfg["trajectories"])
        tails, out = [], []
        for R in _radii(cfg, g):
            tau = exit_times(env, 0, R, seed, n_traj)
            ref = mean_exit_time_exact(env, 0, R)
            se = tau.std(ddof=1) / np.sqrt(n_traj)
            out.append(BoundCheck(f"exit_mean:R={R}", [abs(tau.mean() - ref)], [3 * se],
                                  info={"mc": tau.mean(), "exact": ref}))
            tails.append(exit_tail_check(tau, R, np.array([1, 2, 4, 8, 16, 32, 64]) * R**2 / 64))
        return out + tails + [exit_tail_stability(tails)]
    if suite == "heat":
        Rs = _radii(cfg, g) if cfg["R"] else [8, 12]
        fr = [1 / 16, 1 / 8, 1 / 4, 1 / 2, 1]
        a, b = (killed_kernel_check(env, R, fr, cfg["eps"]) for R in Rs[:2])
        res = check_hk_bounds(env, Rs[0], _floats(cfg["kappa"])[-1],
                              [f * Rs[0] ** 2 for f in fr], cfg["eps"])
        return [a, b, fit_then_validate(a, b), res["diag"], res["offdiag"], res["monotone"]]
    if suite == "time-change":
        n_traj = int(cfg["trajectories"])
        N = jump_counts(env, 0, cfg["t"], seed, n_traj)
        target = float(env.pi.sum() / env.nu.sum())
        ratio = N.mean() / cfg["t"]
        return [BoundCheck("time_change", [abs(ratio / target - 1)], [0.02],
                           info={"ratio": ratio, "target": target, "trajectories": n_traj})]
    if suite == "events":
        if cfg["s"] is None:
            raise UsageError("events needs --s")
        sc = scan_lrp_events(env, g, int(cfg["n"]), cfg["gamma"], cfg["s"])
        return [BoundCheck("lrp_events", [0.0], [0.0], info=sc.as_dict())]
    raise UsageError(f"unknown suite {suite!r}")


def cmd_verify(cfg, out: Path) -> dict:
    env, inputs = None, []
    if cfg["suite"] != "trap-mc":
        env, src = _load(cfg)
        inputs = [src]
    rep = VerificationReport(suite_checks(cfg, env))
    js, cs = out / "report.json", out / "summary.csv"
    rep.to_json(js)
    rep.to_csv(cs)
    return {"inputs": inputs, "outputs": [js, cs], "failing": rep.failing(),
            "summary": {"checks": len(rep.checks), "passed": rep.passed}}


COMMANDS = {"env": cmd_env, "walk": cmd_walk, "corrector": cmd_corrector, "verify": cmd_verify}


# -- manifest --------------------------------------------------------------------


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, cfg: dict, result: dict, elapsed: float) -> Path:
    def digests(paths):
        return {str(p): _digest(p) for p in paths}

    inputs = [Path(p) for p in result.get("inputs", [])]
    inputs += [q for q in (p.with_name(p.name + ".edges.csv") for p in inputs) if q.exists()]
    manifest = {
        "version": __version__,
        "config": {k: v for k, v in sorted(cfg.items())},
        "threads": int(os.environ.get("CLAB_THREADS", "1")),
        "inputs": digests(inputs),
        "outputs": digests(result.get("outputs", [])),
        "summary": result.get("summary", {}),
        "seconds": round(elapsed, 3),
    }
    target = out / "run_manifest.json"
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)
        fh.write("\n")
    os.replace(tmp, target)
    return target


def main(argv=None) -> int:
    try:
        cfg = resolve(argv)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        result = COMMANDS[cfg["command"]](cfg, out)
        write_manifest(out, cfg, result, time.perf_counter() - start)
    except SystemExit as exc:  # argparse
        return 0 if exc.code in (0, None) else 1
    except (UsageError, ValueError, OSError, SolverError) as exc:
        print(f"clab: error: {exc}", file=sys.stderr)
        return 1
    failing = result.get("failing") or []
    if failing:
        print("clab: failed checks: " + ", ".join(failing), file=sys.stderr)
        return 2
    print(json.dumps(result.get("summary", {})))
    return 0


if __name__ == "__main__":
    sys.exit(main())
