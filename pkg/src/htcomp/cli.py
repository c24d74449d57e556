"""Command-line entry point: ``htcomp <subcommand> [--seed S] [--out PATH] [--config FILE]``.

Exit status 0 on success, 2 for usage or parameter errors, 3 for numeric
failures (non-convergence, divergence).  Outputs are written only after the
computation succeeded, each with a ``<out>.manifest.json`` next to it.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import bounds as bd
from . import experiments as ex
from . import network as nw
from . import pruning as pr
from .errors import HtcError, NumericError
from .fileio import Table, read_weight_file, write_csv, write_manifest, write_weight_file
from .seeding import RngSeed
from .stable import (
    EllipticStableParams,
    StableParams,
    sample_elliptic_sas,
    sample_positive_stable,
    sample_sas,
)
from .tail_index import estimate_alpha

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(HtcError, ValueError):
    pass


def _now():
    return datetime.now(timezone.utc).isoformat()


def _params(args, defaults: dict) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    out = dict(defaults)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        out.update(cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if args.seed is not None:
        out["seed"] = args.seed
    out.setdefault("seed", 0)
    return out


def _need_out(args):
    if not args.out:
        raise UsageError(f"{args.command} requires --out")
    return args.out


def _finish(args, params, started, outputs, payload=None, diverged=None):
    manifest = {
        "command": args.command,
        "config": params,
        "seed": params.get("seed"),
        "version": __version__,
        "started": started,
        "finished": _now(),
        "divergence": diverged if diverged is not None else [],
        "result": payload,
    }
    for path in outputs:
        write_manifest(path, manifest)
    if payload is not None:
        print(json.dumps(payload, sort_keys=True, default=float))


def _floats_from_file(path) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            [float(c) for c in first.strip().split(",")]
            skip = 0
        except ValueError:
            skip = 1
    return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=1)


# -- subcommands --------------------------------------------------------------

def cmd_sample(args):
    p = _params(args, {"alpha": 1.7, "sigma": 1.0, "n": 1000, "kind": "sas", "dim": 1})
    out = _need_out(args)
    started = _now()
    rng = RngSeed(int(p["seed"]))
    if p["kind"] == "sas":
        x = sample_sas(StableParams(float(p["alpha"]), float(p["sigma"])), int(p["n"]), rng)[:, None]
    elif p["kind"] == "positive":
        x = sample_positive_stable(float(p["alpha"]), int(p["n"]), rng)[:, None]
    elif p["kind"] == "elliptic":
        x = sample_elliptic_sas(EllipticStableParams(float(p["alpha"]), int(p["dim"])), int(p["n"]), rng)
    else:
        raise UsageError(f"unknown sample kind {p['kind']!r}")
    cols = ["x"] if x.shape[1] == 1 else [f"x{j}" for j in range(x.shape[1])]
    write_csv(Table(cols, [tuple(float(v) for v in row) for row in x]), out)
    _finish(args, p, started, [out])


def cmd_estimate_alpha(args):
    p = _params(args, {"input": None, "k1": None, "center": True})
    if args.no_center:
        p["center"] = False
    if not p["input"]:
        raise UsageError("estimate-alpha requires --input")
    started = _now()
    x = _floats_from_file(p["input"])
    est = estimate_alpha(x, k1=p["k1"], center=bool(p["center"]))
    payload = {"alpha_hat": est.alpha_hat, "k1": est.k1, "k2": est.k2, "n_used": est.n_used}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
    _finish(args, p, started, [args.out] if args.out else [], payload)


def cmd_prune(args):
    p = _params(args, {"input": None, "scheme": "layerwise", "kappa": 0.5, "p": 2.0, "center": False})
    if args.center_median:
        p["center"] = True
    out = _need_out(args)
    if not p["input"]:
        raise UsageError("prune requires --input")
    started = _now()
    net = read_weight_file(p["input"])
    pruned = ex.prune_network(net, p["scheme"], float(p["kappa"]), float(p["p"]), center=bool(p["center"]))
    errs = [pr.relative_lp_error(W, P, float(p["p"])) for W, P in zip(net.layers, pruned.layers)]
    kept = int(sum(np.count_nonzero(P) for P in pruned.layers))
    payload = {
        "scheme": p["scheme"],
        "kappa": float(p["kappa"]),
        "layer_rel_errors": errs,
        "global_rel_error": pr.relative_lp_error(net.flat(), pruned.flat(), float(p["p"])),
        "nonzero_fraction": kept / net.n_params,
    }
    write_weight_file(pruned, out)
    _finish(args, p, started, [out], payload)


def cmd_train(args):
    p = _params(
        args,
        {"eta": 0.05, "b": 32, "iters": 2000, "tail": 0, "n": 1000, "dim": 10,
         "hidden": [64], "classes": 2, "separation": 2.0, "replacement": False},
    )
    out = _need_out(args)
    started = _now()
    problem = ex.MlpProblem(int(p["n"]), int(p["dim"]), tuple(int(h) for h in p["hidden"]),
                            int(p["classes"]), float(p["separation"]), int(p["seed"]))
    root = RngSeed(int(p["seed"]))
    data = problem.dataset()
    net0 = nw.init_uniform(problem.sizes(), root.child(0))
    cfg = nw.SgdConfig(float(p["eta"]), int(p["b"]), int(p["iters"]), bool(p["replacement"]), root.child(1), "nll")
    traj = nw.sgd_train(net0, data, cfg)
    if traj.diverged:
        raise nw.DivergenceError(traj.diverged_at, traj.final_norm)
    final = nw.ergodic_tail_average(traj, int(p["tail"])) if int(p["tail"]) > 0 else traj.weights
    payload = {
        "iterations": traj.iterations,
        "final_loss": float(traj.losses[-1]) if traj.losses.size else math.nan,
        "train_accuracy": nw.accuracy(final, data),
        "weight_norm": final.norm(),
        "layer_alpha_hat": [estimate_alpha(W.ravel()).alpha_hat for W in final.layers],
    }
    write_weight_file(final, out)
    _finish(args, p, started, [out], payload, [])


def cmd_sweep(args):
    p = _params(args, {})
    out = _need_out(args)
    started = _now()
    cfg = {k: v for k, v in p.items() if k != "out"}
    spec = ex.SweepSpec.from_dict(cfg)
    table = ex.run_sweep(spec)
    flags = []
    if "diverged" in table.columns:
        flags = [dict(zip(table.columns, r)) for r in table.rows if r[table.columns.index("n_diverged")]]
    write_csv(table, out)
    _finish(args, p, started, [out], None, flags)


def cmd_bound(args):
    p = _params(args, {"which": "pruned", "risk": 0.0})
    started = _now()
    fields = ("n", "d_l", "kappa_l", "epsilon", "delta", "tau", "B", "R", "fail_prob")
    missing = [f for f in fields[:-1] if f not in p]
    if missing:
        raise UsageError(f"bound config lacks {missing}")
    inp = bd.BoundInputs(**{f: p[f] for f in fields if f in p})
    which = p["which"]
    if which == "pruned":
        rep = bd.gen_bound_pruned(inp, float(p["risk"]))
    elif which == "original":
        rep = bd.gen_bound_original(inp, float(p["risk"]))
    elif which == "stable":
        rep = bd.gen_bound_stable(inp, float(p["sigma0"]), p["alphas"], float(p["risk"]))
    else:
        raise UsageError(f"unknown bound {which!r}")
    payload = {
        "which": which, "bound": rep.bound, "complexity": rep.complexity, "gamma": rep.gamma,
        "kappa": rep.kappa, "confidence": rep.confidence, **rep.extras,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")
    _finish(args, p, started, [args.out] if args.out else [], payload)


def cmd_synth(args):
    p = _params(args, {"alphas": None, "shape": [500, 500], "epsilon": 0.1, "p": 2.0, "seeds": 10})
    out = _need_out(args)
    started = _now()
    grid = p["alphas"] if p["alphas"] is not None else list(np.linspace(1.75, 2.0, 10))
    spec = ex.SweepSpec(grid=tuple(float(a) for a in grid), kind="synth", shape=tuple(p["shape"]),
                        epsilon=float(p["epsilon"]), p=float(p["p"]), seeds=int(p["seeds"]), seed=int(p["seed"]))
    table = ex.synth_study(spec)
    write_csv(table, out)
    p["alphas"] = [float(a) for a in grid]
    _finish(args, p, started, [out])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--config", default=None, help="JSON file with parameters")

    parser = argparse.ArgumentParser(prog="htcomp", description="heavy-tail compressibility toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw stable samples to CSV")
    s.add_argument("--alpha", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--kind", choices=["sas", "positive", "elliptic"])
    s.add_argument("--dim", type=int)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("estimate-alpha", parents=[common], help="tail index of a sample file")
    s.add_argument("--input")
    s.add_argument("--k1", type=int)
    s.add_argument("--no-center", action="store_true")
    s.set_defaults(func=cmd_estimate_alpha)

    s = sub.add_parser("prune", parents=[common], help="prune a weight file")
    s.add_argument("--input")
    s.add_argument("--scheme", choices=list(ex.SCHEMES))
    s.add_argument("--kappa", type=float)
    s.add_argument("--p", type=float)
    s.add_argument("--center-median", action="store_true")
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("train", parents=[common], help="train a small MLP on a Gaussian mixture")
    s.add_argument("--eta", type=float)
    s.add_argument("--b", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--tail", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common], help="run a sweep described by --config")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("bound", parents=[common], help="evaluate a generalization bound")
    s.add_argument("--which", choices=["pruned", "original", "stable"])
    s.add_argument("--risk", type=float)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("synth", parents=[common], help="pruning ratio vs alpha for the three synthetic modes")
    s.add_argument("--alphas", type=float, nargs="+")
    s.add_argument("--shape", type=int, nargs=2)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--seeds", type=int)
    s.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        args.func(args)
    except NumericError as exc:
        print(f"htcomp: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HtcError, ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"htcomp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
