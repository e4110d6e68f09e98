"""``pod2g`` command-line entry point.

A ``--config`` file holds flat ``key = value`` lines (``#`` starts a
comment); its values override the command-line flags. Keys use the long
flag names with dashes or underscores, e.g. ``eps-list = 1e-4,1e-6``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import verify_error_bound
from .harness import (
    DEFAULT_TOLERANCES,
    PCG_ROSTER,
    SOLVER_ROSTER,
    BenchmarkConfig,
    load_offline,
    run_monte_carlo,
    run_offline,
    run_pcg_benchmark,
    run_solver_benchmark,
)
from .pod import compute_pod
from .problems import ParametricProblem, SnapshotSet, generate_snapshots, latin_hypercube_lognormal
from .surrogate import TrainConfig, train_mlp

log = logging.getLogger("pod2g")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into a dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, cfg: dict) -> None:
    actions = {a.dest: a for a in parser._actions}
    for key, value in cfg.items():
        if key not in actions or key in ("config", "command", "help"):
            raise ValueError(f"unknown config key {key!r} for '{args.command}'")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            setattr(args, key, value.lower() in ("1", "true", "yes", "on"))
        else:
            setattr(args, key, act.type(value) if act.type else value)


def _common(p: argparse.ArgumentParser, offline: bool = True) -> None:
    p.add_argument("--problem", choices=("its", "biot"), default="its")
    p.add_argument("--res", type=int, default=None, help="elements per side (its: 32, biot: 10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--config", type=Path, default=None, help="key=value file overriding flags")
    if offline:
        p.add_argument("--n", type=int, default=100, help="offline snapshots")
        p.add_argument("--artifacts", type=Path, default=None,
                       help="reuse a directory written by 'train' instead of rebuilding")
        p.add_argument("--epochs", type=int, default=3000)
        p.add_argument("--lr", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pod2g", description="POD two-grid solvers and benchmarks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("snapshots", help="sample parameters and solve for snapshots")
    _common(p, offline=False)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("train", help="POD basis and surrogate from a snapshot directory")
    p.add_argument("--snapshots", type=Path, required=True)
    p.add_argument("--latent", type=int, default=None, help="POD rank; default from --energy")
    p.add_argument("--energy", type=float, default=0.9999)
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--config", type=Path, default=None)

    for name, roster, help_ in (("bench-solvers", SOLVER_ROSTER, "standalone AMG / POD-2G cycles"),
                                ("bench-pcg", PCG_ROSTER, "PCG with each preconditioner")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--eps-list", type=_floats, default=DEFAULT_TOLERANCES)
        p.add_argument("--n-test", type=int, default=100)
        p.add_argument("--roster", type=_names, default=roster)
        p.add_argument("--max-cycles", type=int, default=2000)

    p = sub.add_parser("monte-carlo", help="QoI statistics over random parameters")
    _common(p)
    p.add_argument("--n-mc", type=int, default=2000)
    p.add_argument("--methods", type=_names, default=("pod2g", "amg3", "direct"))
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("verify-bound", help="dense check of the two-grid error bound")
    _common(p)
    p.add_argument("--ranks", type=_ints, default=(2, 4, 8))
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--r1", type=int, default=1)
    p.add_argument("--r2", type=int, default=1)
    return ap


def _problem(args) -> ParametricProblem:
    return ParametricProblem.named(args.problem, args.res)


def _offline(args):
    if args.artifacts is not None:
        return load_offline(args.artifacts)
    return run_offline(_problem(args), n=args.n, seed=args.seed, jobs=args.jobs,
                       train=TrainConfig(epochs=args.epochs, learning_rate=args.lr, seed=args.seed),
                       out=args.out / "offline")


def cmd_snapshots(args) -> dict:
    prob = _problem(args)
    params = latin_hypercube_lognormal(args.n, prob.distributions, args.seed)
    snaps = generate_snapshots(prob, params, tol=args.tol, jobs=args.jobs)
    snaps.meta["seed"] = args.seed
    snaps.save(args.out)
    return {"N": len(snaps), "d": snaps.dim, "content_hash": snaps.content_hash(), "out": str(args.out)}


def cmd_train(args) -> dict:
    snaps = SnapshotSet.load(args.snapshots)
    if args.latent is not None:
        basis = compute_pod(snaps, rank=args.latent)
    else:
        basis = compute_pod(snaps, energy=args.energy)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed)
    model = train_mlp(snaps, basis, cfg)
    model.save(args.out)
    return {"rank": basis.rank, "energy_fraction": basis.energy_fraction,
            "best_epoch": model.fit.best_epoch, "val_loss": model.fit.val_loss[model.fit.best_epoch],
            "out": str(args.out)}


def _bench(args, runner, field_name) -> dict:
    art = _offline(args)
    cfg = BenchmarkConfig(tolerances=tuple(args.eps_list), n_test=args.n_test, seed=args.seed,
                          max_cycles=args.max_cycles, jobs=args.jobs, **{field_name: tuple(args.roster)})
    res = runner(cfg, art)
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.out / args.command
    res.to_csv(stem.with_suffix(".csv"))
    res.to_json(stem.with_suffix(".json"))
    print(res.format_table())
    return {"csv": str(stem.with_suffix(".csv")), "json": str(stem.with_suffix(".json"))}


def cmd_monte_carlo(args) -> dict:
    prob = _problem(args)
    art = _offline(args) if "pod2g" in args.methods else None
    args.out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for m in args.methods:
        res = run_monte_carlo(prob, art, n_mc=args.n_mc, seed=args.seed, method=m, tol=args.tol, jobs=args.jobs)
        res.to_json(args.out / f"mc_{m}.json")
        res.histogram_csv(args.out / f"mc_{m}_hist.csv")
        summary[m] = res.summary()
    (args.out / "monte_carlo.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_verify_bound(args) -> dict:
    art = _offline(args)
    prob = art.problem
    theta = prob.mean_params()
    K, f = prob.assemble(theta)
    u = np.linalg.solve(K.toarray(), f)
    e_sur = art.model.predict(theta) - u
    out = {}
    for r in args.ranks:
        if r > art.basis.rank:
            out[str(r)] = {"error": f"basis has rank {art.basis.rank} < {r}"}
            continue
        est = verify_error_bound(K, art.basis.truncate(r), args.r1, args.r2, args.trials, args.seed,
                                 e_sur=e_sur if r == art.model.basis.rank else None)
        out[str(r)] = est.to_dict()
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "verify_bound.json").write_text(json.dumps(out, indent=2))
    return {str(r): (v.get("flags", v)) for r, v in out.items()}


COMMANDS = {
    "snapshots": cmd_snapshots,
    "train": cmd_train,
    "bench-solvers": lambda a: _bench(a, run_solver_benchmark, "solvers"),
    "bench-pcg": lambda a: _bench(a, run_pcg_benchmark, "preconditioners"),
    "monte-carlo": cmd_monte_carlo,
    "verify-bound": cmd_verify_bound,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        try:
            _apply_config(subparser, args, read_config(args.config))
        except ValueError as exc:
            parser.error(str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    result = COMMANDS[args.command](args)
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
