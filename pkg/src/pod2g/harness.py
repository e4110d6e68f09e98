"""Offline pipeline, solver and preconditioner benchmarks, Monte-Carlo studies.

Every benchmark solve runs once to the tightest tolerance; the counts and
times for looser tolerances are read off the recorded residual history,
which is exactly what separate runs would produce because the iterates do
not depend on the stopping test.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from ._pool import parallel_map
from .amg import build_hierarchy, amg_solve
from .krylov import BreakdownError, FactorizationError, IChol0, ILU0, AmgPreconditioner, Jacobi, Preconditioner, pcg_solve
from .pod import DEFAULT_ENERGY, Pod2G, Pod2GPreconditioner, PodBasis, compute_pod
from .problems import ParametricProblem, SnapshotSet, generate_snapshots, latin_hypercube_lognormal, random_lognormal
from .surrogate import SurrogateModel, TrainConfig, train_mlp

log = logging.getLogger(__name__)

DEFAULT_TOLERANCES = (1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
SOLVER_ROSTER = ("AMG-2G", "AMG-3G", "AMG-5G", "POD-2G(0)", "POD-2G(sur)")
PCG_ROSTER = ("Identity", "Jacobi", "ILU0", "IChol0", "AMG-3G", "POD-2G", "POD-2G(sur)")


def _hash_array(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()[:16]


# --- offline stage ------------------------------------------------------------


@dataclass(eq=False)
class OfflineArtifacts:
    problem: ParametricProblem
    snapshots: SnapshotSet
    basis: PodBasis
    model: SurrogateModel
    timings: dict = field(default_factory=dict)

    @property
    def offline_time(self) -> float:
        return float(sum(self.timings.values()))

    def hashes(self) -> dict:
        return {
            "snapshots": self.snapshots.content_hash(),
            "basis": _hash_array(self.basis.phi),
            "model": _hash_array(self.model.mlp.get_flat()),
        }

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.snapshots.save(out / "snapshots")
        self.model.save(out / "surrogate")
        manifest = {"problem": self.problem.descriptor(), "hashes": self.hashes(), "timings": self.timings}
        (out / "offline.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out


def problem_from_descriptor(desc: dict) -> ParametricProblem:
    prob = ParametricProblem.named(desc["kind"], desc["resolution"])
    if prob.descriptor() != desc:
        raise ValueError("stored problem descriptor does not match a built-in problem")
    return prob


def load_offline(directory) -> OfflineArtifacts:
    src = Path(directory)
    manifest = json.loads((src / "offline.json").read_text())
    snaps = SnapshotSet.load(src / "snapshots")
    model = SurrogateModel.load(src / "surrogate")
    art = OfflineArtifacts(problem_from_descriptor(manifest["problem"]), snaps, model.basis, model,
                           manifest.get("timings", {}))
    if art.hashes() != manifest["hashes"]:
        raise ValueError(f"{src}: artifact hashes do not match the manifest")
    return art


def run_offline(problem: ParametricProblem, n: int = 100, seed: int = 0, energy: float = DEFAULT_ENERGY,
                rank: int | None = None, train: TrainConfig | None = None, tol: float = 1e-10,
                jobs: int = 1, out=None) -> OfflineArtifacts:
    """LHS sampling, snapshot solves, POD basis and surrogate training.

    The surrogate latent space is the POD basis itself.
    """
    train = TrainConfig(seed=seed) if train is None else train
    timings = {}
    t0 = time.perf_counter()
    params = latin_hypercube_lognormal(n, problem.distributions, seed)
    snaps = generate_snapshots(problem, params, tol=tol, jobs=jobs)
    snaps.meta["seed"] = seed
    timings["snapshots"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    basis = compute_pod(snaps, rank=rank, energy=None if rank is not None else energy)
    timings["pod"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    model = train_mlp(snaps, basis, train)
    timings["train"] = time.perf_counter() - t0
    log.info("offline: N=%d d=%d r=%d energy=%.6f", n, snaps.dim, basis.rank, basis.energy_fraction)
    art = OfflineArtifacts(problem, snaps, basis, model, timings)
    if out is not None:
        art.save(out)
    return art


# --- benchmarks -----------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    tolerances: tuple[float, ...] = DEFAULT_TOLERANCES
    n_test: int = 100
    seed: int = 0
    solvers: tuple[str, ...] = SOLVER_ROSTER
    preconditioners: tuple[str, ...] = PCG_ROSTER
    baseline: str = "AMG-2G"
    pcg_baseline: str = "AMG-3G"
    max_cycles: int = 2000
    max_iter: int | None = None
    pre: int = 1
    post: int = 1
    coarse_cap: int = 64
    jobs: int = 1

    def __post_init__(self):
        tols = list(self.tolerances)
        if not tols or any(b >= a for a, b in zip(tols, tols[1:])):
            raise ValueError("tolerances must be non-empty and strictly decreasing")
        if self.n_test < 1:
            raise ValueError("n_test must be >= 1")

    def test_params(self, problem: ParametricProblem) -> np.ndarray:
        """Test parameters, shared by every roster entry and independent of the offline draw."""
        return latin_hypercube_lognormal(self.n_test, problem.distributions, [self.seed, 7])


def _levels(name: str) -> int:
    return int(name.split("-")[1].rstrip("G"))


def _report_row(rep, tolerances, extra_setup=0.0) -> dict:
    return {
        "cycles": [rep.iterations_to(t) for t in tolerances],
        "times": [None if rep.time_to(t) is None else rep.time_to(t) + extra_setup for t in tolerances],
        "final_residual": rep.final_residual,
    }


def _bench_sample(job) -> dict:
    kind, problem, theta, names, cfg, basis, model = job
    asm = problem.assemble(theta)
    out = {}
    for name in names:
        try:
            out[name] = _bench_one(kind, name, problem, asm, theta, cfg, basis, model)
        except (BreakdownError, FactorizationError, FloatingPointError) as exc:
            log.warning("%s failed on theta=%s: %s", name, theta.tolist(), exc)
            out[name] = {"cycles": [None] * len(cfg.tolerances), "times": [None] * len(cfg.tolerances),
                         "final_residual": float("nan"), "error": str(exc)}
    return out


def _bench_one(kind, name, problem, asm, theta, cfg, basis, model) -> dict:
    K, f = asm
    tol = min(cfg.tolerances)
    u0, extra = None, 0.0
    if name.endswith("(sur)"):
        t0 = time.perf_counter()
        u0 = model.predict(theta)
        extra = time.perf_counter() - t0
    dims = None
    if name.startswith("AMG"):
        h = build_hierarchy(K, max_levels=_levels(name), coarse_cap=cfg.coarse_cap, dofs=asm.dofs,
                            pre=cfg.pre, post=cfg.post)
        dims = h.dims
        if kind == "solver":
            _, rep = amg_solve(h, f, u0, tol, cfg.max_cycles)
        else:
            _, rep = pcg_solve(K, f, AmgPreconditioner(h), u0, tol, cfg.max_iter)
    elif name.startswith("POD"):
        solver = Pod2G(K, basis, cfg.pre, cfg.post)
        if kind == "solver":
            _, rep = solver.solve(f, u0, tol, cfg.max_cycles)
        else:
            _, rep = pcg_solve(K, f, Pod2GPreconditioner(solver), u0, tol, cfg.max_iter)
    else:
        T = {"Identity": Preconditioner, "Jacobi": Jacobi, "ILU0": ILU0, "IChol0": IChol0}[name]
        _, rep = pcg_solve(K, f, T() if name == "Identity" else T(K), u0, tol, cfg.max_iter)
    row = _report_row(rep, cfg.tolerances, extra)
    if dims is not None:
        row["dims"] = dims
    return row


@dataclass
class Cell:
    solver: str
    epsilon: float
    mean_cycles: float
    mean_time_s: float
    speedup: float
    cycle_speedup: float
    n_converged: int
    cycles: list
    times: list


@dataclass
class BenchmarkResult:
    """One row per ``(solver, epsilon)``.

    Means are over the samples that reached ``epsilon``; ``n_converged``
    tells how many did. A cell where no sample converged holds NaN.
    """

    kind: str
    baseline: str
    cells: list[Cell]
    meta: dict = field(default_factory=dict)

    def cell(self, solver: str, epsilon: float) -> Cell:
        for c in self.cells:
            if c.solver == solver and np.isclose(c.epsilon, epsilon, rtol=1e-12, atol=0):
                return c
        raise KeyError((solver, epsilon))

    @property
    def solvers(self) -> list[str]:
        return list(dict.fromkeys(c.solver for c in self.cells))

    @property
    def tolerances(self) -> list[float]:
        return list(dict.fromkeys(c.epsilon for c in self.cells))

    def to_csv(self, path) -> None:
        cols = ["solver", "epsilon", "mean_cycles", "mean_time_s", "speedup", "cycle_speedup", "n_converged"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for c in self.cells:
                w.writerow([c.solver, f"{c.epsilon:g}", f"{c.mean_cycles:.6g}", f"{c.mean_time_s:.6g}",
                            f"{c.speedup:.6g}", f"{c.cycle_speedup:.6g}", c.n_converged])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "baseline": self.baseline, "meta": self.meta,
                "cells": [asdict(c) for c in self.cells]}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def format_table(self) -> str:
        lines = [f"{'solver':<14}" + "".join(f"{'eps=' + format(e, 'g'):>22}" for e in self.tolerances)]
        for s in self.solvers:
            row = f"{s:<14}"
            for e in self.tolerances:
                c = self.cell(s, e)
                row += f"{c.mean_cycles:>10.1f} x{c.cycle_speedup:<9.2f} "
            lines.append(row)
        return "\n".join(lines)


def _aggregate(kind, names, rows, cfg, baseline, meta) -> BenchmarkResult:
    cells = []
    for j, eps in enumerate(cfg.tolerances):
        means = {}
        for name in names:
            cyc = [r[name]["cycles"][j] for r in rows]
            tim = [r[name]["times"][j] for r in rows]
            ok = [i for i, c in enumerate(cyc) if c is not None]
            mc = float(np.mean([cyc[i] for i in ok])) if ok else float("nan")
            mt = float(np.mean([tim[i] for i in ok])) if ok else float("nan")
            means[name] = (mc, mt, len(ok), cyc, tim)
        bc, bt = means[baseline][:2] if baseline in means else (float("nan"), float("nan"))
        for name in names:
            mc, mt, n_ok, cyc, tim = means[name]
            cells.append(Cell(name, eps, mc, mt, bt / mt if mt > 0 else float("nan"),
                              bc / mc if mc > 0 else float("nan"), n_ok, cyc, tim))
    cells.sort(key=lambda c: (names.index(c.solver), -c.epsilon))
    return BenchmarkResult(kind, baseline, cells, meta)


def _run(kind, names, baseline, cfg, artifacts) -> BenchmarkResult:
    problem = artifacts.problem
    thetas = cfg.test_params(problem)
    jobs = [(kind, problem, th, names, cfg, artifacts.basis, artifacts.model) for th in thetas]
    t0 = time.perf_counter()
    rows = parallel_map(_bench_sample, jobs, cfg.jobs)
    meta = {
        "problem": problem.descriptor(),
        "d": artifacts.snapshots.dim,
        "rank": artifacts.basis.rank,
        "n_test": cfg.n_test,
        "seed": cfg.seed,
        "wall_time": time.perf_counter() - t0,
        "offline_hashes": artifacts.hashes(),
        "amg_dims": {n: rows[0][n]["dims"] for n in names if "dims" in rows[0][n]},
        "errors": {n: sum("error" in r[n] for r in rows) for n in names},
    }
    return _aggregate(kind, list(names), rows, cfg, baseline, meta)


def run_solver_benchmark(config: BenchmarkConfig, artifacts: OfflineArtifacts) -> BenchmarkResult:
    """Standalone AMG and POD-2G cycles; speedups against ``config.baseline``."""
    return _run("solver", config.solvers, config.baseline, config, artifacts)


def run_pcg_benchmark(config: BenchmarkConfig, artifacts: OfflineArtifacts) -> BenchmarkResult:
    """PCG with each preconditioner; speedups against ``config.pcg_baseline``."""
    return _run("pcg", config.preconditioners, config.pcg_baseline, config, artifacts)


# --- Monte Carlo ------------------------------------------------------------------


@dataclass
class MonteCarloResult:
    method: str
    qoi: np.ndarray
    counts: np.ndarray
    edges: np.ndarray
    solve_time: float
    offline_time: float
    iterations: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.qoi))

    @property
    def std(self) -> float:
        return float(np.std(self.qoi, ddof=1)) if len(self.qoi) > 1 else 0.0

    @property
    def total_time(self) -> float:
        return self.solve_time + self.offline_time

    def summary(self) -> dict:
        return {
            "method": self.method,
            "n_mc": int(len(self.qoi)),
            "mean": self.mean,
            "std": self.std,
            "solve_time_s": self.solve_time,
            "offline_time_s": self.offline_time,
            "total_time_s": self.total_time,
            "mean_iterations": float(np.mean(self.iterations)),
        }

    def to_json(self, path) -> None:
        d = self.summary()
        d.update(counts=self.counts.tolist(), edges=self.edges.tolist(), qoi=self.qoi.tolist())
        Path(path).write_text(json.dumps(d, indent=1))

    def histogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([f"{lo:.10g}", f"{hi:.10g}", int(c)])


MC_METHODS = ("pod2g", "amg3", "direct")


def _mc_sample(job):
    method, problem, theta, tol, basis, model, coarse_cap = job
    t0 = time.perf_counter()
    asm = problem.assemble(theta)
    K, f = asm
    if method == "direct":
        u = spla.splu(K.to_scipy().tocsc()).solve(f)
        its = 0
    elif method == "pod2g":
        T = Pod2GPreconditioner(Pod2G(K, basis))
        u, rep = pcg_solve(K, f, T, model.predict(theta), tol)
        its = rep.iterations
    else:
        h = build_hierarchy(K, max_levels=3, coarse_cap=coarse_cap, dofs=asm.dofs)
        u, rep = pcg_solve(K, f, AmgPreconditioner(h), None, tol)
        its = rep.iterations
    return problem.qoi(asm, u), time.perf_counter() - t0, its


def run_monte_carlo(problem: ParametricProblem, artifacts: OfflineArtifacts | None, n_mc: int = 2000,
                    seed: int = 0, method: str = "pod2g", tol: float = 1e-8, jobs: int = 1,
                    coarse_cap: int = 64) -> MonteCarloResult:
    """Propagate plain-random lognormal parameters to the quantity of interest.

    ``method`` is ``pod2g`` (PCG with the POD-2G preconditioner started from
    the surrogate), ``amg3`` (PCG with a 3-level AMG preconditioner) or
    ``direct`` (sparse LU, the reference). Per-sample times include assembly
    and preconditioner setup; ``offline_time`` is charged only to ``pod2g``.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    if method not in MC_METHODS:
        raise ValueError(f"method must be one of {MC_METHODS}")
    if method == "pod2g" and artifacts is None:
        raise ValueError("pod2g Monte Carlo needs offline artifacts")
    thetas = random_lognormal(n_mc, problem.distributions, [seed, 11])
    basis = artifacts.basis if artifacts is not None else None
    model = artifacts.model if artifacts is not None else None
    jobs_list = [(method, problem, th, tol, basis, model, coarse_cap) for th in thetas]
    rows = parallel_map(_mc_sample, jobs_list, jobs)
    qoi = np.array([r[0] for r in rows])
    if not np.all(np.isfinite(qoi)):
        raise FloatingPointError("non-finite quantity of interest")
    counts, edges = np.histogram(qoi, bins="fd")
    offline = artifacts.offline_time if method == "pod2g" else 0.0
    return MonteCarloResult(method, qoi, counts, edges, float(sum(r[1] for r in rows)), offline,
                            np.array([r[2] for r in rows]))
