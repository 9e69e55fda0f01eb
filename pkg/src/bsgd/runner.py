"""Run one configured experiment and write its CSV log, image and plots.

CSV columns, in order::

    epoch, effective_epoch, block_mults, DS, SNR, GAP, mu,
    master_storage, node_storage_peak, bytes_moved

``effective_epoch`` is ``block_mults / (2 M N)``: the number of full
forward-plus-back projections the block work adds up to.  ``DS`` is left
empty when the least-squares oracle is disabled.  A row is written at epoch
0, every ``metric_period`` epochs and after the last epoch.
"""

import copy
import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, solver
from .arrayio import write_array
from .cluster import CostLedger, storage_sweep
from .config import BLOCK_METHODS, _check_run, load_config
from .errors import BSGDError, RunError
from .fixedpoint import verify_fixed_point
from .partition import make_partition
from .phantoms import add_noise, compute_metrics, shepp_logan, skull_cube
from .projector import build_geometry, system_matrix
from .system import BlockSystem

log = logging.getLogger(__name__)

OUTPUT_ENV = "BSGD_OUTPUT_DIR"
CSV_COLUMNS = ("epoch", "effective_epoch", "block_mults", "DS", "SNR", "GAP", "mu",
               "master_storage", "node_storage_peak", "bytes_moved")
PHANTOMS = {"shepp_logan": shepp_logan, "skull": skull_cube}

_BASELINE_NAMES = {"sirt": "SIRT", "cav": "CAV", "gd": "GD", "gd_bb": "GD-BB",
                   "sag": "SAG", "svrg": "SVRG", "ista": "ISTA", "fista": "FISTA"}


def resolve_output_dir(cfg, override=None):
    """Explicit argument, then ``$BSGD_OUTPUT_DIR``, then ``run.output_dir``."""
    out = override or os.environ.get(OUTPUT_ENV) or cfg.sections.get("run", {}).get("output_dir", "output")
    return Path(out)


def override(cfg, **updates):
    """Copy of ``cfg`` with ``section={key: value}`` replacements, re-validated."""
    new = copy.deepcopy(cfg)
    for sec, values in updates.items():
        new.sections.setdefault(sec, {}).update(values)
    if new.kind == "run":
        _check_run(new, {}, {})
    return new


@dataclass
class Problem:
    geom: object
    system: BlockSystem
    x_true: np.ndarray
    y: np.ndarray


def build_problem(cfg):
    g = cfg["geometry"]
    geom = build_geometry(**cfg.geometry_kwargs())
    A = system_matrix(geom)
    if g["system_scale"] != 1.0:
        A = (A * g["system_scale"]).tocsr()
    p = cfg["partition"]
    part = make_partition(geom, p["M"], p["N"], p["tiles_per_angle"], p["row_unit"])
    system = BlockSystem(geom, part, A)
    ph = cfg.sections.get("phantom", {"kind": "shepp_logan", "intensity_scale": 1.0})
    if ph["kind"] not in PHANTOMS:
        raise BSGDError(f"unknown phantom {ph['kind']!r}; expected one of {', '.join(PHANTOMS)}")
    x_true = PHANTOMS[ph["kind"]](geom.volume_side, dims=geom.ndim).values * ph["intensity_scale"]
    y = add_noise(A @ x_true, cfg["noise"]["snr_db"], cfg["noise"]["seed"])
    return Problem(geom, system, x_true, y)


def oracle_path(cfg, out_dir):
    return Path(out_dir) / f"oracle-{cfg.problem_key()}.npy"


def least_squares_oracle(cfg, problem, out_dir=None):
    """``x_lsq`` for the configured problem, cached as ``.npy`` in ``out_dir``."""
    path = oracle_path(cfg, out_dir) if out_dir is not None else None
    if path is not None and path.exists():
        return np.load(path)
    res = baselines.lsqr_solve(problem.system.A, problem.y)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, res.x)
    return res.x


@dataclass
class RunLog:
    name: str
    rows: list
    x: np.ndarray
    ledger: dict
    residual_norms: list = field(default_factory=list)
    csv_path: Path | None = None
    array_path: Path | None = None
    plot_paths: list = field(default_factory=list)
    diverged: bool = False

    def column(self, key):
        return [row[key] for row in self.rows]


def _baseline_master_storage(method, M, r, c):
    # image + residual, plus whatever memory the method keeps on the master
    extra = {"sag": M * c, "svrg": 2 * c, "fista": 2 * c, "gd_bb": 2 * c}.get(method, 0)
    return r + c + extra


class _Driver:
    """Uniform ``step()`` / ``x`` / ``mu`` view over the block solver and the baselines."""

    def __init__(self, cfg, problem):
        self.cfg = cfg
        self.problem = problem
        self.method = cfg.method
        s = problem.system
        run, meth = cfg["run"], cfg["method"]
        self.ledger = CostLedger(node_budget=run["node_storage_budget"])
        self.epochs = run["epochs"]
        if self.method in BLOCK_METHODS:
            self.state = solver.init_state(s, problem.y, cfg.mu0, seed=run["seed"],
                                           workers=run["workers"], ledger=self.ledger)
            self.fractions = cfg.fractions
            self.constants = cfg.tuning
            self.period = None
            if self.constants is not None:
                self.period = self.constants.period or s.M
            self.plain_from = self.epochs - int(self.epochs * meth["im_final_phase"])
        else:
            self.state = baselines.init_baseline(s.shape[1], cfg.mu0, seed=run["seed"],
                                                 ledger=self.ledger)
            self.ledger.master_storage = _baseline_master_storage(self.method, s.M, *s.shape)

    @property
    def x(self):
        return self.state.x

    @property
    def mu(self):
        return self.state.mu if self.method in BLOCK_METHODS else self.state.step

    def residual_norm(self):
        if self.method in BLOCK_METHODS:
            return float(np.linalg.norm(self.state.r))
        return float(np.linalg.norm(self.problem.y - self.problem.system.A @ self.state.x))

    def step(self, k):
        s, y, meth = self.problem.system, self.problem.y, self.cfg["method"]
        m = self.method
        if m == "bsgd":
            solver.bsgd_epoch(self.state, s, self.fractions)
        elif m in ("bsgd_im", "bsgd_ran"):
            if k < self.plain_from:
                solver.bsgd_im_epoch(self.state, s, self.fractions, uniform=(m == "bsgd_ran"))
            else:
                solver.bsgd_epoch(self.state, s, self.fractions)
        elif m == "bsgd_tv":
            solver.bsgd_tv_epoch(self.state, s, self.fractions, self.cfg.lam,
                                 prox_iters=meth["prox_iters"], prox_tol=meth["prox_tol"])
        elif m in ("sirt", "cav", "gd", "gd_bb"):
            baselines.classical_step(_BASELINE_NAMES[m], self.state, s, y, relaxation=meth["relaxation"])
        elif m in ("sag", "svrg"):
            baselines.stochastic_epoch(_BASELINE_NAMES[m], self.state, s, y, batch=meth["batch"])
        else:
            baselines.prox_step(_BASELINE_NAMES[m], self.state, s, y, self.cfg.lam,
                                prox_iters=meth["prox_iters"], prox_tol=meth["prox_tol"])
        if self.method in BLOCK_METHODS and self.constants is not None:
            solver.track_tuning(self.state, self.constants, self.period)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def write_plots(out_dir, name, rows):
    """One SVG line chart per available metric against block multiplications."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    bm = [row["block_mults"] for row in rows]
    with matplotlib.rc_context({"svg.hashsalt": "bsgd", "svg.fonttype": "none"}):
        for key in ("DS", "SNR", "GAP"):
            vals = [row[key] for row in rows]
            if any(v is None for v in vals):
                continue
            fig, ax = plt.subplots(figsize=(5, 3.5))
            ax.plot(bm, vals)
            if key != "SNR" and min(vals) > 0:
                ax.set_yscale("log")
            ax.set_xlabel("block multiplications")
            ax.set_ylabel(key)
            ax.set_title(name)
            fig.tight_layout()
            path = Path(out_dir) / f"{name}_{key}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths


def run_experiment(cfg, out_dir=None, write=True, problem=None, x_lsq=None):
    """Execute the configured method and log metrics.

    ``problem`` and ``x_lsq`` may be passed in to share a built system
    between runs that differ only in solver settings.
    """
    name = cfg.name
    out = resolve_output_dir(cfg, out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    try:
        if problem is None:
            problem = build_problem(cfg)
        if x_lsq is None and cfg["run"]["oracle"]:
            x_lsq = least_squares_oracle(cfg, problem, out if write else None)
        drv = _Driver(cfg, problem)
        s = problem.system
        per_pass = 2 * s.M * s.N
        rows, rnorms = [], []

        def record(epoch):
            met = compute_metrics(drv.x, problem.x_true, x_lsq, s.A, problem.y)
            snap = drv.ledger.snapshot()
            rows.append({
                "epoch": epoch, "effective_epoch": snap["block_mults"] / per_pass,
                "block_mults": snap["block_mults"], "DS": met["DS"], "SNR": met["SNR"],
                "GAP": met["GAP"], "mu": drv.mu, "master_storage": snap["master_storage"],
                "node_storage_peak": snap["node_storage_peak"], "bytes_moved": snap["bytes_moved"],
            })
            rnorms.append(drv.residual_norm())

        period = cfg["run"]["metric_period"]
        record(0)
        diverged = False
        # a diverging run is reported, not an error; keep numpy quiet about it
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for k in range(drv.epochs):
                drv.step(k)
                epoch = k + 1
                if not np.all(np.isfinite(drv.x)):
                    log.warning("%s: iterate is no longer finite at epoch %d; stopping", name, epoch)
                    diverged = True
                    record(epoch)
                    break
                if epoch % period == 0 or epoch == drv.epochs:
                    record(epoch)
    except BSGDError as exc:
        raise RunError(f"{name}: {exc}") from exc

    runlog = RunLog(name, rows, drv.x.copy(), drv.ledger.snapshot(), rnorms, diverged=diverged)
    if write:
        runlog.csv_path = out / f"{name}.csv"
        write_csv(runlog.csv_path, rows)
        runlog.array_path = out / f"{name}.f32"
        with np.errstate(over="ignore", invalid="ignore"):
            write_array(runlog.array_path, drv.x, problem.geom.image_shape)
        if cfg["run"]["plots"]:
            runlog.plot_paths = write_plots(out, name, rows)
    return runlog


SUMMARY_COLUMNS = ("name", "method", "epochs", "block_mults", "effective_epoch", "DS", "SNR", "GAP",
                   "master_storage", "node_storage_peak")


def run_sweep(config_dir, out_dir=None):
    """Run every ``*.ini`` in ``config_dir`` (sorted by name) and write ``summary.csv``."""
    paths = sorted(Path(config_dir).glob("*.ini"))
    if not paths:
        raise BSGDError(f"no *.ini configs in {config_dir}")
    logs, summary = [], []
    out = None
    for path in paths:
        cfg = load_config(path)
        runlog = run_experiment(cfg, out_dir)
        out = resolve_output_dir(cfg, out_dir)
        last = runlog.rows[-1]
        summary.append({"name": runlog.name, "method": cfg.method, "epochs": last["epoch"],
                        **{k: last[k] for k in SUMMARY_COLUMNS[3:]}})
        logs.append(runlog)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summary:
            w.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in SUMMARY_COLUMNS])
    return logs


STORAGE_COLUMNS = ("M", "N", "m", "n", "node_storage", "fits", "master_storage", "master_storage_stated")


def storage_report(cfg, out_dir=None):
    """Storage sweep over ``storage.M_values x storage.N_values``; writes a CSV."""
    geom = build_geometry(**cfg.geometry_kwargs())
    st = cfg["storage"]
    rows, best = storage_sweep(geom, st["budget"], st["M_values"], st["N_values"])
    out = resolve_output_dir(cfg, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{Path(cfg.source).stem if cfg.source else 'storage'}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STORAGE_COLUMNS + ("best",))
        for row in rows:
            is_best = best is not None and (row["M"], row["N"]) == (best["M"], best["N"])
            w.writerow([str(row[c]).lower() if c == "fits" else row[c] for c in STORAGE_COLUMNS]
                       + [str(is_best).lower()])
    return rows, best, path


def fixed_point_check(cfg, trials=100, seed=0, perturbation=1e-3):
    """Stationarity of the recursion at ``x_lsq`` and at a perturbed image.

    The perturbation is a seeded random direction of norm ``perturbation``
    added to the image part only.  Returns ``(at_lsq, perturbed)`` reports.
    """
    problem = build_problem(cfg)
    x_lsq = baselines.lsqr_solve(problem.system.A, problem.y).x
    at = verify_fixed_point(problem.system, problem.y, cfg.mu0, x_lsq, trials=trials, seed=seed)
    d = np.random.default_rng(seed).standard_normal(x_lsq.size)
    d *= perturbation / np.linalg.norm(d)
    off = verify_fixed_point(problem.system, problem.y, cfg.mu0, x_lsq, trials=trials, seed=seed,
                             x_offset=d)
    return at, off
