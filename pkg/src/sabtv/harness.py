"""Experiment orchestration: build problems from configs, run seed sweeps,
persist CSV artifacts and theory reports, and certify step-sizes.

Artifact layout per experiment directory:

- ``manifest.txt``: resolved config, package version, backend; enough to
  re-run bit-identically.
- ``trace_seed<seed>.csv``: per-seed series k, epoch, residual,
  consensus_error, tracking_deviation[, accuracy].
- ``aggregate.csv``: mean and standard error over seeds per recorded k.
- ``theory_report.txt`` / ``constants.csv`` when certification is requested.
- sweeps add ``sweep.csv`` collating plateau levels across parameter values.

Epoch accounting: one epoch equals one pass of gradient work over the full
batch (total sample count for logistic problems, n oracle calls for
quadratics), so batch and single-sample methods plot on a comparable axis.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from ._kernels import default_backend
from .algorithm import RunConfig, Trace, run
from .analysis import (CompositeSystem, ErrorSeries, GlobalConstants,
                       build_composite, char_poly_radius, delta_certificate,
                       error_vector, max_certified_alpha, rebuild_slices,
                       spectral_radius, steady_state_bound, step_size_bound,
                       theory_scan, vectors_at)
from .config import ConfigError, ExperimentConfig, config_lines, resolve_output_dir
from .data import (DatasetSplit, ingest_idx_pair, partition, read_split_csv,
                   write_split_csv)
from .graph import DiGraph, GraphSchedule, parse_edge_list
from .objective import (AgentEnsemble, OracleConfig, build_logistic_ensemble,
                        random_quadratic_ensemble, reference_optimum,
                        smoothness_and_convexity)

#: fallback step-size for logistic runs when none is configured; the
#: certified bound is far too conservative to train with, and the reference
#: task publishes no step-size, so this default is recorded in the manifest
DEFAULT_LOGISTIC_ALPHA = 0.05


@dataclass
class Problem:
    """Everything an experiment needs beyond the raw config."""

    config: ExperimentConfig
    ensemble: AgentEnsemble
    schedule: GraphSchedule
    x_star: np.ndarray
    L: float
    mu: float
    split: DatasetSplit | None = None

    @property
    def alpha(self) -> float:
        if self.config.alpha is not None:
            return self.config.alpha
        if self.ensemble.is_quadratic:
            scan = theory_scan(self.schedule, max(1, min(self.config.iterations, 2000)),
                               tolerance=self.config.phi_tolerance)
            gc = scan.global_constants(self.L, self.mu, self.config.sigma)
            return 0.9 * step_size_bound(gc)
        return DEFAULT_LOGISTIC_ALPHA


def build_schedule(cfg: ExperimentConfig) -> GraphSchedule:
    kind = cfg.schedule_kind.strip().lower()
    aliases = {"static": "static", "rotating": "rotating",
               "rotating-cycle-plus-random": "rotating", "replayed": "replayed",
               "replayed-sequence": "replayed"}
    if kind not in aliases:
        raise ConfigError(f"unknown schedule kind {cfg.schedule_kind!r}")
    kind = aliases[kind]
    if kind == "replayed":
        if not cfg.schedule_path:
            raise ConfigError("replayed schedule needs path")
        with open(cfg.schedule_path) as fh:
            blocks = fh.read().split("\n\n")
        graphs = tuple(parse_edge_list(b, cfg.agents) for b in blocks if b.strip())
        return GraphSchedule(kind, cfg.agents, seed=cfg.schedule_seed, sequence=graphs)
    return GraphSchedule(kind, cfg.agents, extra_edges=cfg.extra_edges, seed=cfg.schedule_seed)


def ingest_split(cfg: ExperimentConfig) -> DatasetSplit:
    """Load the configured dataset (IDX pairs or previously ingested CSVs)."""
    if cfg.train_csv:
        train_x, train_y = read_split_csv(cfg.train_csv)
        if cfg.test_csv:
            test_x, test_y = read_split_csv(cfg.test_csv)
        else:
            test_x, test_y = np.empty((0, train_x.shape[1])), np.empty(0)
        provenance = f"csv:{cfg.train_csv}"
    else:
        train_x, train_y = ingest_idx_pair(cfg.train_images, cfg.train_labels,
                                           cfg.digit_pos, cfg.digit_neg,
                                           cfg.train_limit, cfg.feature_scale)
        if cfg.test_images and cfg.test_labels:
            test_x, test_y = ingest_idx_pair(cfg.test_images, cfg.test_labels,
                                             cfg.digit_pos, cfg.digit_neg,
                                             cfg.test_limit, cfg.feature_scale)
        else:
            test_x, test_y = np.empty((0, train_x.shape[1])), np.empty(0)
        provenance = f"idx:{cfg.train_images}"
    return DatasetSplit(train_x, train_y, test_x, test_y, provenance)


def build_problem(cfg: ExperimentConfig) -> Problem:
    schedule = build_schedule(cfg)
    if cfg.problem_kind == "quadratic":
        ensemble = random_quadratic_ensemble(cfg.agents, cfg.dimension,
                                             cfg.condition_number, cfg.problem_seed,
                                             sigma=cfg.sigma)
        split = None
    else:
        split = ingest_split(cfg)
        lam = cfg.lam if cfg.lam is not None else 1.0 / max(1, split.train_x.shape[0])
        batches = partition(split.train_x, split.train_y, cfg.agents)
        oracle = OracleConfig(cfg.oracle_kind, sigma=cfg.sigma, batch_size=cfg.batch_size)
        if cfg.oracle_kind == "minibatch":
            oracle = OracleConfig("minibatch", batch_size=cfg.batch_size)
        ensemble = build_logistic_ensemble(batches, lam, oracle)
    L, mu = smoothness_and_convexity(ensemble)
    x_star = reference_optimum(ensemble)
    return Problem(cfg, ensemble, schedule, x_star, L, mu, split)


def evaluate_accuracy(x: np.ndarray, test_x: np.ndarray, test_y: np.ndarray) -> float:
    """Fraction of test samples classified correctly; exact ties count wrong."""
    if test_x.shape[0] == 0:
        raise ValueError("empty test split")
    if x.shape[0] != test_x.shape[1] + 1:
        raise ValueError(
            f"coefficient length {x.shape[0]} != intercept + {test_x.shape[1]} features")
    scores = test_x @ x[1:] + x[0]
    correct = np.sign(scores) == test_y
    correct[scores == 0.0] = False
    return float(np.mean(correct))


def _float_csv(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def fill_metrics(problem: Problem, trace: Trace, phi_at: np.ndarray,
                 pi_at: np.ndarray) -> Trace:
    """Attach residual/consensus/tracking (and accuracy) columns to a trace."""
    series = error_vector([trace], problem.x_star, phi_at, pi_at)
    trace.metrics["residual"] = series.mean[:, 0]
    trace.metrics["consensus_error"] = series.mean[:, 1]
    trace.metrics["tracking_deviation"] = np.sqrt(series.mean[:, 2])
    if problem.split is not None and problem.split.test_x.shape[0]:
        acc = np.empty(trace.records)
        for r in range(trace.records):
            xhat = phi_at[r] @ trace.X[r]
            acc[r] = evaluate_accuracy(xhat, problem.split.test_x, problem.split.test_y)
        trace.metrics["accuracy"] = acc
    return trace


def _trace_csv(trace: Trace) -> str:
    cols = ["k", "epoch", "residual", "consensus_error", "tracking_deviation"]
    if "accuracy" in trace.metrics:
        cols.append("accuracy")
    lines = [",".join(cols)]
    for r in range(trace.records):
        row = [str(int(trace.ks[r])), repr(float(trace.epochs[r]))]
        for c in cols[2:]:
            row.append(repr(float(trace.metrics[c][r])))
        lines.append(",".join(row))
    return "\n".join(lines)


def _aggregate_csv(traces: list, series: ErrorSeries) -> str:
    have_acc = all("accuracy" in t.metrics for t in traces)
    cols = ["k", "epoch", "residual_mean", "residual_se", "consensus_mean",
            "consensus_se", "tracking_sq_mean", "tracking_sq_se"]
    if have_acc:
        cols += ["accuracy_mean", "accuracy_se"]
    lines = [",".join(cols)]
    t0 = traces[0]
    S = len(traces)
    for r in range(len(series.ks)):
        row = [str(int(series.ks[r])), repr(float(t0.epochs[r]))]
        for c in range(3):
            row += [repr(float(series.mean[r, c])), repr(float(series.se[r, c]))]
        if have_acc:
            accs = np.array([t.metrics["accuracy"][r] for t in traces])
            se = accs.std(ddof=1) / np.sqrt(S) if S > 1 else 0.0
            row += [repr(float(accs.mean())), repr(float(se))]
        lines.append(",".join(row))
    return "\n".join(lines)


def _write_manifest(path, cfg: ExperimentConfig, extra: dict):
    with open(path, "w") as fh:
        fh.write(f"sabtv_version={__version__}\n")
        fh.write(f"backend={default_backend()}\n")
        for line in config_lines(cfg):
            fh.write(line + "\n")
        for key, value in sorted(extra.items()):
            fh.write(f"{key}={value}\n")


@dataclass
class ExperimentResult:
    directory: str
    traces: list
    series: ErrorSeries
    alpha: float
    problem: Problem

    def plateau(self, component: int = 0) -> float:
        """Mean of the last tenth of recorded values for one error component."""
        tail = max(1, len(self.series.ks) // 10)
        return float(self.series.mean[-tail:, component].mean())


def run_experiment(cfg: ExperimentConfig, name: str = "run",
                   problem: Problem | None = None, keep_outputs: bool = True) -> ExperimentResult:
    """Execute all seeds of one configuration and persist artifacts.

    Partially written artifact directories are removed if any stage fails.
    """
    problem = problem or build_problem(cfg)
    alpha = problem.alpha
    out_dir = resolve_output_dir(cfg, name)
    created = False
    if keep_outputs:
        os.makedirs(out_dir, exist_ok=True)
        created = True
    try:
        traces = []
        phi_at = pi_at = None
        for seed in cfg.seeds:
            rc = RunConfig(alpha=alpha, iterations=cfg.iterations, seed=seed,
                           record_every=cfg.record_every, algorithm=cfg.algorithm)
            trace = run(problem.ensemble, problem.schedule, rc)
            if phi_at is None:
                if cfg.algorithm in ("sabtv", "abpp"):
                    phi_at, pi_at = vectors_at(problem.schedule, trace.ks,
                                               cfg.phi_tolerance)
                else:
                    # centralized methods have one agent row; the weighted
                    # average is the iterate itself
                    phi_at = np.ones((trace.records, 1))
                    pi_at = np.ones((trace.records, 1))
            fill_metrics(problem, trace, phi_at, pi_at)
            traces.append(trace)
            if keep_outputs:
                with open(os.path.join(out_dir, f"trace_seed{seed}.csv"), "w") as fh:
                    fh.write(_trace_csv(trace) + "\n")
        series = error_vector(traces, problem.x_star, phi_at, pi_at)
        if keep_outputs:
            with open(os.path.join(out_dir, "aggregate.csv"), "w") as fh:
                fh.write(_aggregate_csv(traces, series) + "\n")
            gradient_evals = traces[0].evals_per_iteration * cfg.iterations
            _write_manifest(os.path.join(out_dir, "manifest.txt"), cfg, {
                "resolved_alpha": repr(alpha),
                "L": repr(problem.L), "mu": repr(problem.mu),
                "gradient_evaluations_per_seed": gradient_evals,
                "epochs": repr(float(gradient_evals / traces[0].batch_total)),
            })
            if cfg.certify:
                certify(cfg, name=name, problem=problem, out_dir=out_dir)
        return ExperimentResult(out_dir, traces, series, alpha, problem)
    except BaseException:
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise


@dataclass
class CertifyResult:
    constants: GlobalConstants
    system: CompositeSystem
    alpha: float
    bound: float
    rho: float
    certificate: object
    steady_state: np.ndarray | None
    report_path: str | None


def certify(cfg: ExperimentConfig, name: str = "certify",
            problem: Problem | None = None, out_dir: str | None = None) -> CertifyResult:
    """Measure the network constants and evaluate the convergence certificate.

    Emits a key=value report plus a CSV of the per-iteration constants.
    """
    problem = problem or build_problem(cfg)
    alpha = problem.alpha
    if not alpha > 0.0:
        raise ConfigError("certification needs a positive step-size")
    scan = theory_scan(problem.schedule, max(1, cfg.iterations),
                       tolerance=cfg.phi_tolerance)
    gc = scan.global_constants(problem.L, problem.mu, cfg.sigma)
    bound = step_size_bound(gc)
    system = build_composite(gc, alpha)
    rho = spectral_radius(system.M)
    rho_poly = char_poly_radius(system.M)
    cert = delta_certificate(system)
    steady = steady_state_bound(system) if rho < 1.0 else None

    report_path = None
    if out_dir is None:
        out_dir = resolve_output_dir(cfg, name)
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "theory_report.txt")
    with open(report_path, "w") as fh:
        fh.write(f"alpha={alpha!r}\n")
        fh.write(f"step_size_bound={bound!r}\n")
        fh.write(f"alpha_within_bound={alpha <= bound}\n")
        fh.write(f"max_certified_alpha={max_certified_alpha(gc)!r}\n")
        for key in ("n", "L", "mu", "sigma", "eta", "kappa", "varphi", "tau", "c", "psi", "a", "b"):
            fh.write(f"{key}={getattr(gc, key)!r}\n")
        fh.write(f"nu={gc.nu!r}\nzeta={gc.zeta!r}\n")
        for label, row in zip(("m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8"), system.m):
            fh.write(f"{label}={row!r}\n")
        for label, row in zip(("b1", "b2", "b3", "b4", "b5"), system.b):
            fh.write(f"{label}={row!r}\n")
        fh.write(f"spectral_radius={rho!r}\n")
        fh.write(f"spectral_radius_charpoly={rho_poly!r}\n")
        for line in cert.lines():
            fh.write(line + "\n")
        fh.write(f"converges={cert.passed and rho < 1.0}\n")
        if steady is not None:
            fh.write(f"steady_state_gap={steady[0]!r}\n")
            fh.write(f"steady_state_consensus={steady[1]!r}\n")
            fh.write(f"steady_state_tracking={steady[2]!r}\n")
        fh.write(f"phi_spread={scan.phi_spread!r}\n")
        fh.write(f"scan_truncated={scan.truncated}\n")
    slices = rebuild_slices(scan, problem.L)
    with open(os.path.join(out_dir, "constants.csv"), "w") as fh:
        fh.write("k,kappa,varphi,gamma,psi,tau,c,nu,zeta,eta,diameter,edge_utility\n")
        for k, s in zip(scan.slice_ks, slices):
            fh.write(f"{k}," + _float_csv((s.kappa_k, s.varphi_k, s.gamma_k, s.psi_k,
                                           s.tau_k, s.c_k, s.nu_k, s.zeta_k, s.eta_k))
                     + f",{s.diameter},{s.edge_utility}\n")
    return CertifyResult(gc, system, alpha, bound, rho, cert, steady, report_path)


SWEEPABLE = ("alpha", "sigma", "agents", "extra_edges")


def sweep(cfg: ExperimentConfig, parameter: str, values, name: str = "sweep") -> str:
    """Run the experiment once per parameter value and collate plateau levels."""
    if parameter not in SWEEPABLE:
        raise ConfigError(f"sweep parameter must be one of {SWEEPABLE}")
    out_dir = resolve_output_dir(cfg, name)
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for value in values:
        sub = replace(cfg, output_dir=os.path.join(out_dir, f"{parameter}_{value}"),
                      **{_sweep_field(parameter): _sweep_cast(parameter)(value)})
        result = run_experiment(sub, name=f"{parameter}_{value}")
        rows.append((float(value), result.plateau(0), result.plateau(1), result.plateau(2)))
    rows.sort()
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w") as fh:
        fh.write(f"{parameter},plateau_gap,plateau_consensus,plateau_tracking_sq\n")
        for row in rows:
            fh.write(_float_csv(row) + "\n")
    return path


def _sweep_field(parameter: str) -> str:
    return {"alpha": "alpha", "sigma": "sigma", "agents": "agents",
            "extra_edges": "extra_edges"}[parameter]


def _sweep_cast(parameter: str):
    return int if parameter in ("agents", "extra_edges") else float


def ingest_to_csv(cfg: ExperimentConfig, name: str = "ingest") -> str:
    """Materialize the configured dataset as CSV splits plus a summary."""
    split = ingest_split(cfg)
    out_dir = resolve_output_dir(cfg, name)
    os.makedirs(out_dir, exist_ok=True)
    write_split_csv(os.path.join(out_dir, "train.csv"), split.train_x, split.train_y)
    write_split_csv(os.path.join(out_dir, "test.csv"), split.test_x, split.test_y)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(f"provenance={split.provenance}\n")
        fh.write(f"train_samples={split.train_x.shape[0]}\n")
        fh.write(f"test_samples={split.test_x.shape[0]}\n")
        fh.write(f"features={split.train_x.shape[1] if split.train_x.size else 0}\n")
        fh.write(f"train_positive={int(np.sum(split.train_y > 0))}\n")
        fh.write(f"test_positive={int(np.sum(split.test_y > 0))}\n")
    return out_dir
