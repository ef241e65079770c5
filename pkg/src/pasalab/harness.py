"""Seeded experiment orchestration: evaluation runs, cycle studies, and the
singleton-cell mechanism check, with CSV/JSON persistence.

Everything is a pure function of the configuration: the root seed expands to
per-replication, per-purpose streams via SeedSequence(seed, spawn_key=(rep,
purpose)), so adding replications never perturbs earlier ones, and repeated
runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .cycles import CycleDecomposition, CycleStats, compute_cycles, monte_carlo_cycle_stats
from .errors import ConfigError, ConvergenceError
from .learner import CellValueTable
from .mdp import (
    NOISE_KINDS,
    NOISE_UNIFORM,
    NOISE_UNIFORM_EXCLUDING_CURRENT,
    MdpModel,
    Policy,
    exact_action_values,
    sample_action,
    stationary_distribution,
    transition_matrix,
)
from .errors import CapacityError
from .partition import PartitionTree, new_partition
from .pasa import PasaConfig, VisitEstimator, reselect
from .scores import bellman_score, mse_score, restricted_score

CSV_COLUMNS = ("run_id", "replication", "t", "L", "mse", "rho_changes", "singleton_coverage")

# purposes for per-replication stream derivation
_STREAM_SKELETON = 0
_STREAM_REWARDS = 1
_STREAM_POLICY = 2
_STREAM_TRAJECTORY = 3


@dataclass(frozen=True)
class ExperimentConfig:
    S: int = 256
    A: int = 2
    B: int = 16
    X: int = 64
    delta: float = 1e-3
    delta_pi: float = 1e-3
    gamma: float = 0.9
    noise_kind: str = NOISE_UNIFORM
    eta: float = 0.01
    theta_threshold: float = 0.02
    nu: int | None = None
    alpha: float = 0.05
    iterations: int = 200_000
    replications: int = 1
    seed: int = 0
    epsilon2_target: float = 0.01
    k_const: float = 0.7
    confidence: float = 0.99
    score_interval: int | None = None
    s_grid: tuple[int, ...] = (256, 1024, 4096)
    trials: int = 2000
    workers: int = 1

    def validate(self) -> None:
        try:
            if not (1 <= self.B <= self.X <= self.S):
                raise ConfigError(f"need 1 <= B <= X <= S, got B={self.B}, X={self.X}, S={self.S}")
            if self.A < 1:
                raise ConfigError(f"A must be positive, got {self.A}")
            for name in ("delta", "delta_pi"):
                v = getattr(self, name)
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"{name} must lie in [0, 1], got {v}")
            if not 0.0 <= self.gamma < 1.0:
                raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
            if self.noise_kind not in NOISE_KINDS:
                raise ConfigError(f"noise_kind must be one of {NOISE_KINDS}")
            if not 0.0 < self.eta <= 1.0:
                raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
            if self.theta_threshold <= 0:
                raise ConfigError(f"theta_threshold must be positive, got {self.theta_threshold}")
            if self.nu is not None and self.nu < 1:
                raise ConfigError(f"nu must be >= 1, got {self.nu}")
            if not 0.0 < self.alpha <= 1.0:
                raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
            if self.iterations < 0:
                raise ConfigError(f"iterations must be nonnegative, got {self.iterations}")
            if self.replications < 1:
                raise ConfigError(f"replications must be >= 1, got {self.replications}")
            if self.epsilon2_target <= 0:
                raise ConfigError(f"epsilon2_target must be positive, got {self.epsilon2_target}")
            if self.k_const <= math.sqrt(math.pi / 8.0):
                raise ConfigError(f"k_const must exceed sqrt(pi/8), got {self.k_const}")
            if not 0.0 < self.confidence < 1.0:
                raise ConfigError(f"confidence must lie in (0, 1), got {self.confidence}")
            if self.score_interval is not None and self.score_interval < 1:
                raise ConfigError(f"score_interval must be >= 1, got {self.score_interval}")
            if self.trials < 2:
                raise ConfigError(f"trials must be >= 2, got {self.trials}")
            if any(s < 1 for s in self.s_grid) or not self.s_grid:
                raise ConfigError(f"s_grid entries must be positive, got {self.s_grid}")
            if self.workers < 1:
                raise ConfigError(f"workers must be >= 1, got {self.workers}")
        except ConfigError:
            raise
        except Exception as exc:  # malformed field types
            raise ConfigError(str(exc)) from exc

    def pasa_config(self) -> PasaConfig:
        return PasaConfig(eta=self.eta, theta_threshold=self.theta_threshold, nu=self.nu)

    def resolved_nu(self, X: int | None = None) -> int:
        return self.pasa_config().resolved_nu(self.X if X is None else X)

    def resolved_score_interval(self, X: int | None = None) -> int:
        if self.score_interval is not None:
            return self.score_interval
        return 10 * self.resolved_nu(X)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s_grid"] = list(self.s_grid)
        return d

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        kwargs = {}
        fields = {f: t for f, t in cls.__annotations__.items()}
        for key, raw in mapping.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce_field(key, raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                mapping = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON config {path}: {exc}") from exc
        else:
            mapping = {}
            for line_no, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping)


_INT_FIELDS = {"S", "A", "B", "X", "iterations", "replications", "seed", "trials", "workers"}
_OPT_INT_FIELDS = {"nu", "score_interval"}
_FLOAT_FIELDS = {
    "delta",
    "delta_pi",
    "gamma",
    "eta",
    "theta_threshold",
    "alpha",
    "epsilon2_target",
    "k_const",
    "confidence",
}


def _coerce_field(key: str, raw):
    if key in _INT_FIELDS:
        return int(raw)
    if key in _OPT_INT_FIELDS:
        if raw is None or (isinstance(raw, str) and raw.lower() in ("", "none", "auto")):
            return None
        return int(raw)
    if key in _FLOAT_FIELDS:
        return float(raw)
    if key == "s_grid":
        if isinstance(raw, str):
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
        return tuple(int(p) for p in raw)
    if key == "noise_kind":
        return str(raw)
    raise ConfigError(f"unknown config key {key!r}")


def replication_stream(seed: int, replication: int, purpose: int) -> np.random.Generator:
    """Fixed derivation of independent streams from the root seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, purpose)))


def build_instance(config: ExperimentConfig, replication: int) -> tuple[MdpModel, Policy]:
    """Model and policy for one replication, drawn from dedicated streams."""
    rng_skel = replication_stream(config.seed, replication, _STREAM_SKELETON)
    rng_rew = replication_stream(config.seed, replication, _STREAM_REWARDS)
    rng_pol = replication_stream(config.seed, replication, _STREAM_POLICY)
    skeleton = rng_skel.integers(0, config.S, size=(config.S, config.A), dtype=np.int64)
    rewards = rng_rew.random(size=(config.S, config.A))
    model = MdpModel(
        S=config.S,
        A=config.A,
        skeleton=skeleton,
        rewards=rewards,
        delta=config.delta,
        gamma=config.gamma,
        noise_kind=config.noise_kind,
    )
    preferred = rng_pol.integers(0, config.A, size=config.S, dtype=np.int64)
    policy = Policy(
        S=config.S,
        A=config.A,
        preferred=preferred,
        delta_pi=config.delta_pi if config.A > 1 else 0.0,
    )
    return model, policy


@dataclass(frozen=True)
class ScoreRow:
    t: int
    L: float
    mse: float | None
    rho_changes: int
    singleton_coverage: float


@dataclass
class ReplicationRecord:
    replication: int
    X: int
    rows: list[ScoreRow]
    c1: int
    c: int
    rho_changes: int
    rho_change_times: list[int]
    singleton_coverage: float
    final_L: float
    final_mse: float | None
    final_L_outside_recurrent: float
    tree: dict
    theta: list[list[float]]
    wall_clock: float


@dataclass
class RunRecord:
    run_id: str
    config: ExperimentConfig
    replications: list[ReplicationRecord]
    wall_clock: float


def run_id_for(config: ExperimentConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


def _kernel_tree_args(tree: PartitionTree) -> dict:
    q, r = divmod(tree.S, tree.B)
    return {
        "q": q,
        "threshold": r * (q + 1),
        "root": tree.root,
        "node_mid": tree.node_mid,
        "lower_child": tree.lower_child,
        "upper_child": tree.upper_child,
        "lower_cell": tree.rho,
        "B": tree.B,
    }


def _run_replication(
    config: ExperimentConfig,
    replication: int,
    X: int | None = None,
    adapt: bool = True,
    trace_sink=None,
) -> ReplicationRecord:
    """One seeded interleaved run: environment step, TD update, visit tick.

    ``adapt=False`` freezes the initial near-uniform partition (no visit
    tracking, no reselection) for baseline comparisons; the trajectory is
    identical either way because random consumption is fixed per iteration.
    """
    start_time = time.perf_counter()
    X = config.X if X is None else X
    S, A = config.S, config.A
    model, policy = build_instance(config, replication)
    context = f"replication {replication} (seed {config.seed})"
    try:
        psi = stationary_distribution(transition_matrix(model, policy), tol=1e-9).psi
    except ConvergenceError as exc:
        raise ConvergenceError(f"{context}: stationary distribution failed: {exc}") from exc
    try:
        q_true = exact_action_values(model, policy)
    except CapacityError:
        q_true = None
    composed = model.skeleton[np.arange(S), policy.preferred]
    decomp = compute_cycles(composed)
    recurrent = decomp.in_cycle

    pasa_cfg = config.pasa_config()
    nu = pasa_cfg.resolved_nu(X)
    interval = config.resolved_score_interval(X)
    tree = new_partition(S, config.B, X)
    estimator = VisitEstimator.initialized(tree, config.eta)
    table = CellValueTable(X, A, config.alpha)

    rng = replication_stream(config.seed, replication, _STREAM_TRAJECTORY)
    rho_changes = 0
    rho_change_times: list[int] = []

    def make_row(n: int) -> ScoreRow:
        L = bellman_score(table, tree, model, policy, psi)
        mse = None if q_true is None else mse_score(table, tree, q_true, psi)
        cells = tree.cells_of(decomp.union_states)
        coverage = float(tree.sigma[cells].mean())
        return ScoreRow(t=n, L=L, mse=mse, rho_changes=rho_changes, singleton_coverage=coverage)

    rows = [make_row(0)]
    u_init = rng.random(2)
    s = 0
    a = sample_action(policy, s, float(u_init[0]), float(u_init[1]))
    n = 0
    tree_args = _kernel_tree_args(tree)
    while n < config.iterations:
        stops = [config.iterations]
        if adapt:
            next_reselect = ((n + nu - 1) // nu) * nu
            if next_reselect < config.iterations:
                stops.append(next_reselect + 1)
        next_score = ((n // interval) + 1) * interval
        if next_score < config.iterations:
            stops.append(next_score)
        end = min(stops)
        quads = rng.random((end - n, 4))
        s, a = _kernels.eval_chunk(
            model.skeleton,
            model.rewards,
            policy.preferred,
            S,
            A,
            model.delta,
            policy.delta_pi,
            model.gamma,
            1 if model.noise_kind == NOISE_UNIFORM_EXCLUDING_CURRENT else 0,
            tree_args["q"],
            tree_args["threshold"],
            tree_args["root"],
            tree_args["node_mid"],
            tree_args["lower_child"],
            tree_args["upper_child"],
            tree_args["lower_cell"],
            tree_args["B"],
            table.theta,
            config.alpha,
            estimator.values,
            estimator.timestamps,
            config.eta,
            1 if adapt else 0,
            n,
            s,
            a,
            quads,
        )
        n = end
        if adapt and (n - 1) % nu == 0:
            old_tree = tree
            tree, changed, _ = reselect(estimator, tree, pasa_cfg, now=n)
            if changed:
                rho_changes += 1
                rho_change_times.append(n - 1)
                table.handle_resplit(old_tree, tree)
                tree_args = _kernel_tree_args(tree)
            if trace_sink is not None:
                u_now = estimator.materialized(n)
                top = np.argsort(u_now)[::-1][:5]
                trace_sink(
                    {
                        "replication": replication,
                        "t": n - 1,
                        "changed": bool(changed),
                        "rho": [int(v) for v in tree.rho],
                        "top_cells": [[int(i), float(u_now[i])] for i in top],
                    }
                )
        if n % interval == 0 or n == config.iterations:
            rows.append(make_row(n))

    final = rows[-1]
    outside = restricted_score(table, tree, model, policy, psi, ~recurrent)
    return ReplicationRecord(
        replication=replication,
        X=X,
        rows=rows,
        c1=int(decomp.lengths[0]),
        c=decomp.total,
        rho_changes=rho_changes,
        rho_change_times=rho_change_times,
        singleton_coverage=final.singleton_coverage,
        final_L=final.L,
        final_mse=final.mse,
        final_L_outside_recurrent=outside,
        tree=tree.to_dict(),
        theta=[[float(v) for v in row] for row in table.theta],
        wall_clock=time.perf_counter() - start_time,
    )


def _replication_worker(args) -> ReplicationRecord:
    config_dict, replication = args
    config = ExperimentConfig.from_mapping(config_dict)
    return _run_replication(config, replication)


def run_policy_evaluation(config: ExperimentConfig, trace_sink=None) -> RunRecord:
    """Full seeded evaluation run across replications."""
    config.validate()
    start_time = time.perf_counter()
    if config.workers > 1 and config.replications > 1 and trace_sink is None:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(
                pool.map(
                    _replication_worker,
                    [(config.to_dict(), rep) for rep in range(config.replications)],
                )
            )
    else:
        records = [
            _run_replication(config, rep, trace_sink=trace_sink)
            for rep in range(config.replications)
        ]
    return RunRecord(
        run_id=run_id_for(config),
        config=config,
        replications=records,
        wall_clock=time.perf_counter() - start_time,
    )


def run_cycle_study(config: ExperimentConfig) -> list[CycleStats]:
    """Monte Carlo cycle statistics across the configured S grid."""
    config.validate()
    out = []
    for idx, S in enumerate(config.s_grid):
        seed = np.random.SeedSequence(config.seed, spawn_key=(idx,))
        out.append(monte_carlo_cycle_stats(S, config.trials, seed))
    return out


@dataclass
class TheoremSeedResult:
    replication: int
    C: int
    X: int
    singleton_coverage: float
    rho_change_times: list[int]
    L_final: float
    L_static: float
    L_outside_recurrent: float
    clause_singletons: bool
    clause_rho_fixed: bool
    clause_score: bool
    epsilon2_ok: bool
    passed: bool


@dataclass
class TheoremReport:
    config: ExperimentConfig
    results: list[TheoremSeedResult]
    passed_count: int
    required_count: int
    ok: bool

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "results": [asdict(r) for r in self.results],
            "passed_count": self.passed_count,
            "required_count": self.required_count,
            "ok": self.ok,
        }


def run_theorem_check(
    config: ExperimentConfig,
    relative_improvement: float = 0.1,
    min_pass_fraction: float = 0.8,
) -> TheoremReport:
    """Mechanism check: recurrent states end in singleton cells, the split
    vector settles, and the final score beats a static uniform aggregation
    of the same size by the required factor.

    X is set per instance to C * ceil(log2 S) + B (capped at S), with C from
    the cycle decomposition of the composed deterministic map.
    """
    config.validate()
    if config.delta <= 0.0:
        raise ConfigError("theorem check requires delta > 0 (stationary distribution undefined at delta = 0)")
    log2_s = max(1, (config.S - 1).bit_length())
    results = []
    for rep in range(config.replications):
        model, policy = build_instance(config, rep)
        composed = model.skeleton[np.arange(config.S), policy.preferred]
        decomp = compute_cycles(composed)
        X_inst = min(config.S, decomp.total * log2_s + config.B)
        pasa_rec = _run_replication(config, rep, X=X_inst, adapt=True)
        static_rec = _run_replication(config, rep, X=X_inst, adapt=False)
        cutoff = (2 * config.iterations) // 3
        clause_a = pasa_rec.singleton_coverage == 1.0
        clause_b = all(t < cutoff for t in pasa_rec.rho_change_times)
        clause_c = pasa_rec.final_L <= relative_improvement * static_rec.final_L
        eps_ok = (
            pasa_rec.final_L <= config.epsilon2_target
            and pasa_rec.final_L_outside_recurrent <= config.epsilon2_target
        )
        results.append(
            TheoremSeedResult(
                replication=rep,
                C=decomp.total,
                X=X_inst,
                singleton_coverage=pasa_rec.singleton_coverage,
                rho_change_times=pasa_rec.rho_change_times,
                L_final=pasa_rec.final_L,
                L_static=static_rec.final_L,
                L_outside_recurrent=pasa_rec.final_L_outside_recurrent,
                clause_singletons=clause_a,
                clause_rho_fixed=clause_b,
                clause_score=clause_c,
                epsilon2_ok=eps_ok,
                passed=clause_a and clause_b and clause_c,
            )
        )
    passed = sum(1 for r in results if r.passed)
    required = math.ceil(min_pass_fraction * config.replications)
    return TheoremReport(
        config=config,
        results=results,
        passed_count=passed,
        required_count=required,
        ok=passed >= required,
    )


def format_csv(record: RunRecord) -> str:
    """Frozen evaluate CSV: one row per (replication, scoring point)."""
    lines = [",".join(CSV_COLUMNS)]
    for rec in record.replications:
        for row in rec.rows:
            mse = "" if row.mse is None else repr(row.mse)
            lines.append(
                f"{record.run_id},{rec.replication},{row.t},{repr(row.L)},{mse},"
                f"{row.rho_changes},{repr(row.singleton_coverage)}"
            )
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> list[dict]:
    """Inverse of format_csv, for round-trip checks."""
    lines = [ln for ln in text.splitlines() if ln]
    header = lines[0].split(",")
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        out.append(
            {
                "run_id": parts[0],
                "replication": int(parts[1]),
                "t": int(parts[2]),
                "L": float(parts[3]),
                "mse": None if parts[4] == "" else float(parts[4]),
                "rho_changes": int(parts[5]),
                "singleton_coverage": float(parts[6]),
            }
        )
    return out


def summary_dict(record: RunRecord) -> dict:
    """JSON summary: config plus per-replication final state."""
    return {
        "run_id": record.run_id,
        "config": record.config.to_dict(),
        "wall_clock": record.wall_clock,
        "replications": [
            {
                "replication": rec.replication,
                "X": rec.X,
                "c1": rec.c1,
                "c": rec.c,
                "rho_changes": rec.rho_changes,
                "rho_change_times": rec.rho_change_times,
                "singleton_coverage": rec.singleton_coverage,
                "final_L": rec.final_L,
                "final_mse": rec.final_mse,
                "final_L_outside_recurrent": rec.final_L_outside_recurrent,
                "tree": rec.tree,
                "theta": rec.theta,
                "wall_clock": rec.wall_clock,
            }
            for rec in record.replications
        ],
    }


def write_outputs(record: RunRecord, out_base: str) -> tuple[str, str]:
    """Write <base>.csv and <base>.json; returns the two paths."""
    base = out_base[:-4] if out_base.endswith(".csv") else out_base
    csv_path = base + ".csv"
    json_path = base + ".json"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(format_csv(record))
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary_dict(record), fh, indent=2)
        fh.write("\n")
    return csv_path, json_path


def write_cycle_csv(stats: list[CycleStats], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CycleStats.CSV_HEADER + "\n")
        for st in stats:
            fh.write(st.csv_row() + "\n")
