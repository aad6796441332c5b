"""Run orchestration: scenarios, per-round downlink planning, training and sweeps."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .data import (
    load_mnist, partition, quadratic_points, synthetic_classification, train_test_split,
)
from .errors import ConfigurationError, InfeasibleBudgetError
from .fading import (
    DeviceProfile, block_boundaries, coherence_for_lambda, fastest_coherence,
    padded_frame_len, pilot_positions, schedule_devices,
)
from .fedcore import FederatedState, RoundRecord, RoundTrace, TrainConfig, run_round
from .impairment import plan_downlink
from .models import LogisticModel, MLPModel, QuadraticModel
from .phymath import stream
from .power import PowerAllocation, dynamic_rate, optimal_allocation, static_rate
from .signaling import Scheme

NOISE_VAR = 1.0

VARIANTS = (
    ("conventional", "conventional", "plmf"),
    ("product-zf", "product", "zf"),
    ("product-plmf", "product", "plmf"),
    ("additive", "additive", "plmf"),
)


def worker_count() -> int:
    """Parallelism cap from ``COHERENTFL_THREADS`` (default 1)."""
    raw = os.environ.get("COHERENTFL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"COHERENTFL_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def pmap(fn, jobs) -> list:
    """Ordered map, spread over worker processes when more than one is allowed."""
    jobs = list(jobs)
    n = min(worker_count(), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, jobs))


def budget(cfg) -> float:
    """Per-slot transmit budget ``rho`` with the receiver noise fixed to one."""
    return NOISE_VAR * 10.0 ** (cfg["snr_db"] / 10.0)


def base_coherence(cfg) -> int | None:
    """Coherence time of the fastest dynamic device in the pool."""
    if cfg["pool"]["dynamic"] == 0:
        return None
    if cfg["coherence_time"] is not None:
        return cfg["coherence_time"]
    if cfg["lambda"] is None:
        raise ConfigurationError("set either lambda or coherence_time")
    return coherence_for_lambda(cfg["antennas"], cfg["lambda"])


# -- scenario -----------------------------------------------------------------


@dataclass
class Scenario:
    model: object
    theta0: np.ndarray
    profiles: list
    datasets: dict
    test_set: object
    m: int
    rho: float

    @property
    def d(self) -> int:
        return self.model.dim


def _device_datasets(cfg, k, seed):
    ds = cfg["dataset"]
    if ds["kind"] == "quadratic":
        rng = stream(seed, "quadratic")
        dim = ds["features"]
        lo, hi = ds["eigenvalues"]
        model = QuadraticModel.with_spectrum(np.linspace(lo, hi, dim), rng)
        sizes = cfg["pool"]["dataset_sizes"] or [ds["samples_per_device"]] * k
        if len(sizes) != k:
            raise ConfigurationError(f"dataset_sizes has {len(sizes)} entries for {k} devices")
        parts = [quadratic_points(n, ds["centre_scale"] * rng.standard_normal(dim),
                                  ds["spread"], rng) for n in sizes]
        return model, parts, None
    if ds["kind"] == "mnist":
        if not ds["images"] or not ds["labels"]:
            raise ConfigurationError("mnist dataset needs images and labels paths")
        full = load_mnist(ds["images"], ds["labels"])
    else:
        full = synthetic_classification(ds["n"], ds["features"], ds["classes"],
                                        ds["separation"], seed)
    train, test = train_test_split(full, ds["test_fraction"], seed)
    parts = partition(train, k, ds["partition"], ds["shards_per_device"], seed)
    mcfg = cfg["model"]
    if mcfg["kind"] == "mlp":
        model = MLPModel(full.p, mcfg["hidden"], full.classes, mcfg["l2"])
    elif mcfg["kind"] == "logistic":
        model = LogisticModel(full.p, full.classes, mcfg["l2"])
    else:
        raise ConfigurationError("the quadratic model needs the quadratic dataset")
    return model, parts, test


def build_scenario(cfg, seed: int | None = None) -> Scenario:
    """Model, device pool and local datasets for one seed.

    Static devices take the lowest ids.  Unless explicit coherence times are
    given, dynamic device ``j`` of ``n`` gets ``n - j`` times the base
    coherence time, so the last dynamic device is the fastest-fading one.
    """
    seed = cfg["seed"] if seed is None else seed
    pool = cfg["pool"]
    n_s, n_d = pool["static"], pool["dynamic"]
    k = n_s + n_d
    if k < 1:
        raise ConfigurationError("the device pool is empty")
    model, parts, test = _device_datasets(cfg, k, seed)
    times = pool["coherence_times"]
    if times is None:
        base = base_coherence(cfg)
        times = [base * (n_d - j) for j in range(n_d)]
    if len(times) != n_d:
        raise ConfigurationError(f"{len(times)} coherence times for {n_d} dynamic devices")
    profiles = [DeviceProfile.static(i, parts[i].n) for i in range(n_s)]
    profiles += [DeviceProfile.dynamic(n_s + j, int(times[j]), parts[n_s + j].n)
                 for j in range(n_d)]
    theta0 = model.init_params(stream(seed, "init"))
    return Scenario(model, theta0, profiles, dict(enumerate(parts)), test,
                    cfg["antennas"], budget(cfg))


# -- per-round downlink planning ------------------------------------------------


@dataclass(frozen=True)
class RoundPlan:
    cohort: tuple
    t_k: int | None
    allocation: PowerAllocation
    frame_len: int
    lam: float
    impairments: dict
    slots: float


def _fresh_subblocks(profile, t_k, frame_len, rng) -> tuple:
    """Sub-blocks whose channel is unchanged since the previous sub-block's pilot."""
    offset = int(rng.integers(profile.coherence_time))
    starts = np.asarray(block_boundaries(profile.coherence_time, frame_len, offset))
    out = []
    for q in range(1, frame_len // t_k + (frame_len % t_k > 0)):
        first = (q - 1) * t_k
        last = min((q + 1) * t_k, frame_len) - 1
        if np.searchsorted(starts, first, "right") == np.searchsorted(starts, last, "right"):
            out.append(q)
    return tuple(out)


def plan_round(cfg, scenario: Scenario, t: int, seed: int, scheme) -> RoundPlan:
    """Schedule the cohort and derive every participant's mask and noise."""
    scheme = Scheme(scheme)
    pool = cfg["pool"]
    n_static = sum(p.is_static for p in scenario.profiles)
    k_total = pool["k_total"] or len(scenario.profiles)
    k_static = pool["k_static"] if pool["k_static"] is not None else min(n_static, k_total)
    statics, dynamics = schedule_devices(scenario.profiles, k_total, k_static,
                                         stream(seed, t, "schedule"))
    m, d, rho = scenario.m, scenario.d, scenario.rho
    t_k = fastest_coherence(dynamics)
    flexible = cfg["flexible_placement"]
    if t_k is None:
        alloc = PowerAllocation(0.0, rho / m, rho, m + 1, m, NOISE_VAR)
        frame_len, lam = d, 0.0
    else:
        alloc = optimal_allocation(rho, t_k, m, NOISE_VAR)
        frame_len = d if flexible else padded_frame_len(d, t_k)
        lam = float(pilot_positions(frame_len, m, t_k, flexible).mean())
    impairments = {}
    for p in statics + dynamics:
        fresh = ()
        if (cfg["fresh_block_full_decode"] and not p.is_static and t_k is not None
                and p.coherence_time > t_k):
            fresh = _fresh_subblocks(p, t_k, frame_len, stream(seed, t, p.id, "phase"))
        impairments[p.id] = plan_downlink(
            scheme, p.device_class, d, m, t_k, alloc.rho_p, alloc.rho_d, NOISE_VAR,
            cfg["calibration"], flexible, fresh)
    slots = d * analysis.normalized_comm_cost(lam, scheme)
    cohort = tuple(p.id for p in statics + dynamics)
    return RoundPlan(cohort, t_k, alloc, frame_len, lam, impairments, slots)


# -- training -----------------------------------------------------------------


@dataclass
class TrainResult:
    trace: RoundTrace
    scenario: Scenario
    final_theta: np.ndarray
    sigma2_D: float
    dynamic_noise: float
    probes: list = field(default_factory=list)


def run_training(cfg, seed: int | None = None, scheme=None, fill=None,
                 rounds: int | None = None, n_probes: int = 0) -> TrainResult:
    """Full federated run; deterministic in ``(cfg, seed)``.

    ``sigma2_D`` is the largest expected squared norm of any dynamic
    device's downlink noise vector seen during the run.  ``dynamic_noise``
    is the mean per-coordinate noise variance on received coordinates of
    dynamic devices.
    """
    seed = cfg["seed"] if seed is None else seed
    scheme = Scheme(scheme or cfg["scheme"])
    tc = TrainConfig(cfg["tau"], cfg["eta_local"], cfg["batch_size"],
                     rounds or cfg["rounds"], fill or cfg["fill"], scheme)
    sc = build_scenario(cfg, seed)
    state = FederatedState.start(sc.model, sc.theta0, sc.profiles, sc.datasets, sc.test_set)
    trace = RoundTrace()
    probe_rounds = set()
    if n_probes:
        probe_rounds = {int(r) for r in np.linspace(0, tc.rounds, n_probes + 1)[:-1]}
    probes = []
    cumulative = 0.0
    sigma2_D = 0.0
    noise_sum, noise_n = 0.0, 0
    dynamic_ids = {p.id for p in sc.profiles if not p.is_static}
    for t in range(tc.rounds):
        if t in probe_rounds:
            probes.append(state.theta.copy())
        plan = plan_round(cfg, sc, t, seed, scheme)
        for k in plan.cohort:
            if k in dynamic_ids:
                imp = plan.impairments[k]
                s2 = np.broadcast_to(np.asarray(imp.sigma2, dtype=float), (sc.d,))
                received = s2[imp.mask.support]
                sigma2_D = max(sigma2_D, float(received.sum()))
                noise_sum += float(received.sum())
                noise_n += received.size
        rec = run_round(state, tc, plan.cohort, plan.impairments, seed)
        cumulative += plan.slots
        trace.append(RoundRecord(
            round=rec.round, global_loss=rec.global_loss, grad_norm_sq=rec.grad_norm_sq,
            model_diff_sq=rec.model_diff_sq, test_accuracy=rec.test_accuracy,
            comm_cost_slots=cumulative, normalized_cost=cumulative / sc.d, lam=plan.lam,
            scheme=rec.scheme, fill_strategy=rec.fill_strategy, seed=seed))
    probes.append(state.theta.copy())
    dyn = noise_sum / noise_n if noise_n else 0.0
    return TrainResult(trace, sc, state.theta.copy(), sigma2_D, dyn, probes)


def bound_report(cfg, result: TrainResult, seed: int | None = None,
                 T: int | None = None) -> analysis.BoundReport:
    """Measure the assumption constants and evaluate the convergence bound."""
    seed = cfg["seed"] if seed is None else seed
    sc = result.scenario
    ids = sorted(sc.datasets)
    datasets = [sc.datasets[i] for i in ids]
    batch = cfg["batch_size"]
    f0 = result.trace.records[0].global_loss
    if isinstance(sc.model, QuadraticModel):
        L = float(np.linalg.eigvalsh(sc.model.hessian)[-1])
        gamma2 = max(analysis.exact_quadratic_minibatch_variance(sc.model, ds, min(batch, ds.n))
                     for ds in datasets)
        omega2 = max(analysis.heterogeneity(sc.model, p, datasets) for p in result.probes)
        consts = analysis.AssumptionConstants(L, gamma2, omega2, result.sigma2_D,
                                              cfg["eta_local"], cfg["tau"])
        _, f_star = analysis.quadratic_optimum(sc.model, datasets)
    else:
        consts = analysis.estimate_constants(
            sc.model, datasets, result.probes, batch, cfg["eta_local"], cfg["tau"],
            result.sigma2_D, stream(seed, "analysis"), trials=cfg["analysis"]["trials"])
        steps = cfg["analysis"]["f_star_factor"] * len(result.trace) * cfg["tau"]
        f_star = analysis.estimate_f_star(sc.model, datasets, sc.theta0, steps,
                                          1.0 / max(consts.L, 1e-12))
        f_star = min(f_star, float(result.trace.column("global_loss").min()))
    return analysis.check_bound(result.trace, consts, f0, f_star, T, cfg["fill"])


# -- scheme comparison ------------------------------------------------------------


def _compare_job(job):
    cfg, lam, label, scheme, fill, seed = job
    local = dict(cfg)
    local["lambda"] = lam
    local["coherence_time"] = None
    local["pool"] = dict(cfg["pool"])
    if lam == 0:
        local["pool"]["dynamic"] = 0
    res = run_training(local, seed, scheme, fill)
    return lam, label, seed, res.trace, res.dynamic_noise


@dataclass(frozen=True)
class CompareSummary:
    lam: float
    variant: str
    final_accuracy: float
    cost_to_target: float
    dynamic_noise: float


def compare_schemes(cfg, lambdas=None, seeds=None) -> tuple:
    """Run every scheme variant on identical seeds.

    Returns ``(rows, summaries)``: one row per (lambda, variant, seed,
    round) and one summary per (lambda, variant) with the seed-mean final
    accuracy and the normalized cost at which the seed-mean accuracy first
    reaches the target (``inf`` if never).
    """
    lambdas = list(lambdas if lambdas is not None else
                   (cfg["compare"]["lambdas"] or [cfg["lambda"]]))
    seeds = list(seeds if seeds is not None else cfg["compare"]["seeds"])
    target = cfg["compare"]["target_accuracy"]
    jobs = [(cfg, lam, label, scheme, fill, s)
            for lam in lambdas for label, scheme, fill in VARIANTS for s in seeds]
    results = pmap(_compare_job, jobs)
    rows = []
    summaries = []
    for lam in lambdas:
        for label, _, _ in VARIANTS:
            runs = [r for r in results if r[0] == lam and r[1] == label]
            for _, _, s, trace, _ in runs:
                for rec in trace.records:
                    rows.append({"lambda": lam, "scheme": label, "seed": s,
                                 "round": rec.round, "cost": rec.normalized_cost,
                                 "accuracy": rec.test_accuracy})
            acc = np.mean([r[3].column("test_accuracy") for r in runs], axis=0)
            cost = runs[0][3].column("normalized_cost")
            hit = np.flatnonzero(acc >= target)
            summaries.append(CompareSummary(
                lam, label, float(acc[-1]), float(cost[hit[0]]) if hit.size else math.inf,
                float(np.mean([r[4] for r in runs]))))
    return rows, summaries


# -- power sweep ----------------------------------------------------------------


POWER_COLUMNS = ("M", "T_K", "rho", "rho_p", "rho_d", "gamma_eff", "static_rate",
                 "dynamic_rate", "stderr", "static_stderr", "status")


def _sweep_point(job):
    idx, m, t_k, rho, trials, seed = job
    row = dict.fromkeys(POWER_COLUMNS, "")
    row.update(M=m, T_K=t_k, rho=rho)
    try:
        alloc = optimal_allocation(rho, t_k, m, NOISE_VAR)
    except InfeasibleBudgetError as exc:
        row["status"] = f"infeasible: rho below {exc.min_rho:.6g}"
        return row
    except ConfigurationError:
        row["status"] = "infeasible: T_K <= M"
        return row
    s = static_rate(alloc.rho_p, m, t_k, NOISE_VAR, trials, stream(seed, idx, "static"))
    dyn = dynamic_rate(alloc, trials, stream(seed, idx, "dynamic"))
    row.update(rho_p=alloc.rho_p, rho_d=alloc.rho_d, gamma_eff=alloc.gamma_eff,
               static_rate=s.mean, dynamic_rate=dyn.mean, stderr=dyn.stderr,
               static_stderr=s.stderr, status="ok")
    return row


def power_sweep(cfg, seed: int | None = None) -> list:
    """Optimal allocation and Monte Carlo rates over the configured grid."""
    seed = cfg["seed"] if seed is None else seed
    ps = cfg["power_sweep"]
    grid = [(m, t, r) for m in ps["antennas"] for t in ps["coherence_times"] for r in ps["rho"]]
    jobs = [(i, m, t, r, ps["trials"], seed) for i, (m, t, r) in enumerate(grid)]
    return pmap(_sweep_point, jobs)


__all__ = [
    "Scenario", "RoundPlan", "TrainResult", "CompareSummary", "VARIANTS", "POWER_COLUMNS",
    "budget", "base_coherence", "build_scenario", "plan_round", "run_training",
    "bound_report", "compare_schemes", "power_sweep", "pmap", "worker_count",
]
