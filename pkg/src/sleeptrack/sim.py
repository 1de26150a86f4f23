"""Episode simulation, cost accounting, learning campaigns, and sweeps.

Episodes start with the object at the network's start location, its
position known, and every sensor awake.  Tracking and energy costs accrue
for every in-network step (the initial step included) and stop the moment
the exit detector fires.  Tradeoff points normalize episode totals by the
expected, not realized, lifetime.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import cost_tables
from .cost_tables import CostTable, learn_update
from .exceptions import ConfigError, RunawayEpisodeError
from .filtering import (
    DEFAULT_PARTICLES,
    DenseBelief,
    ParticleBelief,
    belief_update,
    estimate,
    particle_update,
)
from .model import (
    SIGNAL_PEAK,
    NetworkModel,
    distance,
    new_sleep_state,
    residual_step,
)
from .policy import (
    AllAsleepPolicy,
    AllAwakePolicy,
    act,
    make_fcr_policy,
    solve_qmdp_policy,
)

STEP_CAP = 10**6

POLICY_KINDS = ("qmdp", "fcr", "all-awake", "all-asleep")
TABLE_SOURCES = ("asleep", "greedy", "learned")

CSV_COLUMNS = (
    "network",
    "policy",
    "tdelta_source",
    "c",
    "tracking_per_time",
    "tracking_se",
    "energy_per_time",
    "energy_se",
    "runs",
    "seed",
)


@dataclass(eq=False)
class EpisodeResult:
    """Totals for one simulated episode."""

    tracking: float
    energy: float
    duration: int
    trace: list | None = None


@dataclass(eq=False)
class TradeoffPoint:
    """One point of an energy-tracking tradeoff curve."""

    network: str
    policy: str
    tdelta_source: str
    c: float
    tracking_per_time: float
    tracking_se: float
    energy_per_time: float
    energy_se: float
    runs: int
    seed: int


@dataclass
class LearningSchedule:
    """Warm-up/recording protocol for learning campaigns."""

    warmup: int = 100
    recorded: int = 50
    resolve_every: int = 5
    alpha: float = 0.01


# ---------------------------------------------------------------------------
# Lifetimes


def expected_lifetime(model: NetworkModel, rng: np.random.Generator = None, runs: int = 100_000) -> float:
    """Expected steps the object spends in the network from the start.

    Exact linear solve for finite kernels; Monte-Carlo mean for interval
    networks (rng required).
    """
    if model.is_finite:
        return float(model.kernel.expected_absorption_times()[model.start_index()])
    if rng is None:
        raise ValueError("continuous lifetime estimation needs an rng")
    mean, _ = mc_lifetime(model, runs, rng)
    return mean


def mc_lifetime(model: NetworkModel, runs: int, rng: np.random.Generator, step_cap=STEP_CAP):
    """Monte-Carlo (mean, standard error) of the network lifetime."""
    durations = sample_durations(model, runs, rng, step_cap)
    se = float(durations.std(ddof=1) / np.sqrt(runs)) if runs > 1 else np.inf
    return float(durations.mean()), se


def sample_durations(model: NetworkModel, runs: int, rng: np.random.Generator, step_cap=STEP_CAP):
    """Vectorized absorption times of a batch of independent trajectories."""
    durations = np.zeros(runs, dtype=np.int64)
    if model.is_finite:
        m = model.locations.size
        cum = np.cumsum(model.kernel.matrix, axis=1)
        state = np.full(runs, model.start_index())
        alive = np.ones(runs, dtype=bool)
        for k in range(1, step_cap + 1):
            draws = rng.random(int(alive.sum()))
            nxt = (cum[state[alive]] < draws[:, None]).sum(axis=1)
            state[alive] = nxt
            died = np.zeros(runs, dtype=bool)
            died[alive] = nxt == m
            durations[died] = k
            alive &= ~died
            if not alive.any():
                return durations
    else:
        x = np.full(runs, model.start)
        alive = np.ones(runs, dtype=bool)
        for k in range(1, step_cap + 1):
            moved = model.kernel.sample(x[alive], rng)
            died = np.zeros(runs, dtype=bool)
            died[alive] = np.isnan(moved)
            x[alive] = np.where(np.isnan(moved), x[alive], moved)
            durations[died] = k
            alive &= ~died
            if not alive.any():
                return durations
    raise RunawayEpisodeError(f"walkers still alive after {step_cap} steps")


# ---------------------------------------------------------------------------
# Episodes


def run_episode(
    model: NetworkModel,
    policy,
    rng: np.random.Generator,
    particles: int = DEFAULT_PARTICLES,
    record_trace: bool = False,
    step_cap: int = STEP_CAP,
    on_step=None,
) -> EpisodeResult:
    """Simulate one episode from the known start until the object exits.

    ``on_step(p_prev, p_now, s, r_now)`` is invoked after every filter
    update (learning campaigns hook in here).
    """
    if model.is_finite:
        return _run_episode_finite(model, policy, rng, record_trace, step_cap, on_step)
    return _run_episode_continuous(
        model, policy, rng, particles, record_trace, step_cap, on_step
    )


def _run_episode_finite(model, policy, rng, record_trace, step_cap, on_step):
    locs = model.locations
    m = locs.size
    n = model.n_sensors
    c = model.energy_price
    cum = np.cumsum(model.kernel.matrix, axis=1)
    binary = np.array([s.kind == "binary" for s in model.sensors])
    sensor_locs = model.sensor_locations()
    noise_std = np.array(
        [np.sqrt(s.noise_var) if s.kind == "gaussian" else 0.0 for s in model.sensors]
    )

    b = model.start_index()
    p = DenseBelief.point_mass(model, model.start)
    r = new_sleep_state(n)
    tracking = 0.0
    u = act(model, policy, p, r, rng)
    # The start location is known, so no sensing happens at step 0; sensors
    # whose first input puts them to sleep never power on at all.
    awake0 = int((u == 0).sum())
    energy = awake0 * c
    trace = [] if record_trace else None
    if record_trace:
        trace.append((0, float(locs[b]), estimate(p, model.dist), awake0, energy))

    for k in range(1, step_cap + 1):
        b = int((cum[b] < rng.random()).sum())
        r = residual_step(r, u)
        if b == m:
            return EpisodeResult(tracking, energy, k, trace)
        awake = np.flatnonzero(r == 0)
        s = np.full(n + 1, np.nan)
        s[n] = 0.0
        if awake.size:
            truth = locs[b]
            readings = (sensor_locs[awake] == truth).astype(float)
            gauss = ~binary[awake]
            if gauss.any():
                idx = awake[gauss]
                means = SIGNAL_PEAK / ((sensor_locs[idx] - truth) ** 2 + 1.0)
                readings[gauss] = means + noise_std[idx] * rng.standard_normal(idx.size)
            s[awake] = readings
        p_prev = p
        p = belief_update(p, model, s, r)
        b_hat = estimate(p, model.dist)
        track_cost = distance(model.dist, locs[b], b_hat)
        g = track_cost + c * awake.size
        tracking += track_cost
        energy += c * awake.size
        if record_trace:
            trace.append((k, float(locs[b]), b_hat, int(awake.size), g))
        if on_step is not None:
            on_step(p_prev, p, s, r)
        u = act(model, policy, p, r, rng)
    raise RunawayEpisodeError(f"episode exceeded {step_cap} steps")


def _run_episode_continuous(model, policy, rng, particles, record_trace, step_cap, on_step):
    n = model.n_sensors
    c = model.energy_price
    b = model.start
    p = ParticleBelief.point_mass(model.start, particles)
    r = new_sleep_state(n)
    tracking = 0.0
    u = act(model, policy, p, r, rng)
    awake0 = int((u == 0).sum())
    energy = awake0 * c
    trace = [] if record_trace else None
    if record_trace:
        trace.append((0, b, estimate(p, model.dist), awake0, energy))

    for k in range(1, step_cap + 1):
        moved = model.kernel.sample(np.array([b]), rng)[0]
        r = residual_step(r, u)
        if np.isnan(moved):
            return EpisodeResult(tracking, energy, k, trace)
        b = float(moved)
        s = np.full(n + 1, np.nan)
        s[n] = 0.0
        awake = np.flatnonzero(r == 0)
        for j in awake:
            s[j] = model.sensors[j].draw(b, rng)
        p_prev = p
        p = particle_update(p, model, s, r, rng)
        b_hat = estimate(p, model.dist)
        track_cost = distance(model.dist, b, b_hat)
        g = track_cost + c * awake.size
        tracking += track_cost
        energy += c * awake.size
        if record_trace:
            trace.append((k, b, b_hat, int(awake.size), g))
        if on_step is not None:
            on_step(p_prev, p, s, r)
        u = act(model, policy, p, r, rng)
    raise RunawayEpisodeError(f"episode exceeded {step_cap} steps")


# ---------------------------------------------------------------------------
# Learning campaigns


def run_learning_campaign(
    model: NetworkModel,
    policy_kind: str,
    init_table: CostTable,
    schedule: LearningSchedule,
    rng: np.random.Generator,
    particles: int = DEFAULT_PARTICLES,
    u_max: int | None = None,
):
    """Warm up a learned table, then record a tradeoff point while learning.

    The table keeps evolving during recorded runs.  Point-mass values are
    re-solved every ``resolve_every`` episodes; the first-crossing rule
    reads the live table and needs no re-solve.
    """
    if policy_kind not in ("qmdp", "fcr"):
        raise ConfigError("learning campaigns need a qmdp or fcr policy")
    if policy_kind == "qmdp" and not model.is_finite:
        raise ConfigError("qmdp policies need a finite state space")
    table = CostTable(
        init_table.values.copy(), init_table.anchors, "learned", bound=init_table.bound
    )
    policy = None
    if policy_kind == "fcr":
        policy = make_fcr_policy(model, table, u_max=u_max)

    def hook(p_prev, p_now, s, r_now):
        learn_update(table, model, p_prev, p_now, s, r_now, alpha=schedule.alpha, rng=rng)

    on_step = hook if schedule.alpha > 0 else None
    records = []
    total = schedule.warmup + schedule.recorded
    for episode in range(total):
        if policy_kind == "qmdp" and episode % max(1, schedule.resolve_every) == 0:
            policy = solve_qmdp_policy(model, table, u_max=u_max)
        result = run_episode(model, policy, rng, particles=particles, on_step=on_step)
        if episode >= schedule.warmup:
            records.append((result.tracking, result.energy))
    return table, records


# ---------------------------------------------------------------------------
# Sweeps


def _aggregate(records, model, lifetime, policy_name, source, seed) -> TradeoffPoint:
    data = np.asarray(records, dtype=float)
    runs = data.shape[0]
    means = data.mean(axis=0)
    if runs > 1:
        ses = data.std(axis=0, ddof=1) / np.sqrt(runs)
    else:
        ses = np.array([np.inf, np.inf])
    return TradeoffPoint(
        network=model.name,
        policy=policy_name,
        tdelta_source=source,
        c=model.energy_price,
        tracking_per_time=float(means[0] / lifetime),
        tracking_se=float(ses[0] / lifetime),
        energy_per_time=float(means[1] / lifetime),
        energy_se=float(ses[1] / lifetime),
        runs=runs,
        seed=seed,
    )


def _point_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def _build_policy(model, kind, source, table, u_max, prediction_particles):
    if kind == "all-awake":
        return AllAwakePolicy()
    if kind == "all-asleep":
        return AllAsleepPolicy()
    if kind == "qmdp":
        return solve_qmdp_policy(model, table, u_max=u_max)
    if kind == "fcr":
        return make_fcr_policy(
            model, table, u_max=u_max, prediction_particles=prediction_particles
        )
    raise ConfigError(f"unknown policy kind {kind!r}")


def _table_for(model, source, n_mc, rng, asleep_cache):
    if isinstance(source, CostTable):
        return source
    if source in ("asleep", None):
        # All-asleep baselines do not depend on the energy price; share one.
        if asleep_cache.get("table") is None:
            asleep_cache["table"] = cost_tables.build_table(model, "asleep", n_mc=n_mc, rng=rng)
        return asleep_cache["table"]
    if source == "greedy":
        return cost_tables.build_table(model, "greedy", n_mc=n_mc, rng=rng)
    raise ConfigError(f"unknown table source {source!r}")


def _run_point(args) -> TradeoffPoint:
    (model, kind, source, c, runs, seed, lifetime, n_mc, schedule,
     particles, prediction_particles, u_max, asleep_table) = args
    model_c = model.with_energy_price(c)
    rng = np.random.default_rng(seed)
    label_source = source if isinstance(source, str) else "file"
    needs_table = kind in ("qmdp", "fcr")
    cache = {"table": asleep_table}
    if kind == "qmdp" and not model.is_finite:
        raise ConfigError("qmdp policies need a finite state space")
    if needs_table and source == "learned":
        init = cost_tables.build_table(model_c, "greedy", n_mc=n_mc, rng=rng)
        sched = replace(schedule, recorded=runs)
        _, records = run_learning_campaign(
            model_c, kind, init, sched, rng, particles=particles, u_max=u_max
        )
        return _aggregate(records, model_c, lifetime, kind, "learned", seed)
    table = _table_for(model_c, source, n_mc, rng, cache) if needs_table else None
    policy = _build_policy(model_c, kind, source, table, u_max, prediction_particles)
    records = []
    for _ in range(runs):
        result = run_episode(model_c, policy, rng, particles=particles)
        records.append((result.tracking, result.energy))
    return _aggregate(records, model_c, lifetime, kind, label_source if needs_table else "none", seed)


def sweep(
    model: NetworkModel,
    policies,
    c_grid,
    runs: int = 50,
    seed: int = 0,
    n_mc: int = cost_tables.DEFAULT_MC_SAMPLES,
    schedule: LearningSchedule | None = None,
    particles: int = DEFAULT_PARTICLES,
    prediction_particles: int = 128,
    u_max: int | None = None,
    workers: int = 1,
) -> list[TradeoffPoint]:
    """Tradeoff points for every (policy, energy price) combination.

    ``policies`` is a list of (kind, source) pairs; reference policies take
    source None.  Greedy tables are rebuilt per energy price since the
    greedy threshold depends on it; learned tables are re-learned per price
    starting from the greedy baseline.
    """
    c_grid = [float(c) for c in c_grid]
    if not c_grid:
        raise ConfigError("empty energy-price grid")
    if any(c <= 0 for c in c_grid) or sorted(c_grid) != c_grid:
        raise ConfigError("energy-price grid must be positive and sorted")
    schedule = LearningSchedule() if schedule is None else schedule
    lifetime_rng = np.random.default_rng(_point_seed(seed, 10**9))
    lifetime = expected_lifetime(model, rng=lifetime_rng)

    asleep_table = None
    if any(source == "asleep" for _, source in policies):
        asleep_table = cost_tables.build_table(
            model, "asleep", n_mc=n_mc, rng=np.random.default_rng(_point_seed(seed, 10**9 + 1))
        )

    tasks = []
    index = 0
    for c in c_grid:
        for kind, source in policies:
            tasks.append(
                (
                    model, kind, source, c, runs, _point_seed(seed, index), lifetime,
                    n_mc, schedule, particles, prediction_particles, u_max, asleep_table,
                )
            )
            index += 1
    if workers <= 1:
        return [_run_point(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_point, tasks))


# ---------------------------------------------------------------------------
# CSV


def write_tradeoff_csv(points, path) -> None:
    """One row per tradeoff point, schema fixed by CSV_COLUMNS."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for pt in points:
            writer.writerow(
                [
                    pt.network,
                    pt.policy,
                    pt.tdelta_source,
                    repr(pt.c),
                    repr(pt.tracking_per_time),
                    repr(pt.tracking_se),
                    repr(pt.energy_per_time),
                    repr(pt.energy_se),
                    pt.runs,
                    pt.seed,
                ]
            )


def read_tradeoff_csv(path) -> list[TradeoffPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV columns in {path}")
        return [
            TradeoffPoint(
                network=row["network"],
                policy=row["policy"],
                tdelta_source=row["tdelta_source"],
                c=float(row["c"]),
                tracking_per_time=float(row["tracking_per_time"]),
                tracking_se=float(row["tracking_se"]),
                energy_per_time=float(row["energy_per_time"]),
                energy_se=float(row["energy_se"]),
                runs=int(row["runs"]),
                seed=int(row["seed"]),
            )
            for row in reader
        ]
