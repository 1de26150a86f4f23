"""Sleeping-policy synthesis from tracking-cost increment tables.

Two per-sensor approximations are provided: a point-mass Bellman solver
(observable-after-control assumption, solved by policy iteration) and a
closed-form first-crossing rule (no-future-observations assumption).
Reference all-awake and all-asleep policies close the set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .cost_tables import CostTable
from .exceptions import ConvergenceError, TruncationWarning
from .filtering import Belief, DenseBelief, ParticleBelief
from .model import NetworkModel

_MASS_EPS = 1e-12
SLEEP_FOREVER = 10**6


def default_u_max(model: NetworkModel) -> int:
    """Sleep-time cap: three expected lifetimes from the start location.

    Beyond absorption the per-sensor minimands are flat, so any cap well
    past the object's lifetime is effectively lossless; three lifetimes
    keeps cap-induced wakeups rare even on heavy-tailed walks.
    """
    if model.is_finite:
        life = model.kernel.expected_absorption_times()[model.start_index()]
    else:
        span = (model.start - model.space.lo) * (model.space.hi - model.start)
        life = span / model.kernel.variance
    return int(np.ceil(3.0 * life))


# ---------------------------------------------------------------------------
# Per-sensor sleep MDP (finite state spaces)


@dataclass(eq=False)
class PerSensorValue:
    """Solved point-mass values for one sensor's sleep subproblem.

    ``minimand[u, b]`` is the cost of sleeping exactly u steps from a point
    mass at location index b, so the optimal sleep time at any belief p is
    the row-argmin of ``minimand @ p``.
    """

    J: np.ndarray
    u_star: np.ndarray
    u_max: int
    minimand: np.ndarray
    iterations: int


def matrix_powers(Q: np.ndarray, top: int) -> np.ndarray:
    """Stack [I, Q, Q^2, ..., Q^top] as a (top+1, m, m) tensor."""
    m = Q.shape[0]
    powers = np.empty((top + 1, m, m))
    powers[0] = np.eye(m)
    for i in range(1, top + 1):
        powers[i] = powers[i - 1] @ Q
    return powers


def solve_sleep_mdp(
    Q: np.ndarray,
    tau_sleep: np.ndarray,
    tau_wake: np.ndarray,
    energy: np.ndarray,
    u_max: int,
    tol: float = 1e-9,
    max_iter: int = 1000,
    powers: np.ndarray = None,
) -> PerSensorValue:
    """Policy iteration for a one-sensor sleep problem on a transient chain.

    Sleeping for u steps from state b costs the accumulated tau_sleep along
    the first u predicted steps, tau_wake at the wake step, and energy plus
    the continuation value one step later:

        J(b) = min_u  sum_{j<u} (Q^j tau_sleep)(b) + (Q^u tau_wake)(b)
                      + (Q^{u+1} (energy + J))(b)

    Ties in u break toward the smallest u.  ``powers`` may carry a
    precomputed matrix_powers(Q, u_max + 1) stack shared across sensors.
    """
    m = Q.shape[0]
    if powers is None:
        powers = matrix_powers(Q, u_max + 1)
    rows = np.arange(m)

    per_step = np.tensordot(powers[: u_max + 1], tau_sleep, axes=([2], [0]))
    cum_sleep = np.vstack([np.zeros(m), np.cumsum(per_step, axis=0)])[: u_max + 1]
    wake = np.tensordot(powers[: u_max + 1], tau_wake, axes=([2], [0]))
    energy_term = np.tensordot(powers[1:], energy, axes=([2], [0]))
    fixed = cum_sleep + wake + energy_term

    J = np.zeros(m)
    policy = np.zeros(m, dtype=np.int64)
    iterations = 0
    residual = np.inf
    for iterations in range(1, max_iter + 1):
        # Policy evaluation: J = g + A J with A rows taken from Q^{u(b)+1}.
        A = powers[policy + 1, rows, :]
        g = fixed[policy, rows]
        J_new = np.linalg.solve(np.eye(m) - A, g)
        M = fixed + np.tensordot(powers[1:], J_new, axes=([2], [0]))
        policy_new = np.argmin(M, axis=0).astype(np.int64)
        residual = float(np.max(np.abs(M[policy_new, rows] - J_new)))
        done = np.array_equal(policy_new, policy) or np.max(np.abs(J_new - J)) < tol
        J = J_new
        policy = policy_new
        if done:
            return PerSensorValue(
                J=J, u_star=policy, u_max=u_max, minimand=M, iterations=iterations
            )
    raise ConvergenceError(
        f"policy iteration did not converge in {max_iter} iterations",
        residual=residual,
    )


def qmdp_solve(
    model: NetworkModel,
    table: CostTable,
    sensor: int,
    u_max: int | None = None,
    tol: float = 1e-9,
    powers: np.ndarray = None,
) -> PerSensorValue:
    """Solve one sensor's point-mass sleep values on a finite network."""
    if not model.is_finite:
        raise ValueError("point-mass value solving needs a finite state space")
    u_max = default_u_max(model) if u_max is None else u_max
    Q = model.kernel.transient
    m = Q.shape[0]
    tau = np.array([table.value(b, sensor) for b in model.locations])
    return solve_sleep_mdp(
        Q,
        tau_sleep=tau,
        tau_wake=np.zeros(m),
        energy=np.full(m, model.energy_price),
        u_max=u_max,
        tol=tol,
        powers=powers,
    )


def qmdp_sleep_time(
    value: PerSensorValue, model: NetworkModel, table: CostTable, p: DenseBelief, sensor: int
) -> int:
    """Optimal sleep time at an arbitrary belief from solved point values."""
    p_in = p.in_network
    if p_in.sum() <= _MASS_EPS:
        return value.u_max
    return int(np.argmin(value.minimand @ p_in))


# ---------------------------------------------------------------------------
# First-crossing rule


def _dense_fcr_components(model, table, p, u_max):
    """Yield (u, tracking_row, energy_mass, mass) along the predicted path."""
    Q = model.kernel.transient
    c = model.energy_price
    w = p.in_network.copy()
    for u in range(u_max + 1):
        t = w @ table.values
        w_next = w @ Q
        yield u, t, c * w_next.sum(), w.sum()
        w = w_next


def _subsample_cloud(p, n_pred, rng):
    total = p.weights.sum()
    if p.n > n_pred:
        idx = rng.choice(p.n, size=n_pred, replace=True, p=p.weights / total)
        return p.positions[idx], np.full(n_pred, total / n_pred)
    return p.positions.copy(), p.weights.copy()


def _particle_fcr_components(model, table, p, u_max, n_pred, rng):
    """Monte-Carlo analogue of _dense_fcr_components on a particle cloud."""
    c = model.energy_price
    pos, w = _subsample_cloud(p, n_pred, rng)
    for u in range(u_max + 1):
        mass = w.sum()
        t = w @ table.interpolated(pos) if mass > 0 else np.zeros(table.n_sensors)
        moved = model.kernel.sample(pos, rng)
        alive = ~np.isnan(moved)
        pos = np.where(alive, moved, 0.0)
        w = w * alive
        yield u, t, c * w.sum(), mass


def _first_crossing(track, energy, flip):
    """Row index of the first crossing per sensor; -1 when none occurs."""
    cross = (energy[:, None] >= track) if flip else (track >= energy[:, None])
    hit = cross.any(axis=0)
    first = np.argmax(cross, axis=0)
    return np.where(hit, first, -1)


def _dense_sleep_times(model, table, p, u_max, flip, active):
    Q = model.kernel.transient
    c = model.energy_price
    out = np.full(table.n_sensors, u_max, dtype=np.int64)
    undecided = active.copy()
    w = p.in_network.copy()
    chunk = 64
    u0 = 0
    while u0 <= u_max:
        rows = min(chunk, u_max + 1 - u0)
        W = np.empty((rows + 1, w.size))
        W[0] = w
        for i in range(1, rows + 1):
            W[i] = W[i - 1] @ Q
        cols = np.flatnonzero(undecided)
        track = W[:rows] @ table.values[:, cols]
        masses = W.sum(axis=1)
        first = _first_crossing(track, c * masses[1 : rows + 1], flip)
        fired = first >= 0
        out[cols[fired]] = u0 + first[fired]
        undecided[cols[fired]] = False
        w = W[rows]
        if not undecided.any() or masses[rows] < _MASS_EPS:
            break
        u0 += rows
    return out


def _particle_sleep_times(model, table, p, u_max, flip, n_pred, rng, active):
    c = model.energy_price
    out = np.full(table.n_sensors, u_max, dtype=np.int64)
    undecided = active.copy()
    pos, w = _subsample_cloud(p, n_pred, rng)
    lo, hi = model.space.lo, model.space.hi
    std = model.kernel.std
    anchors = table.anchors
    chunk = 64
    u0 = 0
    while u0 <= u_max:
        rows = min(chunk, u_max + 1 - u0)
        steps = pos[None, :] + std * np.cumsum(rng.standard_normal((rows, pos.size)), axis=0)
        paths = np.vstack([pos[None, :], steps])
        dead = np.logical_or.accumulate((paths < lo) | (paths > hi), axis=0)
        weights = w[None, :] * ~dead
        masses = weights.sum(axis=1)
        cols = np.flatnonzero(undecided)
        flat = paths[:rows].ravel()
        idx = np.clip(np.searchsorted(anchors, flat), 1, anchors.size - 1)
        frac = np.clip(
            (flat - anchors[idx - 1]) / (anchors[idx] - anchors[idx - 1]), 0.0, 1.0
        )[:, None]
        sub = table.values[:, cols]
        incr = ((1.0 - frac) * sub[idx - 1] + frac * sub[idx]).reshape(
            rows, pos.size, cols.size
        )
        track = np.einsum("up,upl->ul", weights[:rows], incr)
        first = _first_crossing(track, c * masses[1 : rows + 1], flip)
        fired = first >= 0
        out[cols[fired]] = u0 + first[fired]
        undecided[cols[fired]] = False
        pos = paths[rows]
        w = weights[rows]
        if not undecided.any() or masses[rows] < _MASS_EPS:
            break
        u0 += rows
    return out


def fcr_sleep_times(
    model: NetworkModel,
    table: CostTable,
    p: Belief,
    u_max: int | None = None,
    flip_comparison: bool = False,
    prediction_particles: int = 128,
    rng: np.random.Generator = None,
    sensors: np.ndarray = None,
) -> np.ndarray:
    """First step at which expected tracking cost reaches the energy cost.

    Returns one sleep time per sensor: the smallest u with predicted
    tracking cost at step u at least the predicted energy cost of being
    awake at step u+1, or u_max when no step qualifies.  With
    flip_comparison=True the comparison direction reverses (wake once
    energy reaches tracking), for auditing the alternative reading.
    ``sensors`` optionally restricts the scan to a boolean mask of sensors
    (the rest report u_max); per-sensor decisions are independent, so the
    restriction never changes the computed values.
    """
    u_max = default_u_max(model) if u_max is None else u_max
    active = np.ones(model.n_sensors, dtype=bool) if sensors is None else np.asarray(sensors)
    if p.in_network_mass() <= _MASS_EPS or not active.any():
        return np.full(model.n_sensors, u_max, dtype=np.int64)
    if isinstance(p, DenseBelief):
        return _dense_sleep_times(model, table, p, u_max, flip_comparison, active)
    rng = np.random.default_rng() if rng is None else rng
    return _particle_sleep_times(
        model, table, p, u_max, flip_comparison, prediction_particles, rng, active
    )


def fcr_sleep_time(
    model: NetworkModel,
    table: CostTable,
    p: Belief,
    sensor: int,
    u_max: int | None = None,
    **kwargs,
) -> int:
    """Single-sensor convenience wrapper around fcr_sleep_times."""
    return int(fcr_sleep_times(model, table, p, u_max=u_max, **kwargs)[sensor])


def fcr_value(
    model: NetworkModel,
    table: CostTable,
    p: Belief,
    sensor: int,
    horizon: int = 50_000,
    prediction_particles: int = 512,
    rng: np.random.Generator = None,
) -> float:
    """Closed-form subproblem value: sum of min(tracking, energy) per step.

    The series truncates once the in-network mass of the predicted belief
    drops below 1e-12, or at the horizon (with a TruncationWarning carrying
    a residual bound when significant mass remains).
    """
    if isinstance(p, DenseBelief):
        components = _dense_fcr_components(model, table, p, horizon)
    else:
        rng = np.random.default_rng() if rng is None else rng
        components = _particle_fcr_components(model, table, p, horizon, prediction_particles, rng)
    total = 0.0
    mass = 0.0
    for u, t, e, mass in components:
        if mass < _MASS_EPS:
            return total
        total += min(float(t[sensor]), float(e))
    if mass > 1e-6:
        if model.is_finite:
            life = float(model.kernel.expected_absorption_times().max())
        else:
            span = model.space.hi - model.space.lo
            life = (span / 2.0) ** 2 / model.kernel.variance
        bound = mass * (model.energy_price * life)
        warnings.warn(
            f"value series truncated at horizon {horizon} with in-network mass "
            f"{mass:.3g}; residual at most {bound:.3g}",
            TruncationWarning,
        )
    return total


# ---------------------------------------------------------------------------
# Policies


class AllAwakePolicy:
    """Reference policy: zero sleep input for every awake sensor."""

    name = "all-awake"

    def sleep_inputs(self, model, p, r):
        return np.zeros(model.n_sensors, dtype=np.int64)


class AllAsleepPolicy:
    """Reference policy: sleep far beyond any plausible episode length."""

    name = "all-asleep"

    def __init__(self, sleep=SLEEP_FOREVER):
        self.sleep = sleep

    def sleep_inputs(self, model, p, r):
        u = np.zeros(model.n_sensors, dtype=np.int64)
        u[np.asarray(r) == 0] = self.sleep
        return u


class QmdpPolicy:
    """Per-sensor point-mass values applied in parallel.

    A minimizer sitting exactly at the solver cap means no wake time within
    the horizon was worthwhile, so the emitted input extends the sleep
    indefinitely instead of scheduling a pointless wake at cap expiry.
    """

    name = "qmdp"

    def __init__(self, values: list[PerSensorValue], table: CostTable):
        self.values = values
        self.table = table
        self.u_max = values[0].u_max
        self._stack = np.stack([v.minimand for v in values])

    def sleep_inputs(self, model, p, r):
        u = np.zeros(model.n_sensors, dtype=np.int64)
        awake = np.flatnonzero(np.asarray(r) == 0)
        if awake.size == 0:
            return u
        p_in = p.in_network
        if p_in.sum() <= _MASS_EPS:
            u[awake] = SLEEP_FOREVER
            return u
        for j in awake:
            best = int(np.argmin(self._stack[j] @ p_in))
            u[j] = SLEEP_FOREVER if best == self.u_max else best
        return u


class FcrPolicy:
    """First-crossing rule evaluated directly on the current belief.

    When no crossing occurs within the scan horizon the sensor sleeps
    indefinitely rather than waking pointlessly at cap expiry.
    """

    name = "fcr"

    def __init__(
        self,
        table: CostTable,
        u_max: int,
        flip_comparison: bool = False,
        prediction_particles: int = 128,
    ):
        self.table = table
        self.u_max = u_max
        self.flip_comparison = flip_comparison
        self.prediction_particles = prediction_particles

    def sleep_inputs(self, model, p, r, rng=None):
        u = np.zeros(model.n_sensors, dtype=np.int64)
        awake = np.asarray(r) == 0
        if not awake.any():
            return u
        times = fcr_sleep_times(
            model,
            self.table,
            p,
            u_max=self.u_max,
            flip_comparison=self.flip_comparison,
            prediction_particles=self.prediction_particles,
            rng=rng,
            sensors=awake,
        )
        times = np.where(times == self.u_max, SLEEP_FOREVER, times)
        u[awake] = times[awake]
        return u


def solve_qmdp_policy(
    model: NetworkModel, table: CostTable, u_max: int | None = None, tol: float = 1e-9
) -> QmdpPolicy:
    """Solve every sensor's subproblem and bundle them into a policy."""
    u_max = default_u_max(model) if u_max is None else u_max
    powers = matrix_powers(model.kernel.transient, u_max + 1)
    values = [
        qmdp_solve(model, table, j, u_max=u_max, tol=tol, powers=powers)
        for j in range(model.n_sensors)
    ]
    return QmdpPolicy(values, table)


def make_fcr_policy(
    model: NetworkModel, table: CostTable, u_max: int | None = None, **kwargs
) -> FcrPolicy:
    u_max = default_u_max(model) if u_max is None else u_max
    return FcrPolicy(table, u_max, **kwargs)


def act(
    model: NetworkModel,
    policy,
    p: Belief,
    r: np.ndarray,
    rng: np.random.Generator = None,
) -> np.ndarray:
    """Sleep inputs for the current step; sleeping sensors receive zero."""
    if isinstance(policy, FcrPolicy):
        return policy.sleep_inputs(model, p, r, rng=rng)
    return policy.sleep_inputs(model, p, r)


# ---------------------------------------------------------------------------
# Serialization


def save_policy(policy: QmdpPolicy, path) -> None:
    """Write solved point values as a flat text matrix (J then u*)."""
    J = np.stack([v.J for v in policy.values])
    U = np.stack([v.u_star for v in policy.values])
    header = f"sleeptrack qmdp policy\nu_max: {policy.u_max}\nsensors: {len(policy.values)}"
    np.savetxt(path, np.vstack([J, U.astype(float)]), header=header)


def load_policy(model: NetworkModel, table: CostTable, path) -> QmdpPolicy:
    """Rebuild a QmdpPolicy from save_policy output plus its table."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            text = line[1:].strip()
            if ":" in text:
                key, _, val = text.partition(":")
                meta[key.strip()] = val.strip()
    u_max = int(meta["u_max"])
    n = int(meta["sensors"])
    data = np.loadtxt(path, ndmin=2)
    J_all, U_all = data[:n], data[n:].astype(np.int64)
    Q = model.kernel.transient
    m = Q.shape[0]
    values = []
    for j in range(n):
        tau = np.array([table.value(b, j) for b in model.locations])
        value = _values_from_solution(
            Q, tau, np.full(m, model.energy_price), J_all[j], U_all[j], u_max
        )
        values.append(value)
    return QmdpPolicy(values, table)


def _values_from_solution(Q, tau_sleep, energy, J, u_star, u_max) -> PerSensorValue:
    """Reassemble the minimand matrix from stored J without re-solving."""
    m = Q.shape[0]
    powers = [np.eye(m)]
    for _ in range(u_max + 1):
        powers.append(powers[-1] @ Q)
    cum = np.empty((u_max + 1, m))
    acc = np.zeros(m)
    for u in range(u_max + 1):
        cum[u] = acc
        acc = acc + powers[u] @ tau_sleep
    M = np.empty((u_max + 1, m))
    v = energy + J
    for u in range(u_max + 1):
        M[u] = cum[u] + powers[u + 1] @ v
    return PerSensorValue(J=J, u_star=u_star, u_max=u_max, minimand=M, iterations=0)
