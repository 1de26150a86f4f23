"""Per-sensor tracking-cost increment tables.

Each table entry holds the expected one-step increase in tracking cost
caused by one sensor sleeping, given the previous object location.  Entries
come either from Monte-Carlo baselining (all-asleep or greedy awake sets)
or from an online stochastic-approximation fit driven by filtered beliefs.
Continuous networks store values at anchor locations and interpolate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .filtering import Belief, DenseBelief, ParticleBelief, bayes_risk
from .model import SIGNAL_PEAK, NetworkModel, TERMINAL

DEFAULT_MC_SAMPLES = 200
_CLOUD = 256

PROVENANCES = ("asleep", "greedy", "learned", "file")


@dataclass(eq=False)
class CostTable:
    """(anchor x sensor) matrix of tracking-cost increments.

    For finite networks the anchors are exactly the network locations and
    lookups are exact; for continuous networks queries between anchors are
    linearly interpolated and clamped outside the anchor range.
    """

    values: np.ndarray
    anchors: np.ndarray
    provenance: str
    bound: float = np.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.anchors = np.asarray(self.anchors, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.anchors.size:
            raise ValueError("values must be (n_anchors, n_sensors)")
        if np.any(np.diff(self.anchors) <= 0):
            raise ValueError("anchors must be strictly increasing")
        if np.any(self.values < 0) or np.any(self.values > self.bound):
            raise ValueError("entries must lie in [0, distance bound]")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]

    def value(self, b, sensor: int) -> float:
        """Increment for one sensor at location b (interpolated off-anchor)."""
        if b is TERMINAL:
            raise ValueError("cost increments are undefined at the terminal state")
        return float(np.interp(b, self.anchors, self.values[:, sensor]))

    def row(self, b) -> np.ndarray:
        """Increment row over all sensors at location b."""
        if b is TERMINAL:
            raise ValueError("cost increments are undefined at the terminal state")
        idx = np.searchsorted(self.anchors, b)
        if idx < self.anchors.size and self.anchors[idx] == b:
            return self.values[idx].copy()
        if idx == 0:
            return self.values[0].copy()
        if idx == self.anchors.size:
            return self.values[-1].copy()
        lo, hi = self.anchors[idx - 1], self.anchors[idx]
        t = (b - lo) / (hi - lo)
        return (1 - t) * self.values[idx - 1] + t * self.values[idx]

    def interpolated(self, positions: np.ndarray) -> np.ndarray:
        """Matrix of increments at many positions, (len(positions), n_sensors)."""
        idx = np.clip(np.searchsorted(self.anchors, positions), 1, self.anchors.size - 1)
        lo, hi = self.anchors[idx - 1], self.anchors[idx]
        t = np.clip((positions - lo) / (hi - lo), 0.0, 1.0)[:, None]
        return (1.0 - t) * self.values[idx - 1] + t * self.values[idx]

    def copy(self) -> "CostTable":
        return CostTable(self.values.copy(), self.anchors, self.provenance, self.bound)


# ---------------------------------------------------------------------------
# One-step Monte-Carlo cost evaluation


def _finite_step_cost(model: NetworkModel, b, awake: np.ndarray, n_mc, rng) -> float:
    """MC mean next-step tracking cost from known location b, given an awake set."""
    locs = model.locations
    m = locs.size
    bi = int(np.searchsorted(locs, b))
    row = model.kernel.matrix[bi]
    idx = rng.choice(m + 1, size=n_mc, p=row)
    alive = idx < m
    truth = locs[np.minimum(idx, m - 1)]
    # Posterior over in-network states given survival and the awake readings.
    post = np.broadcast_to(row[:m], (n_mc, m)).copy()
    for j in np.flatnonzero(awake):
        sensor = model.sensors[j]
        if sensor.kind == "binary":
            hit = (locs == sensor.location).astype(float)
            s = (truth == sensor.location) & alive
            post *= np.where(s[:, None], hit[None, :], 1.0 - hit[None, :])
        else:
            sig = np.sqrt(sensor.noise_var)
            s = sensor.mean_signal(truth) + sig * rng.standard_normal(n_mc)
            z = (s[:, None] - sensor.mean_signal(locs)[None, :]) / sig
            post *= np.exp(-0.5 * z**2)
    totals = post.sum(axis=1)
    ok = alive & (totals > 0)
    cost = np.zeros(n_mc)
    if model.dist.kind == "hamming":
        est = locs[np.argmax(post, axis=1)]
        cost[ok] = (est[ok] != truth[ok]).astype(float)
    else:
        est = (post @ locs) / np.where(totals > 0, totals, 1.0)
        cost[ok] = (est[ok] - truth[ok]) ** 2
    return float(cost.mean())


def _continuous_step_cost(model: NetworkModel, b, awake, n_mc, rng, cloud=_CLOUD) -> float:
    """Particle-cloud analogue of _finite_step_cost for interval networks."""
    kernel = model.kernel
    truth = kernel.sample(np.full(n_mc, float(b)), rng)
    alive = ~np.isnan(truth)
    truth = np.where(alive, truth, b)
    support = kernel.sample(np.full((n_mc, cloud), float(b)), rng)
    w = (~np.isnan(support)).astype(float)
    support = np.where(np.isnan(support), 0.0, support)
    for j in np.flatnonzero(awake):
        sensor = model.sensors[j]
        sig = np.sqrt(sensor.noise_var)
        s = sensor.mean_signal(truth) + sig * rng.standard_normal(n_mc)
        z = (s[:, None] - sensor.mean_signal(support)) / sig
        w = w * np.exp(-0.5 * z**2)
    totals = w.sum(axis=1)
    ok = alive & (totals > 0)
    est = (w * support).sum(axis=1) / np.where(totals > 0, totals, 1.0)
    cost = np.zeros(n_mc)
    cost[ok] = (est[ok] - truth[ok]) ** 2
    return float(cost.mean())


def step_cost(model: NetworkModel, b, awake: np.ndarray, n_mc: int, rng) -> float:
    """Expected next-step tracking cost from b with the given sensors awake."""
    if model.is_finite:
        return _finite_step_cost(model, b, awake, n_mc, rng)
    return _continuous_step_cost(model, b, awake, n_mc, rng)


def asleep_increment(model: NetworkModel, b, sensor: int, n_mc=DEFAULT_MC_SAMPLES, rng=None) -> float:
    """Cost increment of one sensor against the all-asleep baseline."""
    if b is TERMINAL:
        raise ValueError("no increments at the terminal state")
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    awake = np.zeros(model.n_sensors, dtype=bool)
    base = step_cost(model, b, awake, n_mc, rng)
    awake[sensor] = True
    solo = step_cost(model, b, awake, n_mc, rng)
    return abs(solo - base)


def greedy_increments(
    model: NetworkModel, b, n_mc=DEFAULT_MC_SAMPLES, rng=None
) -> tuple[frozenset, np.ndarray]:
    """Greedy awake baseline at b, plus the toggle-increment row.

    Sensors join the baseline while the best single-sensor reduction in
    expected tracking cost is at least the energy price; the returned row
    holds the absolute cost change of toggling each sensor against that
    baseline.
    """
    if b is TERMINAL:
        raise ValueError("no increments at the terminal state")
    rng = np.random.default_rng() if rng is None else rng
    n = model.n_sensors
    c = model.energy_price
    awake = np.zeros(n, dtype=bool)
    current = step_cost(model, b, awake, n_mc, rng)
    while not awake.all():
        candidates = np.flatnonzero(~awake)
        costs = np.empty(candidates.size)
        for k, j in enumerate(candidates):
            awake[j] = True
            costs[k] = step_cost(model, b, awake, n_mc, rng)
            awake[j] = False
        best = int(np.argmin(costs))
        if current - costs[best] < c:
            break
        awake[candidates[best]] = True
        current = costs[best]
    row = np.empty(n)
    for j in range(n):
        awake[j] = ~awake[j]
        toggled = step_cost(model, b, awake, n_mc, rng)
        awake[j] = ~awake[j]
        row[j] = abs(toggled - current)
    return frozenset(np.flatnonzero(awake).tolist()), row


def default_anchors(model: NetworkModel) -> np.ndarray:
    """Table anchors: the locations themselves, or the integer grid on an interval."""
    if model.is_finite:
        return model.locations.copy()
    lo, hi = model.space.lo, model.space.hi
    return np.arange(np.ceil(lo), np.floor(hi) + 1.0)


def build_table(
    model: NetworkModel,
    source: str,
    n_mc: int = DEFAULT_MC_SAMPLES,
    rng: np.random.Generator = None,
    anchors: np.ndarray = None,
) -> CostTable:
    """Monte-Carlo table over all (anchor, sensor) cells.

    source is "asleep" or "greedy"; learned tables start from one of these
    and evolve via learn_update during simulation.
    """
    if source not in ("asleep", "greedy"):
        raise ConfigError(f"unknown table source {source!r}")
    rng = np.random.default_rng() if rng is None else rng
    anchors = default_anchors(model) if anchors is None else np.asarray(anchors, dtype=float)
    values = np.zeros((anchors.size, model.n_sensors))
    for i, b in enumerate(anchors):
        if source == "asleep":
            for j in range(model.n_sensors):
                values[i, j] = asleep_increment(model, b, j, n_mc, rng)
        else:
            _, values[i] = greedy_increments(model, b, n_mc, rng)
    values = np.clip(values, 0.0, model.dist.bound)
    return CostTable(values, anchors, source, bound=model.dist.bound)


# ---------------------------------------------------------------------------
# Online learning


def squared_error_gradient(p_prev_in: np.ndarray, a_hat: np.ndarray, a_obs: np.ndarray) -> np.ndarray:
    """Gradient of sum_l (a_hat_l - a_obs_l)^2 w.r.t. the table entries.

    The prediction a_hat_l is linear in the table column with coefficients
    p_prev, so the gradient is 2 * outer(p_prev, a_hat - a_obs).
    """
    return 2.0 * np.outer(p_prev_in, a_hat - a_obs)


def _likelihood_rows(model, sensor_idx, readings, locs):
    """Stack of per-sensor likelihood vectors over the locations."""
    rows = np.empty((sensor_idx.size, locs.size))
    nus = np.array([model.sensors[j].location for j in sensor_idx])
    binary = np.array([model.sensors[j].kind == "binary" for j in sensor_idx])
    if binary.any():
        hits = (locs[None, :] == nus[binary, None]).astype(float)
        rows[binary] = np.where(readings[binary, None] == 1.0, hits, 1.0 - hits)
    gauss = ~binary
    if gauss.any():
        sig = np.sqrt(np.array([model.sensors[j].noise_var for j in sensor_idx[gauss]]))
        means = SIGNAL_PEAK / ((nus[gauss, None] - locs[None, :]) ** 2 + 1.0)
        z = (readings[gauss, None] - means) / sig[:, None]
        rows[gauss] = np.exp(-0.5 * z**2) / (sig[:, None] * np.sqrt(2.0 * np.pi))
    return rows


def _leave_one_out_posteriors(model, p_prev, s, awake_idx):
    """Posterior matrix rebuilt from the prediction with one likelihood dropped.

    Row k of the result is the normalized posterior using every awake
    sensor's reading except awake_idx[k]'s.
    """
    locs = p_prev.locations
    prior = (p_prev.p @ model.kernel.matrix)[:-1]
    like = _likelihood_rows(model, awake_idx, s[awake_idx], locs)
    # Forward/backward cumulative products give each row's product of the
    # other rows without dividing by possibly-zero likelihoods.
    fwd = np.ones_like(like)
    bwd = np.ones_like(like)
    np.cumprod(like[:-1], axis=0, out=fwd[1:])
    np.cumprod(like[:0:-1], axis=0, out=bwd[-2::-1])
    post = prior[None, :] * fwd * bwd
    totals = post.sum(axis=1, keepdims=True)
    totals[totals == 0.0] = 1.0
    return post / totals


def _dense_risk_rows(post: np.ndarray, locations: np.ndarray, kind: str) -> np.ndarray:
    """Row-wise Bayes tracking risk of normalized in-network posteriors."""
    if kind == "hamming":
        return 1.0 - post.max(axis=1)
    mean = post @ locations
    return post @ locations**2 - mean**2


def learn_update(
    table: CostTable,
    model: NetworkModel,
    p_prev: Belief,
    p_now: Belief,
    s: np.ndarray,
    r_now: np.ndarray,
    alpha: float = 0.01,
    rng: np.random.Generator = None,
) -> CostTable:
    """One stochastic-approximation update of the table (in place).

    For awake sensors the realized increment is measured by rebuilding the
    belief without that sensor's reading; for sleeping sensors a location
    and a hypothetical reading are sampled and folded in.  Each column then
    takes a step down the squared-error gradient, clamped at zero.
    """
    if alpha <= 0:
        raise ValueError("step size must be positive")
    rng = np.random.default_rng() if rng is None else rng
    if isinstance(p_prev, DenseBelief):
        return _learn_update_dense(table, model, p_prev, p_now, s, r_now, alpha, rng)
    return _learn_update_particles(table, model, p_prev, p_now, s, r_now, alpha, rng)


def _learn_update_dense(table, model, p_prev, p_now, s, r_now, alpha, rng):
    locs = p_now.locations
    kind = model.dist.kind
    n = model.n_sensors
    a_hat = p_prev.in_network @ table.values
    a_obs = np.zeros(n)
    risk_now = bayes_risk(p_now, model.dist)

    awake = np.flatnonzero(np.asarray(r_now) == 0)
    if awake.size:
        post = _leave_one_out_posteriors(model, p_prev, s, awake)
        mass = p_now.in_network_mass()
        risks = mass * _dense_risk_rows(post, locs, kind)
        a_obs[awake] = risks - risk_now

    asleep = np.flatnonzero(np.asarray(r_now) > 0)
    if asleep.size:
        q = p_now.in_network
        qmass = q.sum()
        if qmass > 0:
            draws = locs[rng.choice(locs.size, size=asleep.size, p=q / qmass)]
            nus = np.array([model.sensors[j].location for j in asleep])
            binary = np.array([model.sensors[j].kind == "binary" for j in asleep])
            sig = np.array(
                [np.sqrt(model.sensors[j].noise_var) if model.sensors[j].kind == "gaussian"
                 else 0.0 for j in asleep]
            )
            readings = np.where(
                binary,
                (draws == nus).astype(float),
                SIGNAL_PEAK / ((nus - draws) ** 2 + 1.0)
                + sig * rng.standard_normal(asleep.size),
            )
            like = _likelihood_rows(model, asleep, readings, locs)
            post = q[None, :] * like
            totals = post.sum(axis=1, keepdims=True)
            totals[totals == 0.0] = 1.0
            risks = qmass * _dense_risk_rows(post / totals, locs, kind)
            a_obs[asleep] = risk_now - risks

    grad = squared_error_gradient(p_prev.in_network, a_hat, a_obs)
    table.values = np.clip(table.values - alpha * grad, 0.0, table.bound)
    return table


def _hat_weights(anchors: np.ndarray, positions: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Anchor-basis loading of a weighted particle cloud (linear hats, clamped)."""
    out = np.zeros(anchors.size)
    idx = np.clip(np.searchsorted(anchors, positions), 1, anchors.size - 1)
    lo, hi = anchors[idx - 1], anchors[idx]
    t = np.clip((positions - lo) / (hi - lo), 0.0, 1.0)
    np.add.at(out, idx - 1, w * (1.0 - t))
    np.add.at(out, idx, w * t)
    return out


def _learn_update_particles(table, model, p_prev, p_now, s, r_now, alpha, rng):
    dist = model.dist
    n = model.n_sensors
    a_hat = p_prev.weights @ table.interpolated(p_prev.positions)
    a_obs = np.zeros(n)
    risk_now = bayes_risk(p_now, dist)

    for j in range(n):
        if r_now[j] == 0:
            # Re-run the prediction and weighting without this sensor.
            pos = model.kernel.sample(p_prev.positions, rng)
            alive = ~np.isnan(pos)
            pos = np.where(alive, pos, 0.0)
            w = p_prev.weights * alive
            for k in np.flatnonzero(np.asarray(r_now) == 0):
                if k == j:
                    continue
                w = w * model.sensors[k].likelihood(s[k], pos)
            total = w.sum()
            if total > 0:
                loo = ParticleBelief(pos, w / total * p_now.in_network_mass(),
                                     p_now.terminal_mass)
                a_obs[j] = bayes_risk(loo, dist) - risk_now
        else:
            total = p_now.weights.sum()
            if total <= 0:
                continue
            pick = rng.choice(p_now.n, p=p_now.weights / total)
            sensor = model.sensors[j]
            reading = sensor.draw(p_now.positions[pick], rng)
            w = p_now.weights * sensor.likelihood(reading, p_now.positions)
            wtotal = w.sum()
            if wtotal > 0:
                folded = ParticleBelief(p_now.positions, w / wtotal * total,
                                        p_now.terminal_mass)
                a_obs[j] = risk_now - bayes_risk(folded, dist)

    loading = _hat_weights(table.anchors, p_prev.positions, p_prev.weights)
    grad = squared_error_gradient(loading, a_hat, a_obs)
    table.values = np.clip(table.values - alpha * grad, 0.0, table.bound)
    return table


# ---------------------------------------------------------------------------
# Serialization


def save_table(table: CostTable, path) -> None:
    """Write a table as a flat text matrix with a provenance header."""
    header = (
        f"sleeptrack cost table\n"
        f"provenance: {table.provenance}\n"
        f"bound: {table.bound!r}\n"
        f"anchors: {' '.join(repr(a) for a in table.anchors.tolist())}"
    )
    np.savetxt(path, table.values, header=header)


def load_table(path) -> CostTable:
    """Read a table written by save_table."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            text = line[1:].strip()
            if ":" in text:
                key, _, value = text.partition(":")
                meta[key.strip()] = value.strip()
    try:
        anchors = np.array([float(a) for a in meta["anchors"].split()])
        provenance = meta["provenance"]
        bound = float(meta["bound"])
    except KeyError as exc:
        raise ConfigError(f"table file {path} missing header field {exc.args[0]!r}")
    values = np.loadtxt(path, ndmin=2)
    return CostTable(values, anchors, provenance, bound=bound)
