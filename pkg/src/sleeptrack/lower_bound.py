"""Lower bound on the optimal energy-tracking tradeoff.

Valid for finite state spaces observed through Gaussian signal-strength
sensors.  The per-step tracking error is bounded below through pairwise
hypothesis-test errors, split across sensors by a row-stochastic weight
matrix, and rolled into per-sensor sleep problems whose summed values
bound the optimal total cost for any weight choice; ascent over the
weights tightens the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .model import NetworkModel
from .policy import default_u_max, matrix_powers, solve_sleep_mdp


def pairwise_error(d: float, pi_j: float, pi_k: float) -> float:
    """Probability a likelihood-ratio test prefers hypothesis k over j.

    Equals Q(d/2 + ln(pi_j/pi_k)/d) for separation d > 0.  At d = 0 the
    limit is 0.5 for equal priors and the indicator of pi_k > pi_j
    otherwise.
    """
    if pi_j <= 0 or pi_k <= 0:
        raise ValueError("priors must be positive")
    if d < 0:
        raise ValueError("separation must be non-negative")
    if d == 0.0:
        if pi_j == pi_k:
            return 0.5
        return 1.0 if pi_k > pi_j else 0.0
    return float(norm.sf(d / 2.0 + np.log(pi_j / pi_k) / d))


@dataclass(eq=False)
class HypothesisGeometry:
    """Mean-signal geometry of the multiple-hypothesis location test."""

    means: np.ndarray  # (m locations, n sensors)
    noise_var: float

    @classmethod
    def from_model(cls, model: NetworkModel) -> "HypothesisGeometry":
        if not model.is_finite:
            raise ValueError("the bound needs a finite state space")
        kinds = {s.kind for s in model.sensors}
        if kinds != {"gaussian"}:
            raise ValueError("the bound needs Gaussian sensors")
        variances = {s.noise_var for s in model.sensors}
        if len(variances) != 1:
            raise ValueError("the bound needs a common noise variance")
        means = np.stack([s.mean_signal(model.locations) for s in model.sensors], axis=1)
        return cls(means=means, noise_var=variances.pop())

    def separations(self, awake: np.ndarray) -> np.ndarray:
        """Pairwise distances d[k, j] over the given awake-sensor mask."""
        sub = self.means[:, awake]
        diff = sub[:, None, :] - sub[None, :, :]
        return np.sqrt((diff**2).sum(axis=2) / self.noise_var)


@dataclass(eq=False)
class LambdaMatrix:
    """Row-stochastic (state x sensor) weights splitting the bound."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("weights must be a matrix")
        if np.any(v < 0) or np.max(np.abs(v.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("each weight row must be a probability vector")
        self.values = v

    @classmethod
    def uniform(cls, m: int, n: int) -> "LambdaMatrix":
        return cls(np.full((m, n), 1.0 / n))


@dataclass(eq=False)
class BoundTables:
    """Per-(state, sensor) tracking contributions.

    ``all_awake[i, l]`` is the bound contribution when every sensor wakes;
    ``one_asleep[i, l]`` when sensor l alone sleeps.
    """

    all_awake: np.ndarray
    one_asleep: np.ndarray


def _state_error_floor(D: np.ndarray, pi: np.ndarray) -> float:
    """Prior-weighted worst-pair error for one predicted-state row."""
    support = np.flatnonzero(pi > 0)
    if support.size == 0:
        return 0.0
    if support.size == 1:
        return 0.0  # no competing hypothesis
    d = D[np.ix_(support, support)]
    logpi = np.log(pi[support])
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = d / 2.0 + (logpi[None, :] - logpi[:, None]) / d
        err = norm.sf(arg)
    # d == 0 limits: coin flip at equal priors, prior dominance otherwise.
    zero = d == 0.0
    if zero.any():
        pj = pi[support]
        equal = zero & (pj[:, None] == pj[None, :])
        err = np.where(zero, (pj[:, None] > pj[None, :]).astype(float), err)
        err = np.where(equal, 0.5, err)
    np.fill_diagonal(err, -np.inf)
    worst = err.max(axis=0)  # max over competing k for each true j
    return float(pi[support] @ worst)


def bound_tables(model: NetworkModel) -> BoundTables:
    """Tracking-error floors per (previous state, sensor)."""
    geometry = HypothesisGeometry.from_model(model)
    m = model.locations.size
    n = model.n_sensors
    P = model.kernel.matrix
    D_all = geometry.separations(np.ones(n, dtype=bool))
    T0 = np.empty((m, n))
    T = np.empty((m, n))
    for i in range(m):
        pi = P[i, :m]
        base = _state_error_floor(D_all, pi)
        T0[i, :] = base
        for ell in range(n):
            mask = np.ones(n, dtype=bool)
            mask[ell] = False
            T[i, ell] = _state_error_floor(geometry.separations(mask), pi)
    return BoundTables(all_awake=T0, one_asleep=T)


# ---------------------------------------------------------------------------
# Per-sensor bound values


@dataclass(eq=False)
class LowerBoundValue:
    """Summed per-sensor bound values with their cost decomposition."""

    total: np.ndarray  # per start state
    tracking: np.ndarray
    energy: np.ndarray
    per_sensor: list = field(default_factory=list)

    def at_start(self, model: NetworkModel) -> float:
        return float(self.total[model.start_index()])


def _policy_cost_split(powers, tau_sleep, tau_wake, energy, u_star):
    """Tracking/energy components of a fixed sleep policy's value."""
    m = powers.shape[1]
    rows = np.arange(m)
    top = int(u_star.max())
    per_step = np.tensordot(powers[: top + 1], tau_sleep, axes=([2], [0]))
    cum = np.vstack([np.zeros(m), np.cumsum(per_step, axis=0)])
    wake = np.tensordot(powers[: top + 1], tau_wake, axes=([2], [0]))
    energy_term = np.tensordot(powers[1 : top + 2], energy, axes=([2], [0]))
    A = powers[u_star + 1, rows, :]
    g_track = cum[u_star, rows] + wake[u_star, rows]
    g_energy = energy_term[u_star, rows]
    lhs = np.eye(m) - A
    return np.linalg.solve(lhs, g_track), np.linalg.solve(lhs, g_energy)


def lb_solve(
    model: NetworkModel,
    tables: BoundTables,
    lam: LambdaMatrix,
    u_max: int | None = None,
    tol: float = 1e-9,
    powers: np.ndarray = None,
) -> LowerBoundValue:
    """Bound value per start state for one weight matrix."""
    u_max = default_u_max(model) if u_max is None else u_max
    Q = model.kernel.transient
    m = Q.shape[0]
    if powers is None:
        powers = matrix_powers(Q, u_max + 1)
    c_vec = np.full(m, model.energy_price)
    total = np.zeros(m)
    tracking = np.zeros(m)
    energy = np.zeros(m)
    per_sensor = []
    for ell in range(model.n_sensors):
        tau_sleep = lam.values[:, ell] * tables.one_asleep[:, ell]
        tau_wake = lam.values[:, ell] * tables.all_awake[:, ell]
        value = solve_sleep_mdp(Q, tau_sleep, tau_wake, c_vec, u_max, tol=tol, powers=powers)
        track_part, energy_part = _policy_cost_split(
            powers, tau_sleep, tau_wake, c_vec, value.u_star
        )
        total += value.J
        tracking += track_part
        energy += energy_part
        per_sensor.append(value)
    return LowerBoundValue(total=total, tracking=tracking, energy=energy, per_sensor=per_sensor)


# ---------------------------------------------------------------------------
# Weight-matrix ascent


@dataclass
class LambdaSearch:
    """Budget for the projected coordinate ascent over weight rows."""

    restarts: int = 20
    steps: int = 100
    step_size: float = 0.5
    u_max: int | None = None
    tol: float = 1e-9


def ascend_lambda(
    model: NetworkModel,
    tables: BoundTables,
    lam: LambdaMatrix,
    search: LambdaSearch,
    rng: np.random.Generator,
    powers: np.ndarray = None,
):
    """Greedy coordinate ascent on one weight matrix.

    Each step moves one state's weight row toward one sensor's vertex and
    keeps the move only if the bound at the start state improves, so the
    incumbent value is non-decreasing.  Returns (matrix, value, history).
    """
    m, n = lam.values.shape
    u_max = default_u_max(model) if search.u_max is None else search.u_max
    if powers is None:
        powers = matrix_powers(model.kernel.transient, u_max + 1)
    current = lb_solve(model, tables, lam, u_max=u_max, tol=search.tol, powers=powers)
    best_val = current.at_start(model)
    best = lam
    history = [best_val]
    for _ in range(search.steps):
        i = int(rng.integers(m))
        ell = int(rng.integers(n))
        candidate = best.values.copy()
        vertex = np.zeros(n)
        vertex[ell] = 1.0
        candidate[i] = (1.0 - search.step_size) * candidate[i] + search.step_size * vertex
        cand = LambdaMatrix(candidate)
        val = lb_solve(
            model, tables, cand, u_max=u_max, tol=search.tol, powers=powers
        ).at_start(model)
        if val > best_val:
            best_val = val
            best = cand
        history.append(best_val)
    return best, best_val, history


@dataclass(eq=False)
class BoundPoint:
    """Envelope value at one energy price, with its cost decomposition."""

    c: float
    total: float
    tracking: float
    energy: float
    lam: LambdaMatrix


def lb_envelope(
    model: NetworkModel,
    c_grid,
    tables: BoundTables | None = None,
    search: LambdaSearch | None = None,
    rng: np.random.Generator = None,
) -> list[BoundPoint]:
    """Tightest bound found per energy price.

    Every weight matrix yields a valid bound, so the search budget affects
    tightness only.  The first restart always starts from uniform weights.
    """
    rng = np.random.default_rng() if rng is None else rng
    search = LambdaSearch() if search is None else search
    tables = bound_tables(model) if tables is None else tables
    m = model.locations.size
    n = model.n_sensors
    u_max = default_u_max(model) if search.u_max is None else search.u_max
    powers = matrix_powers(model.kernel.transient, u_max + 1)
    points = []
    for c in c_grid:
        model_c = model.with_energy_price(float(c))
        best_val = -np.inf
        best_lam = None
        for restart in range(max(1, search.restarts)):
            if restart == 0:
                lam0 = LambdaMatrix.uniform(m, n)
            else:
                lam0 = LambdaMatrix(rng.dirichlet(np.ones(n), size=m))
            lam, val, _ = ascend_lambda(model_c, tables, lam0, search, rng, powers=powers)
            if val > best_val:
                best_val = val
                best_lam = lam
        solved = lb_solve(model_c, tables, best_lam, u_max=u_max, tol=search.tol, powers=powers)
        idx = model.start_index()
        points.append(
            BoundPoint(
                c=float(c),
                total=float(solved.total[idx]),
                tracking=float(solved.tracking[idx]),
                energy=float(solved.energy[idx]),
                lam=best_lam,
            )
        )
    return points
