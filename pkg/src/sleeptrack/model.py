"""Domain model for sleeping-sensor tracking networks.

A network is an absorbing Markov motion model over object locations, a set
of sensors with per-sensor observation models, a tracking-distance measure,
and an energy price per awake sensor per step.  The object eventually leaves
the network; departure is modelled as an absorbing terminal state that an
always-awake virtual sensor reports without error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .exceptions import ConfigError, ModelError


class _Terminal:
    """Sentinel for the absorbing state entered when the object exits."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TERMINAL"


TERMINAL = _Terminal()

# Peak received signal strength directly on top of a sensor.
SIGNAL_PEAK = 10.0

# Observation value standing in for "sensor asleep, nothing received".
ERASURE = np.nan

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteStateSpace:
    """Finite set of object locations given by their coordinates.

    The terminal state is implicit: beliefs and kernels over this space have
    one extra trailing entry for it.
    """

    locations: np.ndarray

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        if locs.ndim != 1 or locs.size < 1:
            raise ConfigError("finite state space needs at least one location")
        if np.any(np.diff(locs) <= 0):
            raise ConfigError("locations must be strictly increasing")
        object.__setattr__(self, "locations", locs)

    @property
    def m(self) -> int:
        return self.locations.size


@dataclass(frozen=True)
class Interval:
    """Continuous 1-D object-location support [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"empty interval [{self.lo}, {self.hi}]")


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """Row-stochastic one-step motion matrix with an absorbing last row.

    Shape is (m+1, m+1); index m is the terminal state.
    """

    matrix: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise ConfigError("kernel must be a square matrix of size >= 2")
        if np.any(P < 0):
            raise ConfigError("kernel entries must be non-negative")
        rowsum = P.sum(axis=1)
        if np.max(np.abs(rowsum - 1.0)) > _ROW_SUM_TOL:
            raise ConfigError("kernel rows must sum to 1")
        terminal = np.zeros(P.shape[0])
        terminal[-1] = 1.0
        if np.max(np.abs(P[-1] - terminal)) > _ROW_SUM_TOL:
            raise ConfigError("last kernel row must be absorbing")
        object.__setattr__(self, "matrix", P)
        # Finite expected absorption time from every state; a singular
        # system here means some state never reaches the terminal state.
        Q = P[:-1, :-1]
        try:
            t = np.linalg.solve(np.eye(Q.shape[0]) - Q, np.ones(Q.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise ModelError("kernel has states that never absorb") from exc
        if np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise ModelError("kernel has states that never absorb")
        object.__setattr__(self, "_lifetimes", t)

    @property
    def m(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def transient(self) -> np.ndarray:
        """In-network block Q = P[:m, :m]."""
        return self.matrix[:-1, :-1]

    def expected_absorption_times(self) -> np.ndarray:
        """Expected steps to termination from each in-network state."""
        return self._lifetimes.copy()


@dataclass(frozen=True)
class BrownianKernel:
    """Gaussian-increment motion on an interval; exits absorb.

    A step from x lands at x + N(0, variance); any landing point outside
    [lo, hi] moves the object to the terminal state.
    """

    lo: float
    hi: float
    variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0:
            raise ConfigError("motion variance must be positive")
        if not self.lo < self.hi:
            raise ConfigError("empty motion interval")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        """Propagate positions one step; exited entries become NaN."""
        x = np.asarray(x, dtype=float)
        y = x + rng.standard_normal(x.shape) * self.std
        y = np.where((y >= self.lo) & (y <= self.hi), y, np.nan)
        return y

    def density(self, x: float, y) -> np.ndarray:
        """Transition density q(x -> y) on the in-network interval."""
        y = np.asarray(y, dtype=float)
        out = norm.pdf(y, loc=x, scale=self.std)
        return np.where((y >= self.lo) & (y <= self.hi), out, 0.0)

    def exit_mass(self, x) -> np.ndarray:
        """Probability of leaving the interval in one step from x."""
        x = np.asarray(x, dtype=float)
        inside = norm.cdf(self.hi, loc=x, scale=self.std) - norm.cdf(
            self.lo, loc=x, scale=self.std
        )
        return 1.0 - inside


@dataclass(frozen=True)
class Sensor:
    """One physical sensor.

    kind is "binary" (perfect detection of the object exactly at the sensor
    location) or "gaussian" (received-signal-strength reading with additive
    Gaussian noise).  The always-awake exit detector is not a Sensor; it is
    implicit in every observation vector.
    """

    id: int
    location: float
    kind: str = "gaussian"
    noise_var: float = 1.0

    def __post_init__(self):
        if self.kind not in ("binary", "gaussian"):
            raise ConfigError(f"unknown sensor kind {self.kind!r}")
        if self.kind == "gaussian" and self.noise_var <= 0:
            raise ConfigError("gaussian sensor needs noise_var > 0")

    def mean_signal(self, b) -> np.ndarray:
        """Expected reading when the object is at b (gaussian sensors)."""
        b = np.asarray(b, dtype=float)
        return SIGNAL_PEAK / ((self.location - b) ** 2 + 1.0)

    def likelihood(self, s: float, b) -> np.ndarray:
        """Density/probability of reading s given object location(s) b."""
        b = np.asarray(b, dtype=float)
        if self.kind == "binary":
            hit = (b == self.location).astype(float)
            return hit if s == 1.0 else 1.0 - hit
        z = (s - self.mean_signal(b)) / np.sqrt(self.noise_var)
        return np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi * self.noise_var)

    def draw(self, b, rng: np.random.Generator):
        """Sample a reading at true location(s) b."""
        b = np.asarray(b, dtype=float)
        if self.kind == "binary":
            return (b == self.location).astype(float)
        noise = rng.standard_normal(b.shape) * np.sqrt(self.noise_var)
        return self.mean_signal(b) + noise


@dataclass(frozen=True)
class DistanceMeasure:
    """Tracking-error distance between true and estimated locations."""

    kind: str
    bound: float

    def __post_init__(self):
        if self.kind not in ("hamming", "squared_euclidean"):
            raise ConfigError(f"unknown distance kind {self.kind!r}")
        if self.bound <= 0:
            raise ConfigError("distance bound must be positive")


def distance(dm: DistanceMeasure, b, b_hat) -> float:
    """Evaluate the tracking distance d(b, b_hat) for an in-network b."""
    if b is TERMINAL or b_hat is TERMINAL:
        raise ValueError("distance is undefined at the terminal state")
    if dm.kind == "hamming":
        return 0.0 if b == b_hat else 1.0
    return float((b_hat - b) ** 2)


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable bundle of state space, motion, sensors, cost and price."""

    name: str
    space: FiniteStateSpace | Interval
    kernel: FiniteKernel | BrownianKernel
    sensors: tuple[Sensor, ...]
    dist: DistanceMeasure
    energy_price: float
    start: float

    def __post_init__(self):
        if self.energy_price <= 0:
            raise ConfigError("energy price must be positive")
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if self.is_finite:
            locs = self.space.locations
            if self.kernel.m != locs.size:
                raise ConfigError("kernel size does not match location count")
            lo, hi = locs[0], locs[-1]
        else:
            lo, hi = self.space.lo, self.space.hi
        span = hi - lo
        for sensor in self.sensors:
            if not (lo - span <= sensor.location <= hi + span):
                raise ConfigError(
                    f"sensor {sensor.id} at {sensor.location} is far outside the network"
                )
        if self.is_finite and self.start not in self.space.locations:
            raise ConfigError("start location is not a network location")
        if not self.is_finite and not (lo <= self.start <= hi):
            raise ConfigError("start location outside the interval")

    @property
    def is_finite(self) -> bool:
        return isinstance(self.space, FiniteStateSpace)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @property
    def locations(self) -> np.ndarray:
        return self.space.locations

    def start_index(self) -> int:
        return int(np.searchsorted(self.locations, self.start))

    def sensor_locations(self) -> np.ndarray:
        return np.array([s.location for s in self.sensors])

    def with_energy_price(self, c: float) -> "NetworkModel":
        return replace(self, energy_price=c)


# ---------------------------------------------------------------------------
# Sleep timers


def new_sleep_state(n: int) -> np.ndarray:
    """All-awake residual timer vector for n real sensors."""
    return np.zeros(n, dtype=np.int64)


def residual_step(r: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance residual sleep timers one step.

    A sleeping sensor counts down by one; an awake sensor adopts its fresh
    sleep input.  Inputs to sleeping sensors are ignored.
    """
    r = np.asarray(r)
    u = np.asarray(u)
    if r.shape != u.shape:
        raise ValueError("timer and input vectors must have equal length")
    if np.any(r < 0) or np.any(u < 0):
        raise ValueError("timers and sleep inputs must be non-negative")
    return np.where(r > 0, r - 1, u).astype(np.int64)


# ---------------------------------------------------------------------------
# Observation model


def observe(model: NetworkModel, b, r_next: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw the length-(n+1) observation vector at true location b.

    Sensors with a positive residual timer emit an erasure (NaN).  The last
    entry is the virtual exit detector: exactly 1.0 when b is terminal.
    """
    n = model.n_sensors
    s = np.full(n + 1, ERASURE)
    if b is TERMINAL:
        s[n] = 1.0
        return s
    s[n] = 0.0
    for i, sensor in enumerate(model.sensors):
        if r_next[i] == 0:
            s[i] = sensor.draw(b, rng)
    return s


# ---------------------------------------------------------------------------
# Reference networks

# Symmetric per-direction step probabilities for network B; the magnitude-k
# probability applies to each of the left and right moves separately.
_B_STEP_PROBS = {0: 0.3125, 1: 0.2344, 2: 0.0938, 3: 0.0156}

_B_SENSOR_SITES = (1.36, 1.61, 3.91, 8.09, 11.96, 13.39, 13.52, 13.66, 16.60, 18.68)


def _step_kernel(locations: np.ndarray, steps: dict[int, float]) -> FiniteKernel:
    """Kernel for integer-lattice locations and a signed step distribution.

    Destinations outside the location range absorb into the terminal state.
    """
    m = locations.size
    lo, hi = locations[0], locations[-1]
    total = sum(steps.values())
    if abs(total - 1.0) > 1e-3:
        raise ConfigError(f"step probabilities sum to {total}, expected 1")
    P = np.zeros((m + 1, m + 1))
    for i, x in enumerate(locations):
        for delta, prob in steps.items():
            dest = x + delta
            if lo <= dest <= hi:
                j = int(np.searchsorted(locations, dest))
                P[i, j] += prob / total
            else:
                P[i, m] += prob / total
    P[m, m] = 1.0
    return FiniteKernel(P)


def _signed_steps(per_direction: dict[int, float]) -> dict[int, float]:
    steps = {}
    for magnitude, prob in per_direction.items():
        if magnitude == 0:
            steps[0] = prob
        else:
            steps[magnitude] = prob
            steps[-magnitude] = prob
    return steps


def network_a(energy_price: float = 0.1) -> NetworkModel:
    """41-site line, +/-1 symmetric walk, one perfect sensor per site."""
    locations = np.arange(1.0, 42.0)
    kernel = _step_kernel(locations, {-1: 0.5, 1: 0.5})
    sensors = tuple(
        Sensor(id=i + 1, location=float(x), kind="binary") for i, x in enumerate(locations)
    )
    return NetworkModel(
        name="A",
        space=FiniteStateSpace(locations),
        kernel=kernel,
        sensors=sensors,
        dist=DistanceMeasure("hamming", bound=1.0),
        energy_price=energy_price,
        start=21.0,
    )


def network_b(energy_price: float = 0.1, noise_var: float = 1.0) -> NetworkModel:
    """21-site line, steps of up to 3, ten RSS sensors, Hamming cost."""
    locations = np.arange(1.0, 22.0)
    kernel = _step_kernel(locations, _signed_steps(_B_STEP_PROBS))
    sensors = tuple(
        Sensor(id=i + 1, location=x, kind="gaussian", noise_var=noise_var)
        for i, x in enumerate(_B_SENSOR_SITES)
    )
    return NetworkModel(
        name="B",
        space=FiniteStateSpace(locations),
        kernel=kernel,
        sensors=sensors,
        dist=DistanceMeasure("hamming", bound=1.0),
        energy_price=energy_price,
        start=11.0,
    )


def network_c(energy_price: float = 0.1, noise_var: float = 1.0) -> NetworkModel:
    """Continuous [1, 21] Brownian motion with network B's sensors."""
    lo, hi = 1.0, 21.0
    sensors = tuple(
        Sensor(id=i + 1, location=x, kind="gaussian", noise_var=noise_var)
        for i, x in enumerate(_B_SENSOR_SITES)
    )
    return NetworkModel(
        name="C",
        space=Interval(lo, hi),
        kernel=BrownianKernel(lo, hi, variance=1.0),
        sensors=sensors,
        dist=DistanceMeasure("squared_euclidean", bound=(hi - lo) ** 2),
        energy_price=energy_price,
        start=11.0,
    )


_BUILTIN = {"A": network_a, "B": network_b, "C": network_c}


def make_network(spec: str, energy_price: float | None = None) -> NetworkModel:
    """Build a network from a builtin name (A/B/C) or a JSON config path."""
    if spec in _BUILTIN:
        if energy_price is None:
            return _BUILTIN[spec]()
        return _BUILTIN[spec](energy_price=energy_price)
    try:
        with open(spec) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"unknown network {spec!r}: not a builtin name or a config file")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {spec}: invalid JSON ({exc})")
    model = network_from_config(cfg)
    if energy_price is not None:
        model = model.with_energy_price(energy_price)
    return model


def network_from_config(cfg: dict) -> NetworkModel:
    """Build a NetworkModel from a parsed config dictionary.

    Schema (JSON object):
      name            optional string label
      kind            "finite" | "continuous"
      locations       finite: list of strictly increasing coordinates
      interval        continuous: [lo, hi]
      motion          {"steps": {"<signed int>": prob, ...}}      (finite)
                      | {"rows": [[...], ...]}                     (finite)
                      | {"type": "brownian", "variance": v}        (continuous)
      sensors         [{"location": x, "kind": "binary"|"gaussian",
                        "noise_var": v}, ...]
      cost            "hamming" | "squared_euclidean"
      distance_bound  optional; defaults to 1 (hamming) or span^2
      energy_price    positive float
      start           initial object location
    """
    try:
        kind = cfg["kind"]
        if kind == "finite":
            locations = np.asarray(cfg["locations"], dtype=float)
            space = FiniteStateSpace(locations)
            motion = cfg["motion"]
            if "rows" in motion:
                kernel = FiniteKernel(np.asarray(motion["rows"], dtype=float))
            elif "steps" in motion:
                lattice = np.round(locations)
                if np.any(np.abs(lattice - locations) > 0) or np.any(np.diff(locations) != 1):
                    raise ConfigError("step motion requires consecutive integer locations")
                steps = {int(k): float(v) for k, v in motion["steps"].items()}
                kernel = _step_kernel(locations, steps)
            else:
                raise ConfigError("finite motion needs 'rows' or 'steps'")
            default_bound = 1.0 if cfg["cost"] == "hamming" else float(
                (locations[-1] - locations[0]) ** 2
            )
        elif kind == "continuous":
            lo, hi = (float(v) for v in cfg["interval"])
            space = Interval(lo, hi)
            motion = cfg["motion"]
            kernel = BrownianKernel(lo, hi, variance=float(motion.get("variance", 1.0)))
            if cfg["cost"] == "hamming":
                raise ConfigError("hamming cost needs a finite state space")
            default_bound = float((hi - lo) ** 2)
        else:
            raise ConfigError(f"unknown state-space kind {kind!r}")
        sensors = tuple(
            Sensor(
                id=i + 1,
                location=float(s["location"]),
                kind=s.get("kind", "gaussian"),
                noise_var=float(s.get("noise_var", 1.0)),
            )
            for i, s in enumerate(cfg["sensors"])
        )
        return NetworkModel(
            name=str(cfg.get("name", "custom")),
            space=space,
            kernel=kernel,
            sensors=sensors,
            dist=DistanceMeasure(cfg["cost"], float(cfg.get("distance_bound", default_bound))),
            energy_price=float(cfg["energy_price"]),
            start=float(cfg["start"]),
        )
    except KeyError as exc:
        raise ConfigError(f"config missing required field {exc.args[0]!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}")
