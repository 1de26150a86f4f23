"""Recursive belief computation and tracking-cost functionals.

Finite networks get an exact Bayes filter over a dense probability vector;
continuous networks get a bootstrap particle filter with systematic
resampling at every step.  Both belief flavours support the optimal
location estimator and the expected tracking cost it induces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import EstimatorUndefinedError, InconsistentObservationError, TrackLossWarning
from .model import DistanceMeasure, NetworkModel, TERMINAL

_NORM_TOL = 1e-9
DEFAULT_PARTICLES = 512


@dataclass(eq=False)
class DenseBelief:
    """Probability vector over the m in-network locations plus terminal.

    ``p`` has length m+1; the final entry is the terminal-state mass.
    ``locations`` is shared with the owning model and never copied.
    """

    p: np.ndarray
    locations: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.ndim != 1 or self.p.size != self.locations.size + 1:
            raise ValueError("belief vector length must be number of locations + 1")
        if np.any(self.p < -_NORM_TOL) or abs(self.p.sum() - 1.0) > _NORM_TOL:
            raise ValueError("belief must be a probability vector")

    @classmethod
    def point_mass(cls, model: NetworkModel, b) -> "DenseBelief":
        locs = model.locations
        p = np.zeros(locs.size + 1)
        if b is TERMINAL:
            p[-1] = 1.0
        else:
            p[int(np.searchsorted(locs, b))] = 1.0
        return cls(p, locs)

    @property
    def in_network(self) -> np.ndarray:
        return self.p[:-1]

    @property
    def terminal_mass(self) -> float:
        return float(self.p[-1])

    def in_network_mass(self) -> float:
        return float(self.p[:-1].sum())

    def copy(self) -> "DenseBelief":
        return DenseBelief(self.p.copy(), self.locations)


@dataclass(eq=False)
class ParticleBelief:
    """Weighted particle cloud plus explicit terminal mass.

    Weights sum to 1 - terminal_mass; the particle count stays fixed
    across updates.
    """

    positions: np.ndarray
    weights: np.ndarray
    terminal_mass: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.positions.shape != self.weights.shape:
            raise ValueError("positions and weights must align")
        total = self.weights.sum() + self.terminal_mass
        if np.any(self.weights < 0) or abs(total - 1.0) > _NORM_TOL:
            raise ValueError("particle weights plus terminal mass must sum to 1")

    @classmethod
    def point_mass(cls, b: float, n: int = DEFAULT_PARTICLES) -> "ParticleBelief":
        return cls(np.full(n, float(b)), np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.positions.size

    def in_network_mass(self) -> float:
        return 1.0 - self.terminal_mass

    def copy(self) -> "ParticleBelief":
        return ParticleBelief(self.positions.copy(), self.weights.copy(), self.terminal_mass)


Belief = DenseBelief | ParticleBelief


def kernel_predict(p: Belief, model: NetworkModel, t: int, rng: np.random.Generator = None) -> Belief:
    """Push a belief t steps through the motion kernel.

    Dense beliefs use exact matrix powers; particle beliefs move each
    particle through the motion sampler (rng required), with exited
    particles contributing to the terminal mass.
    """
    if t < 0:
        raise ValueError("step count must be non-negative")
    if isinstance(p, DenseBelief):
        out = p.p.copy()
        P = model.kernel.matrix
        for _ in range(t):
            out = out @ P
        return DenseBelief(out, p.locations)
    if t == 0:
        return p.copy()
    if rng is None:
        raise ValueError("particle prediction needs an rng")
    pos = p.positions.copy()
    w = p.weights.copy()
    terminal = p.terminal_mass
    for _ in range(t):
        alive = ~np.isnan(pos)
        if not alive.any():
            break
        pos[alive] = model.kernel.sample(pos[alive], rng)
        died = alive & np.isnan(pos)
        terminal += w[died].sum()
        w[died] = 0.0
    pos = np.where(np.isnan(pos), 0.0, pos)
    return ParticleBelief(pos, w, terminal)


def _apply_virtual(prior: np.ndarray, s_virtual: float) -> np.ndarray:
    out = prior.copy()
    if s_virtual == 1.0:
        out[:-1] = 0.0
    else:
        out[-1] = 0.0
    return out


def belief_update(
    p: DenseBelief, model: NetworkModel, s: np.ndarray, r_next: np.ndarray
) -> DenseBelief:
    """Exact single-step Bayes update for a finite network.

    The prior is the one-step prediction of ``p``; awake sensors contribute
    their likelihoods, erasures contribute nothing, and the virtual exit
    detector zeroes either the terminal mass or all in-network mass.
    """
    post = _apply_virtual(p.p @ model.kernel.matrix, s[-1])
    if post.sum() <= 0.0:
        raise InconsistentObservationError(
            "exit detector contradicts the motion model", sensor_id="virtual"
        )
    for i, sensor in enumerate(model.sensors):
        if r_next[i] != 0:
            continue
        if np.isnan(s[i]):
            raise ValueError(f"awake sensor {sensor.id} reported an erasure")
        post[:-1] *= sensor.likelihood(s[i], p.locations)
        if post.sum() <= 0.0:
            raise InconsistentObservationError(
                f"observation from sensor {sensor.id} has zero likelihood everywhere",
                sensor_id=sensor.id,
            )
    return DenseBelief(post / post.sum(), p.locations)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling; returns the selected particle indices."""
    n = weights.size
    positions = (np.arange(n) + rng.random()) / n
    return np.searchsorted(np.cumsum(weights), positions)


def particle_update(
    p: ParticleBelief,
    model: NetworkModel,
    s: np.ndarray,
    r_next: np.ndarray,
    rng: np.random.Generator,
) -> ParticleBelief:
    """Bootstrap particle-filter step with resampling every call.

    When every propagated particle gets zero weight the belief falls back
    to the prediction alone and a TrackLossWarning is emitted; the episode
    keeps running on the degraded belief.
    """
    pos = model.kernel.sample(p.positions, rng)
    alive = ~np.isnan(pos)
    if s[-1] == 1.0:
        # Object has left; all mass moves to the terminal state.
        return ParticleBelief(p.positions.copy(), np.zeros(p.n), 1.0)
    w = p.weights * alive
    pos = np.where(alive, pos, 0.0)
    for i, sensor in enumerate(model.sensors):
        if r_next[i] != 0:
            continue
        if np.isnan(s[i]):
            raise ValueError(f"awake sensor {sensor.id} reported an erasure")
        w = w * sensor.likelihood(s[i], pos) * alive
    if w.sum() <= 0.0:
        warnings.warn(
            "particle weights collapsed; resetting to prediction only",
            TrackLossWarning,
        )
        w = alive.astype(float) * p.weights
        if w.sum() <= 0.0:
            # Even the prediction died out; keep the previous cloud.
            pos = p.positions.copy()
            w = p.weights.copy()
    idx = systematic_resample(w / w.sum(), rng)
    return ParticleBelief(pos[idx], np.full(p.n, 1.0 / p.n))


def estimate(p: Belief, dm: DistanceMeasure):
    """Cost-optimal location estimate for the given distance measure.

    Hamming cost yields the in-network MAP location (ties break toward the
    smaller coordinate); squared Euclidean cost yields the in-network mean.
    """
    if isinstance(p, DenseBelief):
        mass = p.in_network_mass()
        if mass <= 0.0:
            raise EstimatorUndefinedError("belief has no in-network mass")
        if dm.kind == "hamming":
            return float(p.locations[int(np.argmax(p.in_network))])
        return float(p.in_network @ p.locations / mass)
    mass = p.weights.sum()
    if mass <= 0.0:
        raise EstimatorUndefinedError("belief has no in-network mass")
    if dm.kind == "hamming":
        raise ValueError("hamming estimation needs a finite state space")
    return float(p.weights @ p.positions / mass)


def expected_tracking_cost(p: Belief, dm: DistanceMeasure) -> float:
    """Expected distance to the optimal estimate, conditioned in-network.

    Hamming: one minus the largest conditional location probability.
    Squared Euclidean: conditional variance of the location.
    """
    if isinstance(p, DenseBelief):
        mass = p.in_network_mass()
        if mass <= 0.0:
            return 0.0
        q = p.in_network / mass
        if dm.kind == "hamming":
            return float(1.0 - q.max())
        mean = q @ p.locations
        return float(q @ (p.locations - mean) ** 2)
    mass = p.weights.sum()
    if mass <= 0.0:
        return 0.0
    q = p.weights / mass
    if dm.kind == "hamming":
        raise ValueError("hamming cost needs a finite state space")
    mean = q @ p.positions
    return float(q @ (p.positions - mean) ** 2)


def bayes_risk(p: Belief, dm: DistanceMeasure) -> float:
    """Unconditional expected tracking cost sum_b p(b) d(b, estimate(p)).

    Terminal mass contributes zero; equals expected_tracking_cost scaled by
    the in-network mass.
    """
    if isinstance(p, DenseBelief):
        mass = p.in_network_mass()
    else:
        mass = p.weights.sum()
    if mass <= 0.0:
        return 0.0
    return mass * expected_tracking_cost(p, dm)
