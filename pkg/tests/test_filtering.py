import warnings

import numpy as np
import pytest

from oracles import enumerate_posterior, random_finite_model
from sleeptrack.exceptions import (
    EstimatorUndefinedError,
    InconsistentObservationError,
    TrackLossWarning,
)
from sleeptrack.filtering import (
    DenseBelief,
    ParticleBelief,
    belief_update,
    estimate,
    expected_tracking_cost,
    bayes_risk,
    kernel_predict,
    particle_update,
    systematic_resample,
)
from sleeptrack.model import (
    DistanceMeasure,
    FiniteKernel,
    FiniteStateSpace,
    NetworkModel,
    Sensor,
    network_a,
    network_c,
)


def _awake(r):
    return np.asarray(r) == 0


def test_kernel_predict_identity():
    m = network_a()
    p = DenseBelief.point_mass(m, 21.0)
    out = kernel_predict(p, m, 0)
    assert np.array_equal(out.p, p.p)


def test_kernel_predict_one_step_network_a():
    m = network_a()
    p = DenseBelief.point_mass(m, 21.0)
    out = kernel_predict(p, m, 1)
    assert out.p[19] == pytest.approx(0.5)
    assert out.p[21] == pytest.approx(0.5)
    assert out.p.sum() == pytest.approx(1.0, abs=1e-12)


def test_kernel_predict_semigroup():
    rng = np.random.default_rng(3)
    for _ in range(10):
        model = random_finite_model(rng)
        p = DenseBelief.point_mass(model, model.start)
        s, t = int(rng.integers(0, 4)), int(rng.integers(0, 4))
        once = kernel_predict(p, model, s + t)
        twice = kernel_predict(kernel_predict(p, model, s), model, t)
        assert np.max(np.abs(once.p - twice.p)) < 1e-12


def test_belief_update_perfect_neighbor():
    m = network_a()
    p = DenseBelief.point_mass(m, 21.0)
    r = np.ones(41, dtype=int)
    r[19] = 0  # sensor at location 20 awake
    s = np.full(42, np.nan)
    s[19] = 1.0
    s[41] = 0.0
    post = belief_update(p, m, s, r)
    assert post.p[19] == pytest.approx(1.0)


def test_belief_update_all_asleep_is_prediction():
    m = network_a()
    p = DenseBelief.point_mass(m, 21.0)
    r = np.ones(41, dtype=int)
    s = np.full(42, np.nan)
    s[41] = 0.0
    post = belief_update(p, m, s, r)
    pred = p.p @ m.kernel.matrix
    pred[-1] = 0.0
    pred /= pred.sum()
    assert np.allclose(post.p, pred, atol=1e-12)


def test_belief_update_inconsistent_observation():
    m = network_a()
    p = DenseBelief.point_mass(m, 21.0)
    r = np.ones(41, dtype=int)
    r[0] = 0  # sensor at location 1 awake; object cannot be there
    s = np.full(42, np.nan)
    s[0] = 1.0
    s[41] = 0.0
    with pytest.raises(InconsistentObservationError) as exc:
        belief_update(p, m, s, r)
    assert exc.value.sensor_id == 1


def test_belief_update_matches_path_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(8):
        model = random_finite_model(rng, m=5, n_sensors=2)
        n = model.n_sensors
        p = DenseBelief.point_mass(model, model.start)
        observations, masks = [], []
        for _ in range(3):
            mask = rng.random(n) < 0.7
            r = np.where(mask, 0, 1)
            s = np.full(n + 1, np.nan)
            s[n] = 0.0
            for j in np.flatnonzero(mask):
                s[j] = rng.normal(model.sensors[j].mean_signal(model.start), 1.0)
            p = belief_update(p, model, s, r)
            observations.append(s)
            masks.append(mask)
        oracle = enumerate_posterior(model, model.start, observations, masks)
        assert np.max(np.abs(p.p - oracle)) < 1e-10


def test_estimate_hamming_map_and_tie_break():
    locs = np.array([1.0, 2.0, 3.0])
    hamming = DistanceMeasure("hamming", 1.0)
    p = DenseBelief(np.array([0.7, 0.2, 0.1, 0.0]), locs)
    assert estimate(p, hamming) == 1.0
    tie = DenseBelief(np.array([0.5, 0.5, 0.0]), np.array([4.0, 9.0]))
    assert estimate(tie, hamming) == 4.0


def test_estimate_squared_euclidean_mean():
    locs = np.array([1.0, 2.0, 3.0])
    sq = DistanceMeasure("squared_euclidean", 9.0)
    p = DenseBelief(np.array([1 / 3, 1 / 3, 1 / 3, 0.0]), locs)
    assert estimate(p, sq) == pytest.approx(2.0)


def test_estimate_undefined_without_mass():
    locs = np.array([1.0, 2.0])
    p = DenseBelief(np.array([0.0, 0.0, 1.0]), locs)
    with pytest.raises(EstimatorUndefinedError):
        estimate(p, DistanceMeasure("hamming", 1.0))


def test_estimate_minimizes_bayes_risk_exhaustively():
    rng = np.random.default_rng(5)
    for _ in range(60):
        m = int(rng.integers(2, 7))
        locs = np.sort(rng.uniform(0, 10, size=m))
        locs += np.arange(m) * 1e-3  # enforce strict ordering
        raw = rng.dirichlet(np.ones(m + 1))
        p = DenseBelief(raw, locs)
        for kind in ("hamming", "squared_euclidean"):
            dm = DistanceMeasure(kind, 1000.0)
            best = estimate(p, dm)
            def risk(bhat):
                if kind == "hamming":
                    return float(p.in_network @ (locs != bhat))
                return float(p.in_network @ (locs - bhat) ** 2)
            candidates = list(locs) + list(np.linspace(locs[0], locs[-1], 23))
            assert all(risk(best) <= risk(b) + 1e-12 for b in candidates)


def test_expected_tracking_cost_values():
    locs = np.array([1.0, 2.0, 3.0])
    hamming = DistanceMeasure("hamming", 1.0)
    p = DenseBelief(np.array([0.7, 0.2, 0.1, 0.0]), locs)
    assert expected_tracking_cost(p, hamming) == pytest.approx(0.3)
    point = DenseBelief(np.array([0.0, 1.0, 0.0, 0.0]), locs)
    assert expected_tracking_cost(point, hamming) == 0.0
    sq = DistanceMeasure("squared_euclidean", 4.0)
    two = DenseBelief(np.array([0.5, 0.5, 0.0]), np.array([0.0, 2.0]))
    assert expected_tracking_cost(two, sq) == pytest.approx(1.0)


def test_bayes_risk_scales_with_mass():
    locs = np.array([1.0, 2.0])
    sq = DistanceMeasure("squared_euclidean", 4.0)
    p = DenseBelief(np.array([0.25, 0.25, 0.5]), locs)
    assert bayes_risk(p, sq) == pytest.approx(0.5 * expected_tracking_cost(p, sq))


def test_systematic_resample_preserves_weighted_mean():
    rng = np.random.default_rng(2)
    w = rng.dirichlet(np.ones(512))
    x = rng.normal(size=512)
    idx = systematic_resample(w, rng)
    assert idx.shape == (512,)
    assert abs(x[idx].mean() - w @ x) < 0.1


def test_particle_update_keeps_count_and_resamples():
    m = network_c()
    rng = np.random.default_rng(4)
    p = ParticleBelief.point_mass(11.0, 512)
    r = np.zeros(10, dtype=int)
    s = np.full(11, np.nan)
    s[10] = 0.0
    for j in range(10):
        s[j] = m.sensors[j].draw(11.3, rng)
    out = particle_update(p, m, s, r, rng)
    assert out.n == 512
    assert np.allclose(out.weights, 1.0 / 512)


def test_particle_update_prediction_only_spreads():
    m = network_c()
    rng = np.random.default_rng(9)
    p = ParticleBelief.point_mass(11.0, 2048)
    r = np.ones(10, dtype=int)
    s = np.full(11, np.nan)
    s[10] = 0.0
    variances = []
    for _ in range(3):
        p = particle_update(p, m, s, r, rng)
        variances.append(np.var(p.positions))
    diffs = np.diff([0.0] + variances)
    assert np.all(diffs > 0.7) and np.all(diffs < 1.3)


def test_particle_update_degeneracy_warns_and_recovers():
    m = network_c()
    rng = np.random.default_rng(10)
    p = ParticleBelief.point_mass(20.9, 64)
    r = np.zeros(10, dtype=int)
    s = np.full(11, np.nan)
    s[10] = 0.0
    # wildly inconsistent readings force a zero-likelihood collapse
    s[:10] = -1e9
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = particle_update(p, m, s, r, rng)
    assert any(issubclass(w.category, TrackLossWarning) for w in caught)
    assert out.n == 64


def test_particle_filter_tracks_with_sharp_sensor():
    # near-noiseless sensor pins the posterior to the true location
    locs = 11.0
    m = network_c()
    sharp = tuple(
        Sensor(id=s.id, location=s.location, kind="gaussian", noise_var=1e-6)
        for s in m.sensors
    )
    m = NetworkModel(
        name="C'",
        space=m.space,
        kernel=m.kernel,
        sensors=sharp,
        dist=m.dist,
        energy_price=m.energy_price,
        start=m.start,
    )
    rng = np.random.default_rng(12)
    p = ParticleBelief.point_mass(locs, 4096)
    truth = locs
    r = np.zeros(10, dtype=int)
    errors = []
    for _ in range(10):
        moved = m.kernel.sample(np.array([truth]), rng)[0]
        if np.isnan(moved):
            break
        truth = float(moved)
        s = np.full(11, np.nan)
        s[10] = 0.0
        for j in range(10):
            s[j] = m.sensors[j].draw(truth, rng)
        p = particle_update(p, m, s, r, rng)
        errors.append(abs(estimate(p, m.dist) - truth))
    assert np.mean(errors) < 1e-2


def _discretized_interval_model(spacing=0.2):
    """Finite-grid twin of the Brownian interval network."""
    from scipy.stats import norm as normal

    count = int(round(20.0 / spacing)) + 1
    grid = np.linspace(1.0, 21.0, count)
    mref = network_c()
    edges = np.concatenate([[grid[0] - spacing / 2], grid + spacing / 2])
    P = np.zeros((grid.size + 1, grid.size + 1))
    for i, x in enumerate(grid):
        cdf = normal.cdf(edges, loc=x, scale=1.0)
        P[i, : grid.size] = np.diff(cdf)
        P[i, grid.size] = 1.0 - P[i, : grid.size].sum()
    P[grid.size, grid.size] = 1.0
    return NetworkModel(
        name="C-grid",
        space=FiniteStateSpace(grid),
        kernel=FiniteKernel(P / P.sum(axis=1, keepdims=True)),
        sensors=mref.sensors,
        dist=DistanceMeasure("squared_euclidean", 400.0),
        energy_price=0.1,
        start=float(grid[grid.size // 2]),
    )


def test_particle_filter_consistent_with_exact_filter():
    """Particle posterior mean tracks the dense-grid filter mean."""
    grid_model = _discretized_interval_model()
    cont_model = network_c()
    n_seeds = 100
    diffs = []
    for seed in range(n_seeds):
        rng = np.random.default_rng(1000 + seed)
        truth_idx = grid_model.start_index()
        dense = DenseBelief.point_mass(grid_model, grid_model.start)
        part = ParticleBelief.point_mass(11.0, 512)
        r = np.zeros(10, dtype=int)
        prng = np.random.default_rng(5000 + seed)
        for _ in range(6):
            row = grid_model.kernel.matrix[truth_idx]
            truth_idx = rng.choice(row.size, p=row)
            if truth_idx == grid_model.locations.size:
                break
            truth = grid_model.locations[truth_idx]
            s = np.full(11, np.nan)
            s[10] = 0.0
            for j in range(10):
                s[j] = grid_model.sensors[j].draw(truth, rng)
            dense = belief_update(dense, grid_model, s, r)
            part = particle_update(part, cont_model, s, r, prng)
        else:
            diffs.append(
                estimate(part, cont_model.dist) - estimate(dense, grid_model.dist)
            )
    diffs = np.array(diffs)
    assert diffs.size >= 50
    se = diffs.std(ddof=1) / np.sqrt(diffs.size)
    assert abs(diffs.mean()) < 3 * se + 0.05
