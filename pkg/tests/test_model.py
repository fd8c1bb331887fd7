import numpy as np
import pytest

import needlefield.model as model_mod
from needlefield.geometry import PointCloud
from needlefield.model import (AdamState, FitDivergedError, LossHistory,
                               OccupancyModel, TrainConfig, adam_step,
                               fit_shape, needle_batch_gradient,
                               needle_batch_loss, parse_sigma_schedule,
                               sigma_multiplier_at)
from needlefield.needles import (NeedleSet, SigmaRule,
                                 sample_crossing_needles,
                                 sample_same_side_needles)
from needlefield.shapes import icosphere
from needlefield.geometry import sample_surface

LN2 = np.log(2.0)


def sphere_cloud(n, seed):
    mesh = icosphere(subdivisions=2)
    return PointCloud(sample_surface(mesh, n, np.random.default_rng(seed)))


def small_cfg(**kw):
    base = dict(iterations=8, n_same=64, hidden_width=16, hidden_layers=2,
                seed=5)
    base.update(kw)
    return TrainConfig(**base)


def needle_batch(cloud, rng):
    opp = sample_crossing_needles(cloud, SigmaRule(1.0), rng)
    same = sample_same_side_needles(cloud, opp.endpoints, 32, None, rng)
    return opp, same


# --- construction ---

def test_constructor_validation():
    w = [np.zeros((3, 4)), np.zeros((4, 1))]
    b = [np.zeros(4), np.zeros(1)]
    OccupancyModel(w, b)
    with pytest.raises(ValueError):
        OccupancyModel(w, b[:1])
    with pytest.raises(ValueError):
        OccupancyModel([np.zeros((3, 4)), np.zeros((5, 1))],
                       [np.zeros(4), np.zeros(1)])
    with pytest.raises(ValueError):
        OccupancyModel([np.zeros((2, 4)), np.zeros((4, 1))], b)
    with pytest.raises(ValueError):
        OccupancyModel([np.zeros((3, 4)), np.zeros((4, 2))],
                       [np.zeros(4), np.zeros(2)])


def test_create_validation(rng):
    with pytest.raises(ValueError):
        OccupancyModel.create(rng, hidden_layers=0)
    with pytest.raises(ValueError):
        OccupancyModel.create(rng, final_init="tiny")
    with pytest.raises(ValueError):
        OccupancyModel.create(rng, frequency_scale=0.0)


def test_create_widths_and_first_layer_bandwidth(rng):
    m = OccupancyModel.create(rng, hidden_width=32, hidden_layers=3,
                              frequency_scale=30.0)
    assert m.widths == (3, 32, 32, 32, 1)
    assert np.abs(m.weights[0]).max() <= 10.0
    assert np.abs(m.weights[0]).max() > 5.0      # actually spans the range
    assert np.abs(m.biases[0]).max() <= np.pi


# --- the exact saddle at the neutral start ---

def test_zero_final_layer_is_exact_fixed_point(rng):
    m = OccupancyModel.create(rng, hidden_width=16, hidden_layers=2,
                              final_init="zero")
    pts = rng.uniform(-0.55, 0.55, (50, 3))
    assert np.all(m.forward_logits(pts) == 0.0)

    cloud = sphere_cloud(20, 1)
    opp, same = needle_batch(cloud, rng)
    breakdown, grads = needle_batch_gradient(m, opp, same)
    assert breakdown.l_opp == LN2
    assert breakdown.l_same == LN2
    assert np.all(grads == 0.0)

    params = m.params_flat()
    stepped = adam_step(AdamState(), params.copy(), grads)
    assert np.array_equal(stepped, params)


def test_constant_positive_field_loses_to_neutral(rng):
    m = OccupancyModel.create(rng, hidden_width=16, hidden_layers=2,
                              final_init="zero")
    m.biases[-1][:] = 0.8
    cloud = sphere_cloud(20, 2)
    opp, same = needle_batch(cloud, rng)
    br = needle_batch_loss(m, opp, same)
    assert br.l_opp > LN2          # crossing needles reject any constant
    assert br.l_same < LN2         # agreement needles alone prefer it


# --- evaluation semantics ---

def test_batch_equals_loop_bitwise(rng):
    m = OccupancyModel.create(rng)
    pts = rng.uniform(-0.55, 0.55, (200, 3))
    batch = m.forward_logits(pts)
    loop = np.array([m.forward_logits(p[None])[0] for p in pts])
    assert np.array_equal(batch, loop)


def test_occupancy_is_sigmoid_of_logit(rng):
    from scipy.special import expit
    m = OccupancyModel.create(rng, hidden_width=8, hidden_layers=1)
    pts = rng.uniform(-1, 1, (20, 3))
    assert np.array_equal(m.occupancy(pts), expit(m.forward_logits(pts)))


def test_forward_rejects_bad_shapes(rng):
    m = OccupancyModel.create(rng, hidden_width=8, hidden_layers=1)
    with pytest.raises(ValueError):
        m.forward_logits(np.zeros((4, 2)))


def test_copy_is_independent(rng):
    m = OccupancyModel.create(rng, hidden_width=8, hidden_layers=1)
    c = m.copy()
    c.weights[0][0, 0] += 1.0
    assert m.weights[0][0, 0] != c.weights[0][0, 0]


def test_params_flat_round_trip(rng):
    m = OccupancyModel.create(rng, hidden_width=8, hidden_layers=2)
    vec = m.params_flat()
    m2 = OccupancyModel.create(rng, hidden_width=8, hidden_layers=2)
    m2.set_params_flat(vec)
    assert np.array_equal(m2.params_flat(), vec)
    with pytest.raises(ValueError):
        m2.set_params_flat(vec[:-1])


def test_negating_final_layer_negates_logits_bitwise(rng):
    m = OccupancyModel.create(rng)
    flipped = m.copy()
    flipped.weights[-1] *= -1.0
    flipped.biases[-1] *= -1.0
    pts = rng.uniform(-0.55, 0.55, (100, 3))
    assert np.array_equal(flipped.forward_logits(pts),
                          -m.forward_logits(pts))

    cloud = sphere_cloud(25, 3)
    opp, same = needle_batch(cloud, rng)
    a = needle_batch_loss(m, opp, same)
    b = needle_batch_loss(flipped, opp, same)
    assert abs(a.l_opp - b.l_opp) < 1e-12
    assert abs(a.l_same - b.l_same) < 1e-12


# --- gradients ---

def test_full_gradient_matches_finite_differences(rng):
    m = OccupancyModel.create(rng, hidden_width=16, hidden_layers=2)
    cloud = sphere_cloud(20, 4)
    opp, same = needle_batch(cloud, rng)
    _, grads = needle_batch_gradient(m, opp, same)
    params = m.params_flat()
    assert grads.shape == params.shape

    h = 1e-5
    rel_max = 0.0
    probe = m.copy()
    for i in range(params.size):
        for sgn in (+1.0, -1.0):
            vec = params.copy()
            vec[i] += sgn * h
            probe.set_params_flat(vec)
            val = needle_batch_loss(probe, opp, same)
            if sgn > 0:
                up = val.l_total
            else:
                dn = val.l_total
        fd = (up - dn) / (2 * h)
        rel = abs(fd - grads[i]) / max(abs(fd), abs(grads[i]), 1e-3)
        rel_max = max(rel_max, rel)
    assert rel_max < 1e-4


def test_backward_batch_size_mismatch(rng):
    m = OccupancyModel.create(rng, hidden_width=8, hidden_layers=1)
    _, cache = m._forward(rng.uniform(-1, 1, (5, 3)))
    with pytest.raises(ValueError):
        m.backward(cache, np.zeros(4))


# --- checkpoints ---

def test_checkpoint_round_trip(tmp_path, rng):
    m = OccupancyModel.create(rng, hidden_width=16, hidden_layers=3)
    path = tmp_path / "m.ckpt"
    m.save(path)
    back = OccupancyModel.load(path)
    assert back.widths == m.widths
    assert np.array_equal(back.params_flat(), m.params_flat())
    pts = rng.uniform(-0.5, 0.5, (30, 3))
    assert np.array_equal(back.forward_logits(pts), m.forward_logits(pts))


def test_checkpoint_rejects_garbage(tmp_path, rng):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"OBJMESH!" + b"\x00" * 64)
    with pytest.raises(ValueError):
        OccupancyModel.load(path)

    m = OccupancyModel.create(rng, hidden_width=8, hidden_layers=1)
    good = tmp_path / "good.ckpt"
    m.save(good)
    blob = good.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(blob[:-16])
    with pytest.raises(ValueError):
        OccupancyModel.load(tmp_path / "short.ckpt")
    with pytest.raises(OSError):
        OccupancyModel.load(tmp_path / "missing.ckpt")


# --- Adam ---

def test_adam_first_step_is_signed_lr():
    state = AdamState(lr=0.01)
    params = np.array([1.0, -2.0, 3.0])
    grads = np.array([0.5, -0.25, 2.0])
    out = adam_step(state, params, grads)
    assert np.allclose(out, params - 0.01 * np.sign(grads), atol=1e-8)


def test_adam_zero_gradient_is_identity():
    state = AdamState()
    params = np.array([0.3, -0.7])
    out = adam_step(state, params, np.zeros(2))
    assert np.array_equal(out, params)


def test_adam_converges_on_quadratic():
    state = AdamState(lr=0.05)
    theta = np.array([1.0])
    for _ in range(100):
        theta = adam_step(state, theta, 2.0 * theta)
    assert abs(theta[0]) < 0.2


def test_adam_shape_validation():
    state = AdamState()
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(3), np.zeros(4))
    adam_step(state, np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(5), np.zeros(5))


# --- schedules and config ---

def test_parse_sigma_schedule():
    assert parse_sigma_schedule("1.0:0,0.5:2000") == ((1.0, 0), (0.5, 2000))
    assert parse_sigma_schedule(" 2:0 , 1:10 ") == ((2.0, 0), (1.0, 10))
    with pytest.raises(ValueError):
        parse_sigma_schedule("1.0")
    with pytest.raises(ValueError):
        parse_sigma_schedule("a:b")


def test_sigma_multiplier_at_steps():
    sched = ((1.0, 0), (0.5, 10), (0.25, 20))
    assert sigma_multiplier_at(sched, 0) == 1.0
    assert sigma_multiplier_at(sched, 9) == 1.0
    assert sigma_multiplier_at(sched, 10) == 0.5
    assert sigma_multiplier_at(sched, 25) == 0.25


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(n_same=0)
    with pytest.raises(ValueError):
        TrainConfig(regime="sometimes")
    with pytest.raises(ValueError):
        TrainConfig(sigma_schedule=((0.5, 5),))
    with pytest.raises(ValueError):
        TrainConfig(sigma_schedule=((1.0, 0), (0.5, 0)))
    with pytest.raises(ValueError):
        TrainConfig(sigma_schedule=((-1.0, 0),))


def test_loss_history_rows():
    hist = LossHistory(np.array([1.0, 2.0]), np.array([0.5, 0.25]))
    assert len(hist) == 2
    assert np.array_equal(hist.l_total, [1.5, 2.25])
    assert list(hist.rows()) == [(0, 1.0, 0.5, 1.5), (1, 2.0, 0.25, 2.25)]


# --- training loop ---

def test_fit_is_deterministic():
    cloud = sphere_cloud(30, 7)
    cfg = small_cfg()
    m1, h1 = fit_shape(cloud, cfg)
    m2, h2 = fit_shape(cloud, cfg)
    assert np.array_equal(h1.l_opp, h2.l_opp)
    assert np.array_equal(h1.l_same, h2.l_same)
    assert np.array_equal(m1.params_flat(), m2.params_flat())


def test_fit_seed_changes_trajectory():
    cloud = sphere_cloud(30, 7)
    _, h1 = fit_shape(cloud, small_cfg(seed=1))
    _, h2 = fit_shape(cloud, small_cfg(seed=2))
    assert not np.array_equal(h1.l_opp, h2.l_opp)


def test_fixed_regime_samples_needles_once(monkeypatch):
    cloud = sphere_cloud(30, 7)
    calls = {"n": 0}
    orig = model_mod.sample_crossing_needles

    def counting(*a, **kw):
        calls["n"] += 1
        return orig(*a, **kw)

    monkeypatch.setattr(model_mod, "sample_crossing_needles", counting)
    fit_shape(cloud, small_cfg(iterations=5, regime="fixed"))
    assert calls["n"] == 1
    calls["n"] = 0
    fit_shape(cloud, small_cfg(iterations=5, regime="resample"))
    assert calls["n"] == 5


def test_sigma_schedule_events_are_logged():
    cloud = sphere_cloud(30, 7)
    cfg = small_cfg(iterations=6, sigma_schedule=((1.0, 0), (0.5, 3)))
    _, hist = fit_shape(cloud, cfg)
    assert hist.events == [(0, 1.0), (3, 0.5)]


def test_fit_descends():
    cloud = sphere_cloud(60, 11)
    cfg = TrainConfig(iterations=200, n_same=128, hidden_width=32,
                      hidden_layers=2, seed=13)
    _, hist = fit_shape(cloud, cfg)
    first = np.median(hist.l_total[:20])
    last = np.median(hist.l_total[-20:])
    assert last < first


def test_warm_start_leaves_init_untouched():
    cloud = sphere_cloud(30, 7)
    m1, _ = fit_shape(cloud, small_cfg(iterations=5))
    snapshot = m1.params_flat()
    m2, _ = fit_shape(cloud, small_cfg(iterations=3), init=m1)
    assert np.array_equal(m1.params_flat(), snapshot)
    assert not np.array_equal(m2.params_flat(), snapshot)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # NaN propagation
def test_fit_diverged_error_carries_history(rng):
    cloud = sphere_cloud(30, 7)
    broken = OccupancyModel.create(rng, hidden_width=16, hidden_layers=2)
    broken.weights[0][0, 0] = np.nan
    with pytest.raises(FitDivergedError) as exc:
        fit_shape(cloud, small_cfg(iterations=4), init=broken)
    err = exc.value
    assert err.iteration == 0
    assert not err.breakdown.finite()
    assert len(err.history) == 1


def test_fit_needs_two_points():
    with pytest.raises(ValueError):
        fit_shape(PointCloud(np.zeros((1, 3))), small_cfg())
