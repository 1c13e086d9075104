import numpy as np
import pytest

from epgt import encoder, nn
from epgt.oracle import finite_diff_grad, max_relative_error


SHAPES = [(3, 4), (2, 3)]


def snapshot_batch(rng, n_order, count, scale=1.0):
    return [
        [[scale * rng.normal(size=s) for s in SHAPES] for _ in range(n_order + 1)]
        for _ in range(count)
    ]


def test_projection_shape_arithmetic():
    proj = encoder.Projections([(4, 8), (6, 5)], n_order=2, d=2, seed=0)
    # per order: 4*2 + 6*2 = 20; three orders
    assert proj.state_dim == 60
    snap = [[np.zeros((4, 8)), np.zeros((6, 5))] for _ in range(3)]
    assert proj.project(snap).shape == (60,)


def test_projection_zero_matrix_gives_zero_state():
    proj = encoder.Projections(SHAPES, n_order=1, d=2, seed=0)
    for row in proj.matrices:
        for c in row:
            c[:] = 0.0
    rng = np.random.default_rng(0)
    snap = snapshot_batch(rng, 1, 1)[0]
    assert np.all(proj.project(snap) == 0.0)


def test_projection_hand_product():
    proj = encoder.Projections([(1, 2)], n_order=0, d=1, seed=0)
    proj.matrices[0][0][:] = np.array([[3.0], [4.0]])
    snap = [[np.array([[1.0, 2.0]])]]
    assert np.allclose(proj.project(snap), [11.0])


def test_projection_linear_in_tensors():
    rng = np.random.default_rng(3)
    proj = encoder.Projections(SHAPES, n_order=1, d=2, seed=1)
    snap = snapshot_batch(rng, 1, 1)[0]
    scaled = [[2.5 * w for w in order] for order in snap]
    assert np.allclose(proj.project(scaled), 2.5 * proj.project(snap), atol=1e-12)


def test_projection_rejects_shape_mismatch():
    proj = encoder.Projections(SHAPES, n_order=0, d=2, seed=0)
    with pytest.raises(ValueError):
        proj.project([[np.zeros((3, 5)), np.zeros((2, 3))]])


def test_embed_deterministic_and_sized():
    emb = encoder.StateEmbedder(SHAPES, n_order=1, d=2, h=32, seed=0)
    rng = np.random.default_rng(1)
    s = rng.normal(size=emb.proj.state_dim)
    k1, k2 = emb.embed(s), emb.embed(s)
    assert np.array_equal(k1, k2)
    assert k1.shape == (32,)
    assert np.all(np.abs(k1) <= 1.0)  # tanh-bounded keys


def test_embed_zero_weight_encoder_gives_zero_key():
    encdec = encoder.EncoderDecoder(10, h=4, seed=0)
    for w in encdec.encoder.weights:
        w[:] = 0.0
    assert np.all(encoder.embed(encdec, np.ones(10)) == 0.0)


def test_embed_rejects_wrong_dim():
    encdec = encoder.EncoderDecoder(10, h=4, seed=0)
    with pytest.raises(ValueError):
        encoder.embed(encdec, np.ones(11))


def test_elbo_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    n_order = 1
    proj = encoder.Projections(SHAPES, n_order, d=2, seed=2)
    encdec = encoder.EncoderDecoder(proj.state_dim, h=4, seed=3)
    snaps = snapshot_batch(rng, n_order, 2, scale=0.5)
    noise = rng.standard_normal((2, 4))
    beta_kl = 1e-2
    targets = np.stack([proj.project(s) for s in snaps])

    def loss():
        val, _ = encoder.elbo_loss(encdec, proj, snaps, noise, beta_kl=beta_kl,
                                   targets=targets)
        return val

    total, _, enc_g, dec_g, proj_g = encoder.elbo_grads(
        encdec, proj, snaps, noise, beta_kl=beta_kl)
    assert np.isfinite(total)
    analytic = enc_g.parameter_arrays() + dec_g.parameter_arrays() + proj_g
    params = encdec.encoder.parameter_arrays() + \
        encdec.decoder.parameter_arrays() + proj.matrices_flat()
    numeric = finite_diff_grad(loss, params, step=1e-6)
    assert max_relative_error(analytic, numeric, floor=1e-6) < 1e-4


def test_target_gradient_is_stopped():
    # perturbing only the target side must not appear in the projection grads:
    # at a zero-weight encoder/decoder the prediction path is insensitive to C
    # while the target still moves with it, so stopped gradients are zero.
    rng = np.random.default_rng(6)
    proj = encoder.Projections(SHAPES, n_order=0, d=2, seed=4)
    encdec = encoder.EncoderDecoder(proj.state_dim, h=4, seed=5)
    for arr in encdec.parameter_arrays():
        arr[:] = 0.0
    snaps = snapshot_batch(rng, 0, 2)
    noise = np.zeros((2, 4))
    _, _, _, _, proj_g = encoder.elbo_grads(encdec, proj, snaps, noise,
                                            beta_kl=0.0)
    for g in proj_g:
        assert np.all(g == 0.0)


def test_fixed_point_has_zero_reconstruction_gradient():
    proj = encoder.Projections(SHAPES, n_order=0, d=2, seed=0)
    for row in proj.matrices:
        for c in row:
            c[:] = 0.0
    encdec = encoder.EncoderDecoder(proj.state_dim, h=4, seed=1)
    for arr in encdec.parameter_arrays():
        arr[:] = 0.0
    rng = np.random.default_rng(7)
    snaps = snapshot_batch(rng, 0, 2)
    noise = np.zeros((2, 4))
    total, rec, enc_g, dec_g, proj_g = encoder.elbo_grads(
        encdec, proj, snaps, noise, beta_kl=0.0)
    assert rec == 0.0
    for g in enc_g.parameter_arrays() + dec_g.parameter_arrays() + proj_g:
        assert np.all(g == 0.0)


def test_train_step_reduces_loss_on_frozen_distribution():
    rng = np.random.default_rng(0)
    shapes = [(6, 5), (3, 6)]
    bases = [[rng.normal(size=(4,) + s) * 0.5 for s in shapes] for _ in range(2)]

    def draw(r):
        u = r.normal(size=4)
        return [[np.tensordot(u, bases[n][m], axes=1) + 0.05 * r.normal(size=shapes[m])
                 for m in range(2)] for n in range(2)]

    emb = encoder.StateEmbedder(shapes, n_order=1, d=3, h=16, seed=1)
    data_rng = np.random.default_rng(11)
    pool = [draw(data_rng) for _ in range(128)]
    train_rng = np.random.default_rng(13)
    losses = []
    for _ in range(500):
        batch = [pool[int(train_rng.integers(len(pool)))] for _ in range(8)]
        rec, skipped = encoder.train_step(emb.encdec, emb.proj, batch, emb.opt,
                                          train_rng)
        assert not skipped
        losses.append(rec)
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_training_cadence():
    assert encoder.training_cadence(0)
    assert encoder.training_cadence(10)
    assert not encoder.training_cadence(7)
    assert encoder.training_cadence(30)
    assert not encoder.training_cadence(31)


def test_reservoir_fills_then_replaces_uniformly():
    rng = np.random.default_rng(0)
    res = encoder.Reservoir(capacity=16)
    for i in range(16):
        res.offer(i, rng)
    assert res.items == list(range(16))
    for i in range(16, 2000):
        res.offer(i, rng)
    assert len(res) == 16
    assert np.mean(res.items) > 500  # old items were replaced


def test_random_projection_mode_never_trains():
    emb = encoder.StateEmbedder(SHAPES, n_order=0, d=2, h=8, seed=0,
                                mode="random_projection")
    rng = np.random.default_rng(0)
    before = [c.copy() for c in emb.proj.matrices_flat()]
    for step in range(40):
        emb.observe(snapshot_batch(rng, 0, 1)[0], step, rng)
    for a, b in zip(emb.proj.matrices_flat(), before):
        assert np.array_equal(a, b)
    assert emb.last_rec_loss is None


def test_embedder_observe_trains_on_cadence():
    emb = encoder.StateEmbedder(SHAPES, n_order=0, d=2, h=8, seed=0,
                                batch_size=4)
    rng = np.random.default_rng(0)
    for step in range(25):
        emb.observe(snapshot_batch(rng, 0, 1)[0], step, rng)
    assert emb.last_rec_loss is not None


def test_embedder_snapshot_round_trip(tmp_path):
    emb = encoder.StateEmbedder(SHAPES, n_order=1, d=2, h=8, seed=0)
    path = tmp_path / "embedder.npz"
    emb.save(path)
    with np.load(path) as data:
        enc = nn.net_from_arrays(data, prefix="encoder_")
        for a, b in zip(enc.parameter_arrays(),
                        emb.encdec.encoder.parameter_arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(data["proj_c0_0"], emb.proj.matrices[0][0])
