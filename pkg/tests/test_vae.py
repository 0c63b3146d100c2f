"""Encoder/decoder contracts, the reparameterized sampler, and both loss
terms, with the analytic KL checked against a Monte-Carlo oracle."""
import numpy as np
import pytest

from xgan import tensor as T
from xgan import vae as V
from xgan.models import build_toy_models
from xgan.nn import SharingConfig
from xgan.rng import Rng
from xgan.tensor import ShapeError, Tape, Tensor, grad_check

from oracles import monte_carlo_kl


def toy_bundle(seed=1):
    return build_toy_models(SharingConfig(k=1, l=1), Rng(seed), latent_dim=4, hidden=8)


def posterior(mu, log_var):
    return V.GaussianPosterior(mu=Tensor(np.asarray(mu, np.float64)),
                               log_var=Tensor(np.asarray(log_var, np.float64)))


def test_zero_weight_encoder_gives_standard_posterior():
    bundle = toy_bundle()
    for sid in bundle.vae_a.encoder_slot_ids():
        bundle.store.slots[sid].value = np.zeros_like(bundle.store.slots[sid].value)
    post = V.encode(bundle.vae_a, Tensor(np.full((3, 1), 0.7, np.float32)))
    assert np.array_equal(post.mu.array, np.zeros((3, 4)))
    assert np.array_equal(post.log_var.array, np.zeros((3, 4)))


def test_identical_inputs_identical_posteriors():
    bundle = toy_bundle()
    x = Tensor(np.full((2, 1), -0.25, np.float32))
    post = V.encode(bundle.vae_a, x)
    assert np.array_equal(post.mu.array[0], post.mu.array[1])
    assert np.array_equal(post.log_var.array[0], post.log_var.array[1])


def test_input_sensitivity():
    bundle = toy_bundle()
    p1 = V.encode(bundle.vae_a, Tensor(np.array([[0.2]], np.float32)))
    p2 = V.encode(bundle.vae_a, Tensor(np.array([[0.9]], np.float32)))
    assert not np.array_equal(p1.mu.array, p2.mu.array)


def test_reparameterize_degenerate_noise():
    mu = np.array([[0.4, -1.2]])
    post = posterior(mu, np.full((1, 2), -40.0))
    code = V.reparameterize(post, Rng(3).split("e"))
    assert np.abs(code.z.array - mu).max() < 1e-8


def test_reparameterize_moments():
    post = posterior(np.zeros((100_000, 1)), np.zeros((100_000, 1)))
    z = V.reparameterize(post, Rng(9).split("e")).z.array
    assert abs(z.mean()) < 0.02
    assert 0.97 <= z.var() <= 1.03


def test_reparameterize_reproducible():
    post = posterior(np.zeros((4, 2)), np.zeros((4, 2)))
    z1 = V.reparameterize(post, Rng(5).split("e")).z.array
    z2 = V.reparameterize(post, Rng(5).split("e")).z.array
    assert np.array_equal(z1, z2)


def test_gradient_reaches_mu_and_log_var_but_not_eps():
    tape = Tape()
    mu = tape.leaf(np.array([[0.5, -0.5]]))
    lv = tape.leaf(np.array([[0.1, 0.2]]))
    post = V.GaussianPosterior(mu=mu, log_var=lv)
    code = V.reparameterize(post, Rng(1).split("e"))
    loss = T.tsum(T.square(code.z))
    grads = tape.backward(loss)
    assert grads[mu.node] is not None and np.any(grads[mu.node])
    assert grads[lv.node] is not None
    # the noise draw is a constant: the only leaves on the tape are mu/log_var
    assert set(grads) == {mu.node, lv.node}


def test_kl_standard_normal_is_zero():
    assert V.kl_to_standard_normal(posterior(np.zeros((2, 3)), np.zeros((2, 3)))).item() == 0.0


def test_kl_unit_mean_value():
    # mu=1, sigma=1, J=1 -> 1/2
    val = V.kl_to_standard_normal(posterior([[1.0]], [[0.0]])).item()
    assert abs(val - 0.5) < 1e-12


def test_kl_variance_two_value():
    # mu=0, sigma^2=2, J=1 -> (2 - 1 - ln 2)/2
    val = V.kl_to_standard_normal(posterior([[0.0]], [[np.log(2.0)]])).item()
    assert abs(val - 0.5 * (2.0 - 1.0 - np.log(2.0))) < 1e-12


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(0)
    for _ in range(5):
        mu = rng.normal(size=(1, 3))
        log_var = rng.normal(size=(1, 3)) * 0.5
        analytic = V.kl_to_standard_normal(posterior(mu, log_var)).item()
        est, se = monte_carlo_kl(mu, np.exp(0.5 * log_var), 200_000, rng)
        assert abs(analytic - est) <= 3 * se


def test_kl_nonnegative_property():
    rng = np.random.default_rng(7)
    mu = rng.normal(size=(64, 5)) * 2
    log_var = rng.normal(size=(64, 5))
    assert V.kl_to_standard_normal(posterior(mu, log_var)).item() >= 0.0
    # equality only at mu=0, log_var=0
    assert V.kl_to_standard_normal(posterior(np.zeros((1, 5)), np.zeros((1, 5)))).item() < 1e-9


def test_reconstruction_identity_and_shift():
    x = Tensor(np.random.RandomState(0).randn(4, 3, 2, 2))
    assert V.reconstruction_loss(x, x).item() == 0.0
    shifted = Tensor(x.array + 1.0)
    d = int(np.prod(x.shape[1:]))
    assert abs(V.reconstruction_loss(shifted, x).item() - d / 2.0) < 1e-9


def test_reconstruction_shape_mismatch():
    with pytest.raises(ShapeError):
        V.reconstruction_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_vae_pair_loss_singleton_and_mean_semantics():
    bundle = toy_bundle()
    x = np.array([[0.5]], np.float32)
    xb = np.array([[-0.5]], np.float32)
    la, lb = V.vae_loss_pair(
        bundle.vae_a, bundle.vae_b, Tensor(x), Tensor(xb),
        Rng(2).split("a"), Rng(2).split("b"),
    )
    total = la.item() + lb.item()
    # doubling the batch by repetition leaves the mean loss unchanged
    la2, lb2 = V.vae_loss_pair(
        bundle.vae_a, bundle.vae_b,
        Tensor(np.repeat(x, 2, axis=0)), Tensor(np.repeat(xb, 2, axis=0)),
        Rng(2).split("a"), Rng(2).split("b"),
    )
    # same noise per row is not guaranteed, so compare with noise suppressed
    for sid in bundle.vae_a.encoder_slot_ids() + bundle.vae_b.encoder_slot_ids():
        if sid.endswith("logvar.L1.b"):
            bundle.store.slots[sid].value = np.full_like(bundle.store.slots[sid].value, -40.0)
    la3, lb3 = V.vae_loss_pair(
        bundle.vae_a, bundle.vae_b, Tensor(x), Tensor(xb),
        Rng(2).split("a"), Rng(2).split("b"),
    )
    la4, lb4 = V.vae_loss_pair(
        bundle.vae_a, bundle.vae_b,
        Tensor(np.repeat(x, 3, axis=0)), Tensor(np.repeat(xb, 3, axis=0)),
        Rng(9).split("a"), Rng(9).split("b"),
    )
    assert abs((la3.item() + lb3.item()) - (la4.item() + lb4.item())) < 1e-5
    assert total > 0


def test_vae_pair_empty_batch_rejected():
    bundle = toy_bundle()
    with pytest.raises(ShapeError):
        V.vae_loss_pair(
            bundle.vae_a, bundle.vae_b,
            Tensor(np.zeros((0, 1), np.float32)), Tensor(np.zeros((0, 1), np.float32)),
            Rng(1), Rng(1),
        )


def test_end_to_end_vae_loss_gradient():
    """Full KL + reconstruction loss through tiny encoder/decoder MLPs."""
    rs = np.random.RandomState(3)
    x64 = rs.randn(3, 2)
    params = {
        "enc_w": rs.randn(2, 4) * 0.5,
        "enc_b": rs.randn(4) * 0.1,
        "mu_w": rs.randn(4, 2) * 0.5,
        "mu_b": rs.randn(2) * 0.1,
        "lv_w": rs.randn(4, 2) * 0.5,
        "lv_b": rs.randn(2) * 0.1,
        "dec_w": rs.randn(2, 2) * 0.5,
        "dec_b": rs.randn(2) * 0.1,
    }
    eps = Rng(4).split("fixed").normal((3, 2))

    def f(p):
        x = Tensor(x64)
        h = T.relu(T.add(T.matmul(x, p["enc_w"]), p["enc_b"]))
        mu = T.add(T.matmul(h, p["mu_w"]), p["mu_b"])
        lv = T.add(T.matmul(h, p["lv_w"]), p["lv_b"])
        post = V.GaussianPosterior(mu=mu, log_var=lv)
        std = T.exp(T.mul(lv, Tensor(np.asarray(0.5))))
        z = T.add(mu, T.mul(std, Tensor(eps)))
        xhat = T.tanh(T.add(T.matmul(z, p["dec_w"]), p["dec_b"]))
        return T.add(V.kl_to_standard_normal(post), V.reconstruction_loss(xhat, x))

    report = grad_check(f, params, tol=1e-3)
    assert report.passed, report.summary()
