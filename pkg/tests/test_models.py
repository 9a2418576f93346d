import numpy as np
import pytest

from sclab import grad_core as gc
from sclab.grad_core import Tensor
from sclab.models import (EncoderSpec, HeadSpec, LatentPartition, Model, encode, head_forward, init_params,
                          kl_divergence, reparameterize, split_latent)


def mlp(width=4, hidden=(), variational=False):
    return EncoderSpec("MLP", in_channels=1, in_length=width, channels=(), hidden=hidden,
                       latent_dim=width, variational=variational)


def test_zero_weights_give_zero_latent():
    spec = EncoderSpec(in_length=64, channels=(4, 4), latent_dim=6)
    params = {k: Tensor(np.zeros_like(v.data)) for k, v in init_params(spec, HeadSpec(), 0).items()}
    z = encode(spec, params, np.random.default_rng(0).standard_normal((1, 64)))
    np.testing.assert_array_equal(z.data, np.zeros(6))


def test_identity_mlp_reproduces_input():
    spec = mlp(4)
    params = {"enc.proj.w": Tensor(np.eye(4)), "enc.proj.b": Tensor(np.zeros(4))}
    x = np.array([[0.5, 1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(encode(spec, params, x).data, x[0])


def test_encode_deterministic_for_seed():
    spec = EncoderSpec(in_length=64, channels=(4, 8), latent_dim=8)
    x = np.random.default_rng(1).standard_normal((3, 1, 64))
    a = Model(spec, HeadSpec(), LatentPartition(8), seed=5).embed(x)
    b = Model(spec, HeadSpec(), LatentPartition(8), seed=5).embed(x)
    assert a.tobytes() == b.tobytes()


def test_encode_rejects_wrong_shape():
    spec = EncoderSpec(in_length=64, channels=(4,), latent_dim=4)
    with pytest.raises(gc.ShapeError, match="64"):
        encode(spec, init_params(spec, HeadSpec(), 0), np.zeros((1, 60)))


def test_cnn_too_short_for_strides():
    with pytest.raises(ValueError, match="too short"):
        EncoderSpec(in_length=16, channels=(4, 4, 4, 4), kernel=5, stride=2)


@pytest.mark.parametrize("part, sizes", [((2, 1, 1), (2, 1, 1)), ((4, 0, 0), (4, 0, 0)), ((0, 4, 0), (0, 4, 0))])
def test_split_latent(part, sizes):
    z = np.array([1.0, 2.0, 3.0, 4.0])
    pieces = split_latent(z, LatentPartition(*part))
    assert tuple(p.shape[-1] for p in pieces) == sizes
    np.testing.assert_array_equal(np.concatenate([p.data for p in pieces]), z)


def test_split_latent_length_mismatch():
    with pytest.raises(gc.ShapeError):
        split_latent(np.zeros(5), LatentPartition(2, 2, 0))


def test_split_latent_routes_gradient_to_each_slice():
    z = Tensor(np.arange(4.0), True)
    inv, var, free = split_latent(z, LatentPartition(2, 1, 1))
    (gc.sum_(inv) * 1.0 + gc.sum_(var) * 2.0 + gc.sum_(free) * 3.0).backward()
    np.testing.assert_array_equal(z.grad, [1, 1, 2, 3])


def test_negative_partition_rejected():
    with pytest.raises(ValueError):
        LatentPartition(-1, 2, 0)


def test_zero_classifier_gives_uniform_logits():
    head = HeadSpec("CLASSIFIER", 4, (8,))
    params = {k: Tensor(np.zeros_like(v.data)) for k, v in init_params(mlp(4), head, 0).items()}
    np.testing.assert_array_equal(head_forward(head, params, np.ones(4)).data, np.zeros(4))


def test_zero_decoder_gives_zero_signal_in_input_shape():
    head = HeadSpec("DECODER", 8, (), (2, 4))
    params = {k: Tensor(np.zeros_like(v.data)) for k, v in init_params(mlp(4), head, 0).items()}
    out = head_forward(head, params, np.ones((3, 4)))
    assert out.shape == (3, 2, 4)
    assert not out.data.any()


def test_head_width_mismatch():
    head = HeadSpec("CLASSIFIER", 4, ())
    with pytest.raises(gc.ShapeError):
        head_forward(head, init_params(mlp(4), head, 0), np.ones(5))


def test_reparameterize_vanishing_variance():
    mu = np.array([0.3, -1.2, 4.0])
    z = reparameterize(mu, np.full(3, -50.0), 0)
    assert np.max(np.abs(z.data - mu)) < 1e-10


def test_reparameterize_fixed_seed():
    a = reparameterize(np.zeros(4), np.zeros(4), 9).data
    b = reparameterize(np.zeros(4), np.zeros(4), 9).data
    assert a.tobytes() == b.tobytes()


def test_reparameterize_monte_carlo_mean():
    n = 100_000
    mu, log_var = np.array([0.5, -2.0]), np.array([0.0, np.log(4.0)])
    z = reparameterize(np.tile(mu, (n, 1)), np.tile(log_var, (n, 1)), 3).data
    sigma = np.exp(0.5 * log_var)
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * sigma / np.sqrt(n))


def test_reparameterize_gradients_flow():
    mu, lv = Tensor(np.zeros(3), True), Tensor(np.zeros(3), True)
    gc.sum_(reparameterize(mu, lv, 0)).backward()
    np.testing.assert_array_equal(mu.grad, np.ones(3))
    assert np.all(lv.grad != 0)


def test_kl_examples():
    assert kl_divergence(np.zeros(3), np.zeros(3)).item() == 0
    assert kl_divergence(np.array([1.0]), np.array([0.0])).item() == 0.5


def test_kl_nonnegative_on_random_inputs():
    rng = np.random.default_rng(4)
    for _ in range(200):
        mu, lv = rng.normal(0, 2, 5), rng.normal(0, 2, 5)
        assert kl_divergence(mu, lv).item() >= 0


def test_argmax_stable_under_positive_rescaling():
    logits = np.random.default_rng(0).standard_normal((50, 6))
    for s in (1e-3, 2.0, 1e3):
        assert np.array_equal((logits * s).argmax(axis=1), logits.argmax(axis=1))


def test_gradient_reaches_encoder_from_every_slice():
    spec = mlp(6, hidden=(5,))
    params = init_params(spec, HeadSpec("CLASSIFIER", 2, ()), 2)
    x = np.random.default_rng(2).uniform(0.1, 1.0, (1, 6))
    p = LatentPartition(2, 2, 2)
    for sl in (p.inv, p.var, p.free):
        def loss(w):
            local = dict(params, **{"enc.fc0.w": Tensor(w)})
            return float(np.sum(encode(spec, local, x).data[sl] ** 2))
        (num,) = gc.numerical_grad(loss, [params["enc.fc0.w"].data])
        assert np.abs(num).max() > 0


@pytest.mark.parametrize("part", [(32, 0, 0), (0, 32, 0), (0, 0, 32)])
def test_degenerate_partitions_train(part):
    from sclab import config
    from sclab.train import train
    cfg = config.ecg_config(**{"run.steps": 2, "run.batch_size": 4, "run.n_per_class": 3,
                               "partition.d_inv": part[0], "partition.d_var": part[1],
                               "partition.d_free": part[2]})
    result = train(cfg)
    assert result.step_count == 2
    assert all(np.isfinite(r["total"]) for r in result.log)
