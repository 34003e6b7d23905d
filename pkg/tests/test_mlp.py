import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from prtradeoff import ContractViolationError, InvalidParameterError
from prtradeoff.mlp import (
    DISCRIMINATOR_ARCH,
    GENERATOR_ARCH,
    MlpArch,
    MlpParams,
    adam_init,
    adam_step,
    init_mlp,
    mlp_apply,
    mlp_backward,
    mlp_forward,
)
from prtradeoff.rng import make_rng


def naive_forward(p, x):
    """Row-by-row reimplementation with explicit loops."""
    out = []
    for row in np.atleast_2d(x):
        h = list(row)
        for li, (w, b) in enumerate(zip(p.weights, p.biases)):
            z = [sum(h[i] * w[i, j] for i in range(w.shape[0])) + b[j] for j in range(w.shape[1])]
            h = [max(v, 0.0) for v in z] if li < p.n_layers - 1 else z
        out.append(h)
    return np.array(out)


def random_params(arch, seed, bias_scale=0.3):
    p = init_mlp(arch, seed)
    rng = make_rng(seed + 1000)
    return MlpParams(p.weights, tuple(bias_scale * rng.standard_normal(b.shape) for b in p.biases))


def test_architectures():
    assert GENERATOR_ARCH.dims == [1, 16, 16, 16, 16, 16, 16, 1]
    assert DISCRIMINATOR_ARCH.dims == [2, 16, 16, 16, 16, 16, 16, 1]
    assert init_mlp(GENERATOR_ARCH, 0).n_layers == 7


def test_init_is_seeded_with_zero_biases():
    a, b = init_mlp(DISCRIMINATOR_ARCH, 3), init_mlp(DISCRIMINATOR_ARCH, 3)
    assert_array_equal(a.flat(), b.flat())
    assert all(np.all(bb == 0) for bb in a.biases)
    assert not np.array_equal(a.flat(), init_mlp(DISCRIMINATOR_ARCH, 4).flat())


def test_he_init_preserves_second_moment():
    # the ReLU halves the second moment and the 2 / fan_in variance restores it,
    # so consecutive hidden pre-activations keep the same scale
    arch = MlpArch(input_dim=16, hidden=256, n_layers=4)
    x = make_rng(0).standard_normal((10_000, 16))
    _, cache = mlp_forward(init_mlp(arch, 1), x)
    m = [np.mean(z**2) for z in cache.pre[:-1]]
    for a, b in zip(m[:-1], m[1:]):
        assert 0.5 < b / a < 2.0


def test_zero_network_outputs_zero():
    p = init_mlp(GENERATOR_ARCH, 0).zeros_like()
    assert_array_equal(mlp_apply(p, np.linspace(-3, 3, 7)[:, None]), 0.0)


def test_single_identity_layer():
    p = MlpParams((np.eye(2),), (np.zeros(2),))
    x = make_rng(0).standard_normal((5, 2))
    assert_array_equal(mlp_apply(p, x), x)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_naive(seed):
    p = random_params(DISCRIMINATOR_ARCH, seed)
    x = make_rng(seed).standard_normal((4, 2))
    assert_allclose(mlp_apply(p, x), naive_forward(p, x), rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_width():
    with pytest.raises(InvalidParameterError):
        mlp_forward(init_mlp(GENERATOR_ARCH, 0), np.zeros((3, 2)))


def test_params_validate_chaining():
    with pytest.raises(InvalidParameterError):
        MlpParams((np.zeros((1, 3)), np.zeros((2, 1))), (np.zeros(3), np.zeros(1)))


def _fd_param_grad(p, x, g_out, h=1e-6):
    flat = p.flat()
    out = np.empty_like(flat)
    for k in range(len(flat)):
        e = np.zeros_like(flat)
        e[k] = h
        fp = np.sum(mlp_apply(p.with_flat(flat + e), x) * g_out)
        fm = np.sum(mlp_apply(p.with_flat(flat - e), x) * g_out)
        out[k] = (fp - fm) / (2 * h)
    return out


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_backward_matches_finite_differences(seed):
    rng = make_rng(seed)
    arch = MlpArch(input_dim=int(rng.integers(1, 3)), hidden=int(rng.integers(2, 6)), n_layers=int(rng.integers(1, 4)))
    p = random_params(arch, seed)
    x = rng.standard_normal((3, arch.input_dim))
    g_out = rng.standard_normal((3, 1))
    out, cache = mlp_forward(p, x)
    grads, gin = mlp_backward(p, cache, g_out)
    assert _rel_err(grads.flat(), _fd_param_grad(p, x, g_out)) < 1e-4
    fd_in = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            e = np.zeros_like(x)
            e[i, j] = 1e-6
            fd_in[i, j] = (np.sum(mlp_apply(p, x + e) * g_out) - np.sum(mlp_apply(p, x - e) * g_out)) / 2e-6
    assert _rel_err(gin, fd_in) < 1e-4


def test_backward_zero_and_linearity():
    p = random_params(GENERATOR_ARCH, 2)
    x = make_rng(2).standard_normal((6, 1))
    out, cache = mlp_forward(p, x)
    g0, gin0 = mlp_backward(p, cache, np.zeros_like(out))
    assert np.all(g0.flat() == 0) and np.all(gin0 == 0)
    g = make_rng(3).standard_normal(out.shape)
    g1, _ = mlp_backward(p, cache, g)
    g2, _ = mlp_backward(p, cache, 2 * g)
    assert_allclose(g2.flat(), 2 * g1.flat(), rtol=1e-15)


def test_stale_cache_rejected():
    p = init_mlp(GENERATOR_ARCH, 0)
    q = init_mlp(GENERATOR_ARCH, 0)
    out, cache = mlp_forward(p, np.ones((2, 1)))
    with pytest.raises(ContractViolationError):
        mlp_backward(q, cache, np.ones_like(out))


def test_adam_first_step_moves_by_lr_sign():
    p = random_params(GENERATOR_ARCH, 0)
    g = random_params(GENERATOR_ARCH, 1)
    new, state = adam_step(adam_init(p), p, g, lr=1e-3)
    delta = new.flat() - p.flat()
    nz = g.flat() != 0
    assert_allclose(delta[nz], -1e-3 * np.sign(g.flat()[nz]), rtol=1e-4)
    assert state.step == 1


def test_adam_zero_gradient_is_a_fixed_point():
    p = random_params(GENERATOR_ARCH, 0)
    new, _ = adam_step(adam_init(p), p, p.zeros_like(), lr=1e-3)
    assert_array_equal(new.flat(), p.flat())


def test_adam_deterministic_and_shape_checked():
    p = random_params(GENERATOR_ARCH, 0)
    g = random_params(GENERATOR_ARCH, 1)
    runs = []
    for _ in range(2):
        q, s = p, adam_init(p)
        for _ in range(5):
            q, s = adam_step(s, q, g, 1e-3)
        runs.append(q.flat())
    assert_array_equal(runs[0], runs[1])
    with pytest.raises(InvalidParameterError):
        adam_step(adam_init(p), p, init_mlp(DISCRIMINATOR_ARCH, 0), 1e-3)


def test_params_dict_round_trip():
    p = random_params(DISCRIMINATOR_ARCH, 9)
    assert_array_equal(MlpParams.from_dict(p.to_dict()).flat(), p.flat())
