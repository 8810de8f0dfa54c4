import numpy as np
import pytest

from blockworld.nets import (
    AdamState,
    Dense,
    LayerNorm,
    Network,
    Relu,
    Residual,
    Swish,
    adam_step,
    build_mlp,
    build_network,
    build_resnet,
    load_checkpoint,
    params_finite,
    quasimetric_distance,
    quasimetric_pairwise,
    quasimetric_pairwise_vjp,
    save_checkpoint,
)


def numeric_grads(loss_fn, params, h=1e-5):
    """Central finite differences of a scalar loss over a param registry."""
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params)
            flat[i] = orig - h
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(n), 1e-6)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_network_grads(net, seed, batch=3):
    rng = np.random.default_rng(seed)
    params = net.init_params(rng, dtype=np.float64)
    # give zero-initialized layers nonzero values so their gradients are
    # exercised too
    for k in params:
        if params[k].size and not params[k].any():
            params[k] = rng.normal(scale=0.3, size=params[k].shape)
    x = rng.normal(size=(batch, net.input_dim))
    cotangent = rng.normal(size=(batch, net.output_dim))

    def loss_fn(p):
        return float((net.forward(p, x) * cotangent).sum())

    y, caches = net.forward_cached(params, x)
    analytic, _ = net.backward(params, caches, cotangent)
    numeric = numeric_grads(loss_fn, params)
    return max_rel_error(analytic, numeric)


class TestForward:
    def test_layernorm_passthrough_example(self):
        ln = LayerNorm(2)
        p = ln.init(np.random.default_rng(0), np.float64)
        y, _ = ln.forward(p, np.array([[1.0, -1.0]]))
        assert np.allclose(y, [[1.0, -1.0]], atol=1e-5)

    def test_swish_values(self):
        sw = Swish()
        y, _ = sw.forward({}, np.array([[0.0, 1.0, -2.0]]))
        assert y[0, 0] == 0.0
        assert y[0, 1] == pytest.approx(1.0 / (1.0 + np.exp(-1.0)))
        assert y[0, 2] == pytest.approx(-2.0 / (1.0 + np.exp(2.0)))

    def test_zero_final_layer_gives_zero_outputs(self):
        net = build_mlp(5, 3, hidden=8)
        params = net.init_params(np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(4, 5)).astype(np.float32)
        assert (net.forward(params, x) == 0).all()

    def test_resnet_block_is_identity_at_init(self):
        rng = np.random.default_rng(3)
        block = Residual([Dense(6, 6), LayerNorm(6), Swish(),
                          Dense(6, 6, zero_init=True), LayerNorm(6), Swish()])
        p = block.init(rng, np.float64)
        x = rng.normal(size=(5, 6))
        y, _ = block.forward(p, x)
        assert np.allclose(y, x)

    def test_shape_stability(self):
        net = build_resnet(7, 4, width=8, blocks=2, layers_per_block=2)
        params = net.init_params(np.random.default_rng(4))
        for batch in (1, 3, 17):
            x = np.random.default_rng(batch).normal(size=(batch, 7)).astype(np.float32)
            assert net.forward(params, x).shape == (batch, 4)

    def test_dimension_mismatch_rejected(self):
        net = build_mlp(5, 3, hidden=8)
        params = net.init_params(np.random.default_rng(0))
        with pytest.raises(ValueError, match="shape"):
            net.forward(params, np.zeros((2, 4), dtype=np.float32))

    def test_forward_deterministic(self):
        net = build_mlp(5, 3, hidden=8, zero_final=False)
        params = net.init_params(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 5)).astype(np.float32)
        assert (net.forward(params, x) == net.forward(params, x)).all()

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            build_network("transformer", 4, 2)


class TestGradients:
    def test_dense_weight_grad_is_outer_product(self):
        layer = Dense(3, 2)
        p = layer.init(np.random.default_rng(0), np.float64)
        x = np.array([[1.0, 2.0, -1.0]])
        dy = np.array([[0.5, -0.25]])
        _, cache = layer.forward(p, x)
        _, grads = layer.backward(p, cache, dy)
        assert np.allclose(grads["W"], np.outer(x[0], dy[0]))
        assert np.allclose(grads["b"], dy[0])

    @pytest.mark.parametrize("seed", range(10))
    def test_mlp_small_nets(self, seed):
        rng = np.random.default_rng(seed + 100)
        in_dim = int(rng.integers(2, 8))
        out_dim = int(rng.integers(1, 8))
        hidden = int(rng.integers(2, 8))
        net = build_mlp(in_dim, out_dim, hidden=hidden)
        assert check_network_grads(net, seed) < 1e-4

    def test_resnet_reduced(self):
        net = build_resnet(5, 3, width=8, blocks=2, layers_per_block=2)
        assert check_network_grads(net, 0) < 1e-4

    def test_layernorm_alone(self):
        net = Network([LayerNorm(6)], 6, 6)
        assert check_network_grads(net, 1) < 1e-4

    def test_swish_dense_stack(self):
        net = Network([Dense(4, 5), Swish(), Dense(5, 2)], 4, 2)
        assert check_network_grads(net, 2) < 1e-4

    def test_stop_gradient_branch_gets_no_grads(self):
        # a target evaluated with plain forward contributes nothing:
        # gradients equal those of the loss with the target held constant,
        # and differ from the fully differentiated loss
        net = build_mlp(4, 2, hidden=6, zero_final=False)
        rng = np.random.default_rng(5)
        params = net.init_params(rng, dtype=np.float64)
        x = rng.normal(size=(3, 4))
        x2 = rng.normal(size=(3, 4))
        frozen = net.forward(params, x2).copy()

        def loss_frozen(p):
            return float(((net.forward(p, x) - frozen) ** 2).sum())

        def loss_live(p):
            return float(((net.forward(p, x) - net.forward(p, x2)) ** 2).sum())

        y, caches = net.forward_cached(params, x)
        analytic, _ = net.backward(params, caches, 2.0 * (y - frozen))
        assert max_rel_error(analytic, numeric_grads(loss_frozen, params)) < 1e-4
        assert max_rel_error(analytic, numeric_grads(loss_live, params)) > 1e-2


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        net = build_mlp(3, 2, hidden=4, zero_final=False)
        params = net.init_params(np.random.default_rng(0), dtype=np.float64)
        state = AdamState.for_params(params)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        new_params, new_state = adam_step(params, zero, 1e-3, state)
        for k in params:
            assert (new_params[k] == params[k]).all()
        assert new_state.t == 1

    def test_first_step_is_sign_scaled(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        grads = {"w": np.array([0.5, -0.1, 2.0])}
        new_params, _ = adam_step(params, grads, 0.01, AdamState.for_params(params))
        # bias-corrected first step: delta = -lr * g / (|g| + eps)
        expected = params["w"] - 0.01 * np.sign(grads["w"])
        assert np.allclose(new_params["w"], expected, atol=1e-6)

    def test_moments_decay(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([1.0])}
        _, state = adam_step(params, grads, 0.0, AdamState.for_params(params))
        _, state2 = adam_step(params, {"w": np.zeros(1)}, 0.0, state)
        assert state2.m["w"][0] == pytest.approx(0.9 * state.m["w"][0])
        assert state2.v["w"][0] == pytest.approx(0.999 * state.v["w"][0])

    def test_deterministic(self):
        params = {"w": np.array([1.0, 2.0])}
        grads = {"w": np.array([0.3, -0.7])}
        a, _ = adam_step(params, grads, 0.01, AdamState.for_params(params))
        b, _ = adam_step(params, grads, 0.01, AdamState.for_params(params))
        assert (a["w"] == b["w"]).all()

    def test_registry_mismatch(self):
        params = {"w": np.zeros(2)}
        with pytest.raises(ValueError, match="registry mismatch"):
            adam_step(params, {"v": np.zeros(2)}, 0.01, AdamState.for_params(params))

    def test_shape_mismatch(self):
        params = {"w": np.zeros(2)}
        with pytest.raises(ValueError, match="shape mismatch"):
            adam_step(params, {"w": np.zeros(3)}, 0.01, AdamState.for_params(params))


class TestQuasimetric:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.normal(size=16)
            assert quasimetric_distance(x, x) == 0.0

    def test_triangle_inequality_sampled(self):
        rng = np.random.default_rng(1)
        x, y, z = rng.normal(size=(3, 10_000, 16)).astype(np.float64)
        dxz = quasimetric_distance(x, z)
        dxy = quasimetric_distance(x, y)
        dyz = quasimetric_distance(y, z)
        assert (dxz <= dxy + dyz + 1e-9).all()

    def test_asymmetry_witness(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b = rng.normal(size=(2, 8))
            if quasimetric_distance(a, b) != quasimetric_distance(b, a):
                return
        pytest.fail("no asymmetric pair found in 100 random draws")

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            quasimetric_distance(np.zeros(5), np.zeros(5))

    def test_group_divisibility(self):
        with pytest.raises(ValueError, match="groups"):
            quasimetric_distance(np.zeros(10), np.ones(10), num_groups=3)

    def test_pairwise_matches_elementwise(self):
        rng = np.random.default_rng(3)
        phi = rng.normal(size=(7, 16))
        psi = rng.normal(size=(5, 16))
        dist, _ = quasimetric_pairwise(phi, psi)
        for i in range(7):
            for j in range(5):
                assert dist[i, j] == pytest.approx(
                    float(quasimetric_distance(phi[i], psi[j]))
                )

    def test_pairwise_gradients(self):
        rng = np.random.default_rng(4)
        phi = rng.normal(size=(3, 8))
        psi = rng.normal(size=(4, 8))
        ddist = rng.normal(size=(3, 4))
        _, cache = quasimetric_pairwise(phi, psi, num_groups=2)
        dphi, dpsi = quasimetric_pairwise_vjp(cache, ddist)
        h = 1e-6

        def total(p, q):
            d, _ = quasimetric_pairwise(p, q, num_groups=2)
            return float((d * ddist).sum())

        for arr, grad in ((phi, dphi), (psi, dpsi)):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = total(phi, psi)
                flat[i] = orig - h
                down = total(phi, psi)
                flat[i] = orig
                num = (up - down) / (2 * h)
                assert abs(num - gflat[i]) < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "layer.W": rng.normal(size=(3, 4)).astype(np.float32),
            "layer.b": rng.normal(size=4),
            "codes": np.arange(6, dtype=np.uint8),
            "steps": np.array([123], dtype=np.int64),
        }
        meta = {"grid_size": 4, "algorithm": "dqn_td"}
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, tensors, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded_meta == meta
        assert set(loaded) == set(tensors)
        for k in tensors:
            assert loaded[k].dtype == tensors[k].dtype
            assert (loaded[k] == tensors[k]).all()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)


def test_params_finite():
    assert params_finite({"w": np.ones(3)})
    assert not params_finite({"w": np.array([1.0, np.nan])})
