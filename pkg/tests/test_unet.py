"""U-Net: construction, forward modes, gradient flow, state round trips."""

import numpy as np
import pytest

from polysnake.checkpoint import load_arrays, save_arrays
from polysnake.gradcheck import max_rel_err, numerical_grad_subset, subset_indices
from polysnake.nn import batchnorm2d_forward, bilinear_resize_forward, conv2d_forward
from polysnake.tensor import Tensor
from polysnake.unet import UNet, UNetConfig

TINY = UNetConfig(in_channels=2, base_channels=3, depth=2, dropout_p=0.2)


def ref_forward(net, x64):
    """Float64 eval-mode forward mirror; also reports the smallest margin to
    a relu sign flip or a pooling argmax tie (for kink-free input selection)."""
    cfg = net.cfg
    P = {k: t.data.astype(np.float64) for k, t in net.params.items()}

    def bn(x, name):
        st = net.stats[name]
        return batchnorm2d_forward(x, P[name + ".gamma"], P[name + ".beta"],
                                   st.mean.astype(np.float64),
                                   st.var.astype(np.float64), st.eps)

    margin = np.inf
    x = x64
    skips = []
    for i in range(cfg.depth):
        for jc in (1, 2, 3):
            x = conv2d_forward(x, P[f"enc{i}.conv{jc}.w"], P[f"enc{i}.conv{jc}.b"], 1, 1)
        margin = min(margin, np.abs(x).min())
        x = bn(np.maximum(x, 0.0), f"enc{i}.bn")
        skips.append(x)
        n, c, h, w = x.shape
        win = (x.reshape(n, c, h // 2, 2, w // 2, 2)
                .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4))
        top2 = np.sort(win, axis=-1)[..., -2:]
        gaps = top2[..., 1] - top2[..., 0]
        # exact ties come from relu-clipped duplicates and move in lockstep;
        # only near-ties make the argmax flip under perturbation
        near = gaps[gaps > 0.0]
        if near.size:
            margin = min(margin, near.min())
        x = win.max(axis=-1)
    for j in range(cfg.depth):
        skip = skips[cfg.depth - 1 - j]
        x = bn(x, f"dec{j}.bn")
        margin = min(margin, np.abs(x).min())
        x = np.maximum(x, 0.0)
        x = bilinear_resize_forward(x, skip.shape[2], skip.shape[3])
        x = np.concatenate([x, skip], axis=1)
        for jc in (1, 2, 3):
            x = conv2d_forward(x, P[f"dec{j}.conv{jc}.w"], P[f"dec{j}.conv{jc}.b"], 1, 1)
    z = conv2d_forward(x, P["head.w"], P["head.b"], 1, 0)
    if cfg.head == "linear":
        out = z * cfg.field_scale
    else:
        out = (2.0 / (1.0 + np.exp(-z)) - 1.0) * cfg.field_scale
    return out, margin


def randomize_bn_stats(net, rng):
    for st in net.stats.values():
        st.mean = rng.uniform(-0.2, 0.2, st.mean.shape).astype(np.float32)
        st.var = rng.uniform(0.5, 1.5, st.var.shape).astype(np.float32)


def randomize_head(net, seed):
    # the head starts at zero; give it weight so signal reaches the output
    rng = np.random.default_rng(seed)
    w = net.params["head.w"]
    w.data = rng.uniform(-0.5, 0.5, w.shape).astype(np.float32)


class TestConfig:
    def test_defaults(self):
        cfg = UNetConfig()
        assert (cfg.in_channels, cfg.base_channels, cfg.depth) == (3, 32, 4)
        assert cfg.dropout_p == 0.0
        assert cfg.field_scale == 16.0
        assert cfg.widths == [32, 64, 128, 256]

    def test_validation(self):
        with pytest.raises(ValueError):
            UNetConfig(depth=0)
        with pytest.raises(ValueError):
            UNetConfig(dropout_p=1.0)
        with pytest.raises(ValueError):
            UNetConfig(base_channels=0)
        with pytest.raises(ValueError):
            UNetConfig(field_scale=0.0)
        with pytest.raises(ValueError):
            UNetConfig(head="tanh")


class TestBuild:
    def test_same_seed_bit_identical(self):
        a = UNet(TINY, seed=11)
        b = UNet(TINY, seed=11)
        assert list(a.params) == list(b.params)
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_different_seed_differs(self):
        a = UNet(TINY, seed=1)
        b = UNet(TINY, seed=2)
        assert any(not np.array_equal(a.params[k].data, b.params[k].data)
                   for k in a.params)

    def test_default_parameter_count(self):
        net = UNet(UNetConfig(), seed=0)
        assert net.num_parameters() == 5286946

    def test_param_names_and_shapes(self):
        net = UNet(TINY, seed=0)
        p = net.params
        assert p["enc0.conv1.w"].shape == (3, 2, 3, 3)
        assert p["enc1.conv1.w"].shape == (6, 3, 3, 3)
        assert p["dec0.conv1.w"].shape == (6, 12, 3, 3)
        assert p["dec1.conv1.w"].shape == (3, 9, 3, 3)
        assert p["head.w"].shape == (2, 3, 1, 1)
        assert p["enc0.bn.gamma"].shape == (3,)
        for k, t in p.items():
            assert t.requires_grad, k

    def test_bias_zero_gamma_one(self):
        net = UNet(TINY, seed=3)
        assert np.array_equal(net.params["enc0.conv1.b"].data, np.zeros(3, np.float32))
        assert np.array_equal(net.params["dec0.bn.gamma"].data, np.ones(6, np.float32))


class TestForward:
    def test_output_shape_3d(self):
        net = UNet(TINY, seed=0)
        x = Tensor(np.random.default_rng(0).uniform(0, 1, (2, 16, 16)).astype(np.float32))
        out = net.forward(x, mode="eval")
        assert out.shape == (2, 16, 16)
        assert np.isfinite(out.data).all()

    def test_output_shape_batched(self):
        net = UNet(TINY, seed=0)
        x = Tensor(np.random.default_rng(1).uniform(0, 1, (3, 2, 8, 8)).astype(np.float32))
        out = net.forward(x, mode="eval")
        assert out.shape == (3, 2, 8, 8)

    def test_eval_deterministic(self):
        net = UNet(TINY, seed=0)
        x = Tensor(np.random.default_rng(2).uniform(0, 1, (2, 16, 16)).astype(np.float32))
        a = net.forward(x, mode="eval").data
        b = net.forward(x, mode="eval").data
        assert np.array_equal(a, b)

    def test_train_reproducible_with_seeded_dropout(self):
        x = Tensor(np.random.default_rng(3).uniform(0, 1, (2, 2, 16, 16)).astype(np.float32))
        outs = []
        for _ in range(2):
            net = UNet(TINY, seed=5)
            randomize_head(net, 50)
            outs.append(net.forward(x, mode="train",
                                    rng=np.random.default_rng(42)).data)
        assert np.array_equal(outs[0], outs[1])

    def test_train_dropout_seeds_differ(self):
        x = Tensor(np.random.default_rng(4).uniform(0, 1, (2, 2, 16, 16)).astype(np.float32))
        net = UNet(TINY, seed=5)
        randomize_head(net, 51)
        a = net.forward(x, mode="train", rng=np.random.default_rng(1)).data
        net2 = UNet(TINY, seed=5)
        randomize_head(net2, 51)
        b = net2.forward(x, mode="train", rng=np.random.default_rng(2)).data
        assert not np.array_equal(a, b)

    def test_train_mode_requires_rng(self):
        net = UNet(TINY, seed=0)
        x = Tensor(np.zeros((2, 16, 16), np.float32))
        with pytest.raises(ValueError, match="rng"):
            net.forward(x, mode="train")

    def test_wrong_channel_count_rejected(self):
        net = UNet(TINY, seed=0)
        x = Tensor(np.zeros((3, 16, 16), np.float32))
        with pytest.raises(ValueError, match="channels"):
            net.forward(x)

    def test_indivisible_size_rejected(self):
        net = UNet(TINY, seed=0)
        x = Tensor(np.zeros((2, 18, 18), np.float32))
        with pytest.raises(ValueError, match="divisible"):
            net.forward(x)

    def test_train_updates_running_stats(self):
        net = UNet(TINY, seed=0)
        before = net.stats["enc0.bn"].mean.copy()
        x = Tensor(np.random.default_rng(5).uniform(0, 1, (2, 2, 16, 16)).astype(np.float32))
        net.forward(x, mode="train", rng=np.random.default_rng(0))
        assert not np.array_equal(net.stats["enc0.bn"].mean, before)

    def test_eval_does_not_touch_running_stats(self):
        net = UNet(TINY, seed=0)
        snap = {k: (st.mean.copy(), st.var.copy()) for k, st in net.stats.items()}
        x = Tensor(np.random.default_rng(6).uniform(0, 1, (2, 16, 16)).astype(np.float32))
        net.forward(x, mode="eval")
        for k, st in net.stats.items():
            assert np.array_equal(st.mean, snap[k][0])
            assert np.array_equal(st.var, snap[k][1])

    def test_initial_field_is_zero(self):
        net = UNet(TINY, seed=9)
        x = Tensor(np.random.default_rng(12).uniform(0, 1, (2, 16, 16)).astype(np.float32))
        assert np.array_equal(net.forward(x, mode="eval").data,
                              np.zeros((2, 16, 16), np.float32))

    def test_field_scale_scales_linear_head(self):
        x = Tensor(np.random.default_rng(7).uniform(0, 1, (2, 16, 16)).astype(np.float32))
        cfg1 = UNetConfig(in_channels=2, base_channels=3, depth=2, field_scale=1.0)
        net1 = UNet(cfg1, seed=9)
        randomize_head(net1, 52)
        a = net1.forward(x, mode="eval").data
        cfg2 = UNetConfig(in_channels=2, base_channels=3, depth=2, field_scale=2.0)
        net2 = UNet(cfg2, seed=9)
        randomize_head(net2, 52)
        b = net2.forward(x, mode="eval").data
        assert np.array_equal(b, a * np.float32(2.0))

    def test_sigmoid_head_bounded(self):
        cfg = UNetConfig(in_channels=2, base_channels=3, depth=2,
                         head="sigmoid", field_scale=3.0)
        net = UNet(cfg, seed=1)
        randomize_head(net, 53)
        x = Tensor(np.random.default_rng(8).uniform(0, 1, (2, 16, 16)).astype(np.float32))
        out = net.forward(x, mode="eval").data
        assert np.abs(out).max() < 3.0
        assert np.abs(out).max() > 0.0

    def test_matches_float64_reference(self):
        rng = np.random.default_rng(9)
        net = UNet(TINY, seed=2)
        randomize_head(net, 54)
        randomize_bn_stats(net, rng)
        x = rng.uniform(0, 1, (1, 2, 8, 8)).astype(np.float32)
        got = net.forward(Tensor(x), mode="eval").data
        want, _ = ref_forward(net, x.astype(np.float64))
        assert max_rel_err(got[None] if got.ndim == 3 else got, want) < 5e-4


class TestGradientFlow:
    def test_every_parameter_reachable(self):
        net = UNet(TINY, seed=0)
        randomize_head(net, 55)
        rng = np.random.default_rng(10)
        randomize_bn_stats(net, rng)
        x = Tensor(rng.uniform(0, 1, (2, 2, 16, 16)).astype(np.float32))
        out = net.forward(x, mode="train", rng=np.random.default_rng(3))
        mix = Tensor(rng.uniform(0.5, 1.5, out.shape).astype(np.float32))
        (out * mix).sum().backward()
        for k, t in net.params.items():
            assert t.grad is not None, k
            assert np.abs(t.grad).max() > 0, k

    def test_first_layer_gradient_nonzero_eval(self):
        net = UNet(TINY, seed=1)
        randomize_head(net, 56)
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(0, 1, (2, 16, 16)).astype(np.float32))
        net.forward(x, mode="eval").sum().backward()
        assert np.abs(net.params["enc0.conv1.w"].grad).max() > 0

    def test_analytic_gradients_match_finite_differences(self):
        check = ["enc0.conv1.w", "enc1.conv2.b", "dec0.bn.gamma",
                 "dec1.conv3.w", "head.w", "head.b"]
        done = 0
        for seed in range(60):
            rng = np.random.default_rng(7000 + seed)
            net = UNet(TINY, seed=seed)
            randomize_head(net, 7500 + seed)
            randomize_bn_stats(net, rng)
            x64 = rng.uniform(0, 1, (1, 2, 8, 8)).astype(np.float32).astype(np.float64)
            base, margin = ref_forward(net, x64)
            if margin < 3e-3:
                continue
            mix = rng.uniform(0.5, 1.5, base.shape)
            out = net.forward(Tensor(x64.astype(np.float32)), mode="eval")
            (out * Tensor(mix.astype(np.float32))).sum().backward()
            for name in check:
                p = net.params[name]
                idx = subset_indices(np.random.default_rng(100 + seed),
                                     p.data.size, 6)

                def ref_loss(arr, name=name):
                    saved = net.params[name].data
                    net.params[name].data = arr
                    try:
                        val, _ = ref_forward(net, x64)
                    finally:
                        net.params[name].data = saved
                    return float((val * mix).sum())

                num = numerical_grad_subset(ref_loss, p.data.astype(np.float64), idx)
                ana = p.grad.reshape(-1)[idx]
                err = max_rel_err(ana, num.reshape(-1)[idx])
                assert err < 2e-3, f"seed {seed} param {name}: rel err {err:.2e}"
            done += 1
            if done == 3:
                break
        assert done == 3, "not enough kink-free samples"


class TestState:
    def test_checkpoint_roundtrip_bit_identical_forward(self, tmp_path):
        rng = np.random.default_rng(12)
        net = UNet(TINY, seed=4)
        x = Tensor(rng.uniform(0, 1, (2, 2, 16, 16)).astype(np.float32))
        net.forward(x, mode="train", rng=np.random.default_rng(0))
        path = tmp_path / "net.acdr"
        save_arrays(path, net.state_arrays())

        other = UNet(TINY, seed=99)
        other.load_state(load_arrays(path))
        a = net.forward(x, mode="eval").data
        b = other.forward(x, mode="eval").data
        assert np.array_equal(a, b)

    def test_state_includes_bn_buffers(self):
        net = UNet(TINY, seed=0)
        state = net.state_arrays()
        assert "enc0.bn.running_mean" in state
        assert "dec1.bn.running_var" in state
        assert len(state) == len(net.params) + 2 * len(net.stats)

    def test_load_state_validates(self):
        net = UNet(TINY, seed=0)
        state = net.state_arrays()
        bad = {k: v for k, v in state.items() if k != "head.b"}
        with pytest.raises(ValueError, match="head.b"):
            net.load_state(bad)
        bad = dict(state)
        bad["head.w"] = np.zeros((3, 3, 1, 1), np.float32)
        with pytest.raises(ValueError, match="shape"):
            net.load_state(bad)
        bad = dict(state)
        bad["bogus"] = np.zeros(1, np.float32)
        with pytest.raises(ValueError, match="bogus"):
            net.load_state(bad)
