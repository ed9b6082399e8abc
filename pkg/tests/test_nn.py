"""Network construction, shape inference, architecture fidelity,
checkpoint round trips."""

import numpy as np
import pytest

from diat import nn
from diat.nn import (LayerSpec, Network, NetworkSpec, build_discriminator,
                     build_identity_embedder, build_local_enhancer,
                     build_transform_net, infer_shapes, init_params,
                     load_checkpoint, save_checkpoint, scaled_channels,
                     scaled_size)
from diat.tensor import ShapeError, Tensor


# expected activation sizes, full scale, transform net: one entry per
# parameterized/structural layer (activations and norms are shape-neutral)
TRANSFORM_ROWS = [
    ("conv", (32, 128, 128)),
    ("conv", (64, 64, 64)),
    ("conv", (128, 32, 32)),
    ("residual_block", (128, 32, 32)),
    ("residual_block", (128, 32, 32)),
    ("residual_block", (128, 32, 32)),
    ("residual_block", (128, 32, 32)),
    ("residual_block", (128, 32, 32)),
    ("deconv", (64, 64, 64)),
    ("deconv", (32, 127, 127)),
    ("deconv", (3, 128, 128)),
]

DISCRIMINATOR_ROWS = [
    ("conv", (32, 64, 64)),
    ("conv", (32, 64, 64)),
    ("conv", (64, 32, 32)),
    ("conv", (64, 32, 32)),
    ("conv", (128, 16, 16)),
    ("conv", (128, 8, 8)),
    ("dense", (1000,)),
    ("dense", (1,)),
]


def structural_shapes(net):
    rows = []
    for spec, shape in zip(net.spec.layers, net.shapes):
        if spec.kind in ("conv", "deconv", "residual_block", "dense"):
            rows.append((spec.kind, shape))
    return rows


class TestArchitectureFidelity:
    def test_transform_net_full_scale_rows(self):
        net = build_transform_net(scale_factor=1.0)
        assert net.spec.input_shape == (3, 128, 128)
        assert structural_shapes(net) == TRANSFORM_ROWS

    def test_transform_net_includes_127_row(self):
        net = build_transform_net(scale_factor=1.0)
        assert (32, 127, 127) in net.shapes

    def test_discriminator_full_scale_rows(self):
        net = build_discriminator(scale_factor=1.0)
        assert net.spec.input_shape == (3, 128, 128)
        assert structural_shapes(net) == DISCRIMINATOR_ROWS

    def test_transform_forward_matches_inference(self):
        net = init_params(build_transform_net(scale_factor=0.25), 0)
        x = Tensor(np.random.default_rng(0).random((2, 3, 32, 32),
                                                   dtype=np.float32))
        y = net(x)
        assert y.shape == (2, 3, 32, 32)

    def test_discriminator_taps_conv4_conv5(self):
        net = init_params(build_discriminator(scale_factor=0.25), 0)
        x = Tensor(np.zeros((2, 3, 32, 32), dtype=np.float32))
        taps = {}
        y = net(x, taps)
        assert y.shape == (2, 1)
        assert set(taps) == {"conv4", "conv5"}
        # conv4 pre-downsample, conv5 after the stride-2 conv
        assert taps["conv4"].shape[-1] == 2 * taps["conv5"].shape[-1]

    def test_embedder_has_five_taps(self):
        net = init_params(build_identity_embedder(0.25, 64), 0)
        taps = {}
        out = net(Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)), taps)
        assert out.shape == (1, 64)
        assert set(taps) == {f"conv{i}" for i in range(1, 6)}

    def test_transform_and_reconstruction_share_geometry(self):
        a = build_transform_net(0.25)
        b = nn.build_reconstruction_net(0.25)
        assert a.param_count() == b.param_count()
        assert a.shapes == b.shapes

    def test_scaled_channels(self):
        assert scaled_channels(32, 1.0) == 32
        assert scaled_channels(32, 0.25) == 8
        assert scaled_channels(64, 0.25) == 16
        assert scaled_channels(128, 0.25) == 32
        assert scaled_channels(1000, 0.25) == 252
        assert scaled_channels(3, 0.25) == 8  # floor

    def test_scaled_size(self):
        assert scaled_size(1.0) == 128
        assert scaled_size(0.25) == 32
        with pytest.raises(ValueError):
            scaled_size(0.01)


class TestShapeInference:
    def test_geometry_errors_surface_at_build_time(self):
        layers = (LayerSpec("conv", channels=4, kernel=9, pad=0, stride=4),
                  LayerSpec("conv", channels=4, kernel=9, pad=0, stride=4),)
        with pytest.raises(ShapeError):
            Network(NetworkSpec("bad", (3, 12, 12), layers))

    def test_residual_channel_mismatch_rejected(self):
        layers = (LayerSpec("conv", channels=4, kernel=3, pad=1, stride=1),
                  LayerSpec("residual_block", channels=8),)
        with pytest.raises(ShapeError):
            infer_shapes(layers, (3, 8, 8))

    def test_add_input_requires_matching_geometry(self):
        # more channels than the input provides
        layers = (LayerSpec("conv", channels=4, kernel=3, pad=1, stride=1),
                  LayerSpec("add_input", channels=4, offset=0),)
        with pytest.raises(ShapeError):
            infer_shapes(layers, (3, 8, 8))
        # spatial extent changed by a strided conv
        layers = (LayerSpec("conv", channels=3, kernel=3, pad=1, stride=2),
                  LayerSpec("add_input", channels=3, offset=0),)
        with pytest.raises(ShapeError):
            infer_shapes(layers, (3, 8, 8))

    def test_dense_requires_flatten(self):
        layers = (LayerSpec("dense", units=4),)
        with pytest.raises(ShapeError):
            infer_shapes(layers, (3, 8, 8))

    def test_invalid_layer_kind(self):
        with pytest.raises(ValueError):
            LayerSpec("pool")

    def test_deconv_shape_formula(self):
        layers = (LayerSpec("deconv", channels=2, kernel=3, pad=1, stride=2,
                            out_pad=1),)
        assert infer_shapes(layers, (4, 16, 16)) == [(2, 32, 32)]


class TestInitialization:
    def test_residual_blocks_start_as_identity(self):
        net = init_params(build_transform_net(0.25, use_norm=False), 3)
        x = np.random.default_rng(1).random((1, 3, 32, 32), dtype=np.float32)
        # second conv of each residual block is zero-initialized, so the
        # block output equals its input
        for name, p in net.params.items():
            if ".conv2.weight" in name:
                assert not p.data.any()

    def test_local_enhancer_starts_as_identity_on_transformed_image(self):
        net = init_params(build_local_enhancer(8), 4)
        x = np.random.default_rng(2).random((2, 6, 32, 32), dtype=np.float32)
        out = net(Tensor(x)).data
        assert np.array_equal(out, x[:, 3:6])

    def test_global_enhancer_starts_as_identity(self):
        net = init_params(nn.build_global_enhancer(0.25), 4)
        x = np.random.default_rng(3).random((2, 3, 32, 32), dtype=np.float32)
        assert np.array_equal(net(Tensor(x)).data, x)

    def test_biases_start_at_zero(self):
        net = init_params(build_discriminator(0.25), 5)
        for name, p in net.params.items():
            if name.endswith("bias"):
                assert not p.data.any()

    def test_init_deterministic(self):
        a = init_params(build_transform_net(0.25), 7)
        b = init_params(build_transform_net(0.25), 7)
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_freeze(self):
        net = init_params(build_local_enhancer(8), 0)
        assert not net.frozen
        net.freeze()
        assert net.frozen


class TestCheckpoints:
    def _net(self, seed=0):
        return init_params(build_identity_embedder(0.25, 8), seed)

    def test_round_trip_restores_parameters(self, tmp_path):
        src = self._net(1)
        path = tmp_path / "a.ckpt"
        save_checkpoint(str(path), src, step=42, rng_state='{"x": 1}')
        dst = self._net(2)
        opt_state, step, rng_state = load_checkpoint(str(path), dst)
        assert step == 42 and rng_state == '{"x": 1}' and opt_state is None
        for k in src.params:
            assert np.array_equal(src.params[k].data, dst.params[k].data)

    def test_save_load_save_byte_identical(self, tmp_path):
        net = self._net(3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        blob1 = save_checkpoint(str(p1), net, step=7, rng_state="{}")
        load_checkpoint(str(p1), net)
        blob2 = save_checkpoint(str(p2), net, step=7, rng_state="{}")
        assert blob1 == blob2
        assert p1.read_bytes() == p2.read_bytes()

    def test_spec_hash_mismatch_rejected(self, tmp_path):
        path = tmp_path / "a.ckpt"
        save_checkpoint(str(path), self._net(1))
        other = init_params(build_identity_embedder(0.25, 16), 1)
        with pytest.raises(ValueError, match="spec hash"):
            load_checkpoint(str(path), other)

    def test_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\0" * 64)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(str(path), self._net())

    def test_optimizer_state_round_trip(self, tmp_path):
        from diat.optim import Adam
        net = self._net(4)
        opt = Adam(net.params, lr=1e-3)
        for p in net.parameters():
            p.grad = np.ones_like(p.data)
        opt.step()
        path = tmp_path / "a.ckpt"
        save_checkpoint(str(path), net, opt_state=opt.state_dict(), step=1)
        net2 = self._net(5)
        opt2 = Adam(net2.params, lr=1e-3)
        state, _, _ = load_checkpoint(str(path), net2)
        opt2.load_state_dict(state)
        s1, s2 = opt.state_dict(), opt2.state_dict()
        assert s1["t"] == s2["t"]
        for k in s1["m"]:
            assert np.allclose(s1["m"][k], s2["m"][k])
            assert np.allclose(s1["v"][k], s2["v"][k])
