import numpy as np
import pytest

from ffalab.model import (
    ModelConfig,
    ParamStore,
    basic_block,
    channel_attention,
    export_attention_maps,
    feature_attention,
    ffa_forward,
    group_forward,
    init_params,
    layer_specs,
    param_count,
    pixel_attention,
    read_weight_table,
    zero_params,
)
from ffalab.ppm import read_pgm
from ffalab.tensor import GradTape, ShapeError, Tensor, backward
from ffalab.trainer import l1_loss


def zero_attention(prefix, c, hidden, pa_k=3):
    z = {}
    for name, cin, cout, k in [(f"{prefix}.ca.conv1", c, hidden, 1), (f"{prefix}.ca.conv2", hidden, c, 1),
                               (f"{prefix}.pa.conv1", c, hidden, pa_k), (f"{prefix}.pa.conv2", hidden, 1, pa_k)]:
        z[f"{name}.weight"] = Tensor(np.zeros((cout, cin, k, k)))
        z[f"{name}.bias"] = Tensor(np.zeros(cout))
    return z


def randomize(store: ParamStore, rng, scale=0.3) -> ParamStore:
    return ParamStore.from_arrays({k: rng.uniform(-scale, scale, v.shape) for k, v in store.arrays().items()})


class TestConfig:
    def test_full_size_defaults(self):
        c = ModelConfig()
        assert (c.groups, c.blocks_per_group, c.channels) == (3, 19, 64)

    @pytest.mark.parametrize("kw", [dict(groups=0), dict(blocks_per_group=0), dict(channels=6, reduction_ratio=4),
                                    dict(channels=4, reduction_ratio=8), dict(ca_kernel=3), dict(pa_kernel=2)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ModelConfig(**kw)


class TestParams:
    def test_deterministic(self, tiny_config):
        a, b = init_params(tiny_config, 5), init_params(tiny_config, 5)
        assert list(a) == list(b)
        for k in a:
            assert a[k].data.tobytes() == b[k].data.tobytes()

    def test_different_seeds_differ(self, tiny_config):
        a, b = init_params(tiny_config, 5), init_params(tiny_config, 6)
        assert not np.array_equal(a["shallow.weight"].data, b["shallow.weight"].data)

    def test_bounds_and_zero_bias(self, tiny_config):
        p = init_params(tiny_config, 0)
        for name, cin, _, k in layer_specs(tiny_config):
            bound = np.sqrt(1.0 / (k * k * cin))
            assert np.abs(p[f"{name}.weight"].data).max() <= bound
            assert not p[f"{name}.bias"].data.any()

    def test_names_for_small_config(self):
        cfg = ModelConfig(groups=1, blocks_per_group=1, channels=8, reduction_ratio=2)
        p = init_params(cfg, 0)
        expected = []
        for layer in ["shallow", "group0.block0.conv1", "group0.block0.conv2",
                      "group0.block0.ca.conv1", "group0.block0.ca.conv2",
                      "group0.block0.pa.conv1", "group0.block0.pa.conv2", "group0.tail",
                      "fusion.ca.conv1", "fusion.ca.conv2", "fusion.pa.conv1", "fusion.pa.conv2",
                      "fusion.conv", "recon.conv1", "recon.conv2"]:
            expected += [f"{layer}.weight", f"{layer}.bias"]
        assert list(p) == expected
        assert p["group0.block0.ca.conv1.weight"].shape == (4, 8, 1, 1)
        assert p["group0.block0.pa.conv2.weight"].shape == (1, 4, 3, 3)
        assert p.numel() == param_count(cfg)

    def test_single_conv_contribution(self):
        assert 3 * 3 * 3 * 8 + 8 == 224
        base = ModelConfig(groups=1, blocks_per_group=1, channels=8, reduction_ratio=2)
        # shallow conv is 3->C with 3x3 kernels
        assert init_params(base, 0)["shallow.weight"].data.size + 8 == 224

    def test_monotone(self):
        small = param_count(ModelConfig(groups=1, blocks_per_group=1))
        assert small < param_count(ModelConfig(groups=1, blocks_per_group=2)) < param_count(ModelConfig())

    @pytest.mark.parametrize("cfg", [
        ModelConfig(groups=1, blocks_per_group=1, channels=8, reduction_ratio=2),
        ModelConfig(groups=2, blocks_per_group=3, channels=16, reduction_ratio=4, pa_kernel=1),
        ModelConfig(groups=3, blocks_per_group=2, channels=8, reduction_ratio=8, use_fa=False),
        ModelConfig(groups=2, blocks_per_group=1, channels=8, reduction_ratio=2, use_ffa=False),
        ModelConfig(groups=2, blocks_per_group=1, channels=8, reduction_ratio=2, fusion_reduction=4),
        ModelConfig(),
    ])
    def test_closed_form_matches_enumeration(self, cfg):
        p = init_params(cfg, 0)
        assert sum(t.data.size for t in p.values()) == param_count(cfg)


class TestAttention:
    def test_zero_params_channel_attention(self, rng):
        F = Tensor(rng.standard_normal((2, 8, 5, 5)))
        w, out = channel_attention(F, zero_attention("x", 8, 2), "x.ca")
        assert w.shape == (2, 8, 1, 1)
        np.testing.assert_array_equal(w.data, 0.5)
        np.testing.assert_array_equal(out.data, 0.5 * F.data)

    def test_zero_input_gives_zero(self, rng):
        p = {k: Tensor(rng.standard_normal(v.shape)) if k.endswith("weight") else v
             for k, v in zero_attention("x", 8, 2).items()}
        _, out = channel_attention(Tensor(np.zeros((1, 8, 4, 4))), p, "x.ca")
        assert not out.data.any()

    def test_weights_in_open_unit_interval(self, rng):
        p = {k: Tensor(rng.standard_normal(v.shape) * 3) for k, v in zero_attention("x", 8, 2).items()}
        w, _ = channel_attention(Tensor(rng.standard_normal((3, 8, 4, 4))), p, "x.ca")
        assert w.shape == (3, 8, 1, 1)
        assert (w.data > 0).all() and (w.data < 1).all()

    def test_zero_params_pixel_attention(self, rng):
        Fs = Tensor(rng.standard_normal((1, 8, 6, 5)))
        m, out = pixel_attention(Fs, zero_attention("x", 8, 2), "x.pa")
        assert m.shape == (1, 1, 6, 5)
        np.testing.assert_array_equal(m.data, 0.5)
        np.testing.assert_array_equal(out.data, 0.5 * Fs.data)

    @pytest.mark.parametrize("c", [4, 8, 16])
    def test_pixel_map_single_channel(self, rng, c):
        p = {k: Tensor(rng.standard_normal(v.shape)) for k, v in zero_attention("x", c, 2).items()}
        m, out = pixel_attention(Tensor(rng.standard_normal((2, c, 5, 7))), p, "x.pa")
        assert m.shape == (2, 1, 5, 7)

    def test_ratio_constant_across_channels(self, rng):
        p = {k: Tensor(rng.standard_normal(v.shape)) for k, v in zero_attention("x", 8, 2).items()}
        Fs = Tensor(rng.standard_normal((1, 8, 5, 5)))
        _, out = pixel_attention(Fs, p, "x.pa")
        ratio = out.data / Fs.data
        np.testing.assert_allclose(ratio, np.broadcast_to(ratio[:, :1], ratio.shape), rtol=1e-6)

    def test_feature_attention_zero_params(self, rng):
        F = Tensor(rng.standard_normal((1, 8, 4, 4)))
        out, ca, pa = feature_attention(F, zero_attention("x", 8, 2), "x")
        np.testing.assert_array_equal(out.data, 0.25 * F.data)
        assert ca.shape == (1, 8, 1, 1) and pa.shape == (1, 1, 4, 4)

    def test_feature_attention_disabled(self, rng):
        F = Tensor(rng.standard_normal((1, 8, 4, 4)))
        out, ca, pa = feature_attention(F, {}, "x", enabled=False)
        assert out is F and ca is None and pa is None

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            channel_attention(Tensor(np.zeros((1, 4, 3, 3))), zero_attention("x", 8, 2), "x.ca")


class TestBlocks:
    def test_zero_block_is_identity(self, rng, tiny_config):
        p = zero_params(tiny_config)
        x = Tensor(rng.standard_normal((1, 16, 6, 6)))
        np.testing.assert_array_equal(basic_block(x, p, tiny_config, "group0.block0").data, x.data)

    def test_zero_block_without_lrl_is_zero(self, rng, tiny_config):
        cfg = tiny_config.with_switches(fa=True, lrl=False, ffa=True)
        x = Tensor(rng.standard_normal((1, 16, 6, 6)))
        assert not basic_block(x, zero_params(cfg), cfg, "group0.block0").data.any()

    @pytest.mark.parametrize("fa,lrl", [(True, True), (False, True), (True, False), (False, False)])
    def test_block_shape(self, rng, tiny_config, fa, lrl):
        cfg = tiny_config.with_switches(fa=fa, lrl=lrl, ffa=True)
        p = init_params(cfg, 0)
        x = Tensor(rng.standard_normal((2, 16, 7, 5)))
        assert basic_block(x, p, cfg, "group0.block1").shape == x.shape

    def test_block_topology(self, rng):
        # hand-composed reference of conv-relu-(+x)-conv-FA-(+x) with FA disabled
        from ffalab.tensor import add, conv2d, relu
        cfg = ModelConfig(groups=1, blocks_per_group=1, channels=4, reduction_ratio=2, use_fa=False)
        p = randomize(init_params(cfg, 0), rng)
        x = Tensor(rng.standard_normal((1, 4, 5, 5)))
        pre = "group0.block0"
        y = add(relu(conv2d(x, p[f"{pre}.conv1.weight"], p[f"{pre}.conv1.bias"])), x)
        y = add(conv2d(y, p[f"{pre}.conv2.weight"], p[f"{pre}.conv2.bias"]), x)
        np.testing.assert_array_equal(basic_block(x, p, cfg, pre).data, y.data)

    def test_zero_group_is_identity(self, rng, tiny_config):
        x = Tensor(rng.standard_normal((1, 16, 6, 6)))
        np.testing.assert_array_equal(group_forward(x, zero_params(tiny_config), tiny_config).data, x.data)

    def test_group_skip_is_wired(self, rng, tiny_config):
        p = randomize(init_params(tiny_config, 0), rng)
        x = Tensor(rng.standard_normal((1, 16, 6, 6)))
        with_skip = group_forward(x, p, tiny_config).data
        # tail output alone, i.e. the group without its skip
        y = x
        for b in range(tiny_config.blocks_per_group):
            y = basic_block(y, p, tiny_config, f"group0.block{b}")
        from ffalab.tensor import conv2d
        without = conv2d(y, p["group0.tail.weight"], p["group0.tail.bias"]).data
        np.testing.assert_allclose(with_skip - without, x.data, rtol=1e-5, atol=1e-5)
        assert not np.allclose(with_skip, without)


class TestForward:
    def test_zero_params_identity_bitwise(self, rng):
        cfg = ModelConfig(groups=3, blocks_per_group=2, channels=8, reduction_ratio=4)
        hazy = Tensor(rng.uniform(0, 1, (2, 3, 9, 11)))
        out, maps = ffa_forward(hazy, zero_params(cfg), cfg)
        assert out.data.tobytes() == hazy.data.tobytes()
        assert len(maps.group_pa) == 3

    @pytest.mark.parametrize("hw", [(8, 8), (9, 13), (16, 8)])
    def test_shape_preserved(self, rng, hw):
        cfg = ModelConfig(groups=2, blocks_per_group=1, channels=8, reduction_ratio=4)
        hazy = Tensor(rng.uniform(0, 1, (1, 3) + hw))
        out, maps = ffa_forward(hazy, init_params(cfg, 1), cfg)
        assert out.shape == hazy.shape
        assert [m.shape for m in maps.group_pa] == [(1, 1) + hw] * 2
        assert [m.shape for m in maps.group_ca] == [(1, 8, 1, 1)] * 2
        assert maps.fusion_ca.shape == (1, 16, 1, 1)
        for v in maps.all_values():
            assert ((v > 0) & (v < 1)).all()

    def test_rejects_non_rgb(self, tiny_config):
        with pytest.raises(ShapeError):
            ffa_forward(Tensor(np.zeros((1, 1, 8, 8))), init_params(tiny_config, 0), tiny_config)

    def test_rejects_too_small(self, tiny_config):
        with pytest.raises(ShapeError):
            ffa_forward(Tensor(np.zeros((1, 3, 2, 2))), init_params(tiny_config, 0), tiny_config)

    def test_no_ffa_has_no_fusion_maps(self, rng, tiny_config):
        cfg = tiny_config.with_switches(fa=True, lrl=True, ffa=False)
        _, maps = ffa_forward(Tensor(rng.uniform(0, 1, (1, 3, 8, 8))), init_params(cfg, 0), cfg)
        assert maps.fusion_ca is None and len(maps.group_ca) == 1

    def test_gradient_reaches_every_parameter(self, rng):
        # zero-mean inputs: with [0, 1] images the pooled channel-attention
        # features share a sign across the batch and whole bottleneck units
        # sit dead at init, which is ReLU behaviour rather than a wiring fault
        cfg = ModelConfig(groups=3, blocks_per_group=2, channels=64, reduction_ratio=8)
        p = init_params(cfg, 3)
        with GradTape() as tape:
            tape.watch(p.tensors)
            out, _ = ffa_forward(Tensor(rng.standard_normal((8, 3, 16, 16))), p, cfg)
            loss = l1_loss(out, Tensor(rng.uniform(0, 1, (8, 3, 16, 16))))
        grads = backward(loss, tape)
        assert set(grads) == set(p)
        w = np.concatenate([g.ravel() for k, g in grads.items() if k.endswith(".weight")])
        assert np.count_nonzero(w) / w.size >= 0.99
        main = np.concatenate([g.ravel() for k, g in grads.items() if k.endswith(".weight") and ".ca." not in k])
        assert np.count_nonzero(main) == main.size


class TestExport:
    def test_files_and_roundtrip(self, rng, tmp_path):
        cfg = ModelConfig(groups=3, blocks_per_group=1, channels=8, reduction_ratio=4)
        _, maps = ffa_forward(Tensor(rng.uniform(0, 1, (1, 3, 12, 10))), init_params(cfg, 2), cfg)
        files = export_attention_maps(maps, tmp_path / "attn")
        assert len(files) == 3 + 1 + 1
        assert sorted(p.name for p in (tmp_path / "attn").iterdir()) == sorted(p.name for p in files)
        table = read_weight_table(tmp_path / "attn" / "ca_weights.txt")
        expected = np.stack([ca[0, :, 0, 0] for ca in maps.group_ca])
        np.testing.assert_allclose(table, expected, atol=5e-5)
        assert read_pgm(tmp_path / "attn" / "ca_strip.pgm").shape == (3, 8)
        assert read_pgm(tmp_path / "attn" / "pa_group0.pgm").shape == (12, 10)

    def test_constant_half_is_mid_gray(self, tmp_path):
        from ffalab.model import AttentionMaps
        maps = AttentionMaps([np.full((1, 4, 1, 1), 0.5)], [np.full((1, 1, 3, 3), 0.5)])
        export_attention_maps(maps, tmp_path)
        raw = (tmp_path / "pa_group0.pgm").read_bytes()
        assert set(raw[-9:]) == {128}

    def test_empty_maps_rejected(self, tmp_path):
        from ffalab.model import AttentionMaps
        with pytest.raises(ValueError):
            export_attention_maps(AttentionMaps(), tmp_path)
