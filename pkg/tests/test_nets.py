import math

import pytest
import torch

from dsalgan import nets as N
from gradcases import layer_case, toy_specs
from oracles import gradient_check
from tables import DISCRIMINATOR_ROWS, SALIENCY_GENERATOR_ROWS, roster


def test_saliency_generator_full_width_roster():
    spec = N.build_saliency_generator_spec(1.0)
    assert roster(spec) == SALIENCY_GENERATOR_ROWS
    ladder = [l.out_channels for l in spec.layers if l.kind == "conv" and l.name.endswith("_a")]
    assert ladder == [64, 128, 256, 512, 512, 512, 512, 256, 128, 64]
    assert sum(l.kind == "pool" for l in spec.layers) == 4
    assert sum(l.kind == "upsample" for l in spec.layers) == 4


def test_saliency_generator_scaled_ladder():
    spec = N.build_saliency_generator_spec(1 / 16)
    ladder = [l.out_channels for l in spec.layers if l.kind == "conv" and l.name.endswith("_a")]
    assert ladder == [4, 8, 16, 32, 32, 32, 32, 16, 8, 4]
    assert N.scale_channels(64, 1 / 32) == 4


@pytest.mark.parametrize("bad", [0.0, -0.5, 1.5])
def test_saliency_generator_rejects_bad_scale(bad):
    with pytest.raises(ValueError):
        N.build_saliency_generator_spec(bad)


def test_saliency_generator_forward_shape_and_range():
    spec = N.build_saliency_generator_spec(1 / 16)
    params = N.init_params(spec, 0)
    out = N.forward(spec, params, torch.rand(2, 3, 96, 96))
    assert out.shape == (2, 1, 96, 96)
    assert out.min() > 0 and out.max() < 1


def test_logits_skip_only_the_final_sigmoid():
    spec = N.build_saliency_generator_spec(1 / 16)
    params = N.init_params(spec, 0)
    x = torch.rand(2, 3, 32, 32)
    logits = N.forward(spec, params, x, logits=True)
    torch.testing.assert_close(torch.sigmoid(logits), N.forward(spec, params, x))
    denoiser = N.build_denoiser_spec(2, 4)
    dparams = N.init_params(denoiser, 0)
    # clamp01 is not a sigmoid, so the flag leaves G1 unchanged
    torch.testing.assert_close(N.forward(denoiser, dparams, x, logits=True), N.forward(denoiser, dparams, x))


def test_saliency_generator_constant_output_with_zero_weights():
    spec = N.build_saliency_generator_spec(1 / 16)
    params = N.init_params(spec, 0)
    with torch.no_grad():
        for t in params.parameters():
            t.zero_()
        params.tensors["output.bias"].fill_(0.3)
    out = N.forward(spec, params, torch.zeros(1, 3, 32, 32))
    torch.testing.assert_close(out, torch.full_like(out, 1 / (1 + math.exp(-0.3))))


def test_discriminator_roster_and_fc_size():
    spec = N.build_discriminator_spec(3, 96)
    assert roster(spec) == DISCRIMINATOR_ROWS
    assert spec.param_shapes()["fc4.weight"] == (100, 12 * 12 * 64)
    out = N.forward(spec, N.init_params(spec, 1), torch.rand(3, 3, 96, 96))
    assert out.shape == (3,)
    assert torch.all((out > 0) & (out < 1))


def test_discriminator_fc_size_by_shape_propagation():
    spec = N.build_discriminator_spec(4, 96)
    # walk by hand: 1x1 conv with padding 1 grows 96 -> 98, then three floor-halving pools
    side = 96 + 2
    for _ in range(3):
        side //= 2
    assert side == 12
    assert spec.param_shapes()["fc4.weight"][1] == side * side * 64 == 9216


def test_discriminator_validation():
    with pytest.raises(ValueError):
        N.build_discriminator_spec(2, 96)
    with pytest.raises(ValueError, match="multiple of 8"):
        N.build_discriminator_spec(3, 100)
    spec = N.build_discriminator_spec(3, 64)
    with pytest.raises(N.ShapeError, match="64x64"):
        N.forward(spec, N.init_params(spec), torch.rand(1, 3, 96, 96))


def test_discriminator_output_is_clamped_away_from_bounds():
    spec = N.build_discriminator_spec(3, 16)
    params = N.init_params(spec, 0)
    with torch.no_grad():
        params.tensors["fc6.bias"].fill_(100.0)
    assert N.forward(spec, params, torch.rand(2, 3, 16, 16)).max() <= 1 - N.EPS


def test_denoiser_layer_enumeration():
    spec = N.build_denoiser_spec(5, 32)
    convs = [l for l in spec.layers if l.kind == "conv"]
    assert len(convs) == 10
    assert all(l.stride == 1 for l in convs)
    skips = [(l.name, l.source) for l in spec.layers if l.kind == "skip_add"]
    # every second encoder layer feeds its mirror; the image feeds the output
    assert skips == [("skip1", "enc4"), ("skip3", "enc2"), ("skip5", "input")]
    assert spec.layers[-1].activation == "clamp01"


@pytest.mark.parametrize("size", [64, 96, 50])
def test_denoiser_preserves_shape(size):
    spec = N.build_denoiser_spec(1, 8)
    out = N.forward(spec, N.init_params(spec, 0), torch.rand(1, 3, size, size))
    assert out.shape == (1, 3, size, size)
    assert out.min() >= 0 and out.max() <= 1


def test_reverse_generator_shapes_and_chain():
    g1, g2, g3 = N.build_denoiser_spec(2, 8), N.build_saliency_generator_spec(1 / 16), N.build_reverse_generator_spec(2, 8)
    assert (g3.input_channels, g3.output_channels) == (1, 3)
    x = torch.rand(1, 3, 96, 96)
    y = N.forward(g3, N.init_params(g3, 2), N.forward(g2, N.init_params(g2, 1), N.forward(g1, N.init_params(g1, 0), x)))
    assert y.shape == (1, 3, 96, 96)
    assert y.min() >= 0 and y.max() <= 1


def test_reverse_generator_param_count_differs_only_at_ends():
    depth, ch = 5, 16
    g1 = N.build_denoiser_spec(depth, ch)
    g3 = N.build_reverse_generator_spec(depth, ch)
    # only the first conv's input channels differ (3 vs 1): 9 weights per output channel per input channel
    assert g1.n_params() - g3.n_params() == (3 - 1) * 3 * 3 * ch
    s1, s3 = g1.param_shapes(), g3.param_shapes()
    assert [k for k in s1 if s1[k] != s3[k]] == ["enc1.weight"]


def test_forward_names_the_bad_layer():
    spec = N.build_saliency_generator_spec(1 / 16)
    params = N.init_params(spec)
    params.tensors["conv2_a.weight"] = torch.zeros(8, 5, 3, 3)
    with pytest.raises(N.ShapeError, match="conv2_a"):
        N.forward(spec, params, torch.rand(1, 3, 32, 32))
    with pytest.raises(N.ShapeError, match="input channels"):
        N.forward(spec, N.init_params(spec), torch.rand(1, 1, 32, 32))


def test_init_is_deterministic_and_fan_in_scaled():
    spec = N.NetworkSpec("G1", (
        N.LayerSpec("conv", "a", (3, 3), 64, 1, 1, "relu"),
        N.LayerSpec("conv", "b", (3, 3), 64, 1, 1, "relu"),
    ), 64, 64)
    p1, p2 = N.init_params(spec, 5), N.init_params(spec, 5)
    for k in p1.tensors:
        assert torch.equal(p1.tensors[k], p2.tensors[k])
    w = p1.tensors["b.weight"]
    target = math.sqrt(2 / (3 * 3 * 64))
    assert abs(w.std().item() - target) <= 0.2 * target
    assert torch.count_nonzero(p1.tensors["b.bias"]) == 0
    assert not torch.equal(N.init_params(spec, 0).tensors["a.weight"], w)


def test_param_count_is_pure_function_of_spec():
    spec = N.build_saliency_generator_spec(0.25)
    assert spec.n_params() == N.init_params(spec, 3).n_params() == N.init_params(spec, 4).n_params()
    assert spec.n_params() == N.NetworkSpec.from_json(spec.to_json()).n_params()


def test_spec_serialization_round_trip(tmp_path):
    for spec in (N.build_denoiser_spec(3, 8), N.build_discriminator_spec(4, 64, 0.25)):
        spec.save(tmp_path / "s.json")
        again = N.NetworkSpec.load(tmp_path / "s.json")
        assert again == spec
        assert again.spec_hash() == spec.spec_hash()
    assert N.build_denoiser_spec(3, 8).spec_hash() != N.build_denoiser_spec(3, 16).spec_hash()


def test_layer_validation():
    with pytest.raises(ValueError):
        N.LayerSpec("conv", "x", (0, 3), 4)
    with pytest.raises(ValueError):
        N.LayerSpec("pool", "p", (3, 3), 0, 2)
    with pytest.raises(ValueError):
        N.LayerSpec("skip_add", "s")
    with pytest.raises(ValueError, match="earlier layer"):
        N.NetworkSpec("G1", (N.LayerSpec("skip_add", "s", source="later"),), 3, 3)


@pytest.mark.parametrize("kind", sorted(toy_specs()))
def test_forward_gradients_match_finite_differences(kind):
    fn, tensors = layer_case(kind)
    assert gradient_check(fn, tensors) < 1e-4
