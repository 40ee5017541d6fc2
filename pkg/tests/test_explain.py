import io
import json
import os
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from medgrad.errors import ContractError, NumericError
from medgrad.explain import (
    METHODS,
    ExplainConfig,
    SaliencyMap,
    channel_gradient_map,
    colormap,
    explain,
    grad_cam,
    grad_eclip,
    medgrad_eclip,
    overlay,
    render_panel,
    upsample,
)
from medgrad.explain.render import COLORMAP_STOPS, to_uint8
from medgrad.explain.saliency import attention_weights, grad_cam_map, minmax, similarity_gradients
from medgrad.numerics import Rng
from medgrad.synthdata import generate_pair, tokenize
from medgrad.synthdata.templates import LesionSpec

GOLDEN = Path(__file__).parent / "golden"


def check_golden(name: str, data: bytes):
    path = GOLDEN / name
    if os.environ.get("MEDGRAD_UPDATE_GOLDEN") == "1" or not path.exists():
        path.parent.mkdir(exist_ok=True)
        path.write_bytes(data)
    assert path.read_bytes() == data, f"{name} differs from the committed golden file"


@pytest.fixture
def caption_tokens(tiny_data):
    return tokenize(tiny_data.vocab, tiny_data.pairs[0].caption, 32)


# -- config and helpers --------------------------------------------------------------


@pytest.mark.parametrize(
    "kw", [dict(disk_radius=0), dict(bins=1), dict(entropy_normalization="z"), dict(overlay_alpha=1.5)]
)
def test_explain_config_validation(kw):
    with pytest.raises(ContractError):
        ExplainConfig(**kw)


def test_minmax():
    assert minmax(np.array([2.0, 4.0, 3.0])).tolist() == [0.0, 1.0, 0.5]
    assert minmax(np.full(3, 7.0)).tolist() == [0.0, 0.0, 0.0]


def test_aligned_keys_give_uniform_attention_weight():
    q = np.random.default_rng(0).normal(size=(3, 4))
    keys = np.stack([q * s for s in (0.5, 2.0, 7.0)], axis=1)  # heads × P × d
    assert attention_weights(q, keys).tolist() == [1.0, 1.0, 1.0]
    assert attention_weights(q, -keys).tolist() == [0.0, 0.0, 0.0]


def test_grad_cam_two_patch_two_channel():
    tokens = np.array([[1.0, 2.0], [3.0, -1.0]])
    grads = np.array([[0.5, -1.0], [1.5, 0.0]])
    # alpha = (1, -0.5); A @ alpha = (0, 3.5); ReLU then minmax -> (0, 1)
    assert grad_cam_map(tokens, grads, (1, 2)).tolist() == [[0.0, 1.0]]
    assert grad_cam_map(tokens, np.zeros((2, 2)), (1, 2)).tolist() == [[0.0, 0.0]]


# -- model-level saliency -------------------------------------------------------------


def test_channel_gradient_matches_closed_form(tiny_model, tiny_data, caption_tokens):
    img = tiny_data.pairs[0].image
    g = similarity_gradients(tiny_model, img, caption_tokens)
    a = tiny_model.image_features(img).data[0].astype(np.float64)
    b = tiny_model.encode_texts(caption_tokens).data[0].astype(np.float64)
    na = np.linalg.norm(a)
    cos = a @ b / (na * np.linalg.norm(b))
    expected = b / (na * np.linalg.norm(b)) - cos * a / na**2
    assert np.allclose(g.w_c, expected, rtol=1e-4, atol=1e-6)
    assert g.cosine == pytest.approx(cos, abs=1e-5)


def test_saliency_leaves_model_gradients_alone(tiny_model, tiny_data, caption_tokens):
    for method in METHODS:
        explain(tiny_model, tiny_data.pairs[0].image, caption_tokens, method)
    assert all(p.grad is None for p in tiny_model.parameters())


def test_all_methods_share_shape_and_are_nonnegative(tiny_model, tiny_data, caption_tokens):
    for pair in tiny_data.pairs[:4]:
        maps = [explain(tiny_model, pair.image, caption_tokens, m) for m in METHODS]
        assert [m.method for m in maps] == list(METHODS)
        for m in maps:
            assert m.values.shape == (4, 4)
            assert m.values.min() >= 0.0
            assert m.values.max() in (0.0, 1.0)


def test_constant_image_has_zero_medgrad(tiny_model, caption_tokens):
    img = np.full((16, 16, 3), 0.6, dtype=np.float32)
    assert np.array_equal(medgrad_eclip(tiny_model, img, caption_tokens).values, np.zeros((4, 4)))


def test_unit_entropy_weight_reduces_to_channel_map(tiny_model, tiny_data, caption_tokens):
    img = tiny_data.pairs[1].image
    gated = medgrad_eclip(tiny_model, img, caption_tokens, entropy_weight=np.ones((4, 4)))
    plain = channel_gradient_map(tiny_model, img, caption_tokens)
    assert gated.values.tobytes() == plain.values.tobytes()


def test_zero_entropy_patches_get_zero_saliency(tiny_model, caption_tokens):
    img = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
    img[:, :8] = 0.3  # left half constant -> zero entropy well inside it
    cfg = ExplainConfig(disk_radius=1, bins=16)
    from medgrad.explain.saliency import entropy_weight_map

    w = entropy_weight_map(img, (4, 4), cfg)
    assert (w == 0).any()
    sal = medgrad_eclip(tiny_model, img, caption_tokens, cfg).values
    assert np.all(sal[w == 0] == 0.0)


def test_grad_eclip_differs_from_medgrad(tiny_model, tiny_data, caption_tokens):
    img = tiny_data.pairs[2].image
    a = medgrad_eclip(tiny_model, img, caption_tokens).values
    b = grad_eclip(tiny_model, img, caption_tokens).values
    assert np.abs(a - b).sum() > 0


def test_nan_parameters_raise(tiny_model, tiny_data, caption_tokens):
    tiny_model.params["visual.proj"].data[0, 0] = np.nan
    for fn in (medgrad_eclip, grad_eclip, grad_cam):
        with pytest.raises(NumericError):
            fn(tiny_model, tiny_data.pairs[0].image, caption_tokens)


def test_unknown_method(tiny_model, tiny_data, caption_tokens):
    with pytest.raises(ContractError, match="medgrad-eclip"):
        explain(tiny_model, tiny_data.pairs[0].image, caption_tokens, "lrp")


def test_sidecar_json():
    m = SaliencyMap(np.array([[0.0, 1.0], [0.5, 0.25]]), "grad-cam", "melanoma, asymmetric")
    d = json.loads(m.to_json())
    assert d == {"method": "grad-cam", "caption": "melanoma, asymmetric", "grid": [2, 2],
                 "values": [[0.0, 1.0], [0.5, 0.25]]}


# -- rendering ----------------------------------------------------------------------


def test_upsample_identity_and_constant():
    v = np.random.default_rng(0).random((3, 5))
    assert np.array_equal(upsample(v, 3, 5), v)
    assert np.allclose(upsample(np.full((2, 3), 0.7), 9, 11), 0.7)


def test_upsample_bilinear_closed_form():
    v = np.array([[0.0, 1.0], [0.5, 0.25]])
    out = upsample(v, 4, 4)
    assert out[0, 0] == 0.0 and out[0, 3] == 1.0 and out[3, 0] == 0.5 and out[3, 3] == 0.25
    # (y, x) = (1/3, 2/3) in source coordinates
    y, x = 1 / 3, 2 / 3
    expected = (1 - y) * ((1 - x) * 0.0 + x * 1.0) + y * ((1 - x) * 0.5 + x * 0.25)
    assert out[1, 2] == pytest.approx(expected)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_colormap_endpoints():
    assert colormap(np.array([0.0])).tolist() == [[0.0, 0.0, 1.0]]
    assert colormap(np.array([1.0])).tolist() == [[1.0, 0.0, 0.0]]
    assert np.allclose(colormap(np.array([0.5])), (COLORMAP_STOPS[1] + COLORMAP_STOPS[2]) / 2)


def _decode(png: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))


def _panel_image():
    spec = LesionSpec(2, "melanoma", 0, 0.7, ("dark-brown", "black", "blue-gray"), ("streaks",), 0.3)
    return generate_pair(spec, Rng(0), 32).image


def test_alpha_zero_panels_equal_original():
    img = _panel_image()
    maps = [SaliencyMap(np.random.default_rng(i).random((4, 4)), m) for i, m in enumerate(METHODS)]
    out = _decode(render_panel(img, maps, ["original", *METHODS], alpha=0.0))
    scale = 128 // 32
    first = out[: 32 * scale, : 32 * scale]
    for k in range(1, 4):
        left = k * (32 * scale + 2)
        assert np.array_equal(out[: 32 * scale, left : left + 32 * scale], first)
    assert np.array_equal(first[::scale, ::scale], to_uint8(img))


def test_alpha_one_zero_map_is_colormap_floor():
    img = _panel_image()
    out = overlay(img, SaliencyMap(np.zeros((4, 4)), "grad-cam"), alpha=1.0)
    assert np.array_equal(out, np.broadcast_to(COLORMAP_STOPS[0], out.shape))


def test_label_count_checked():
    img = _panel_image()
    with pytest.raises(ContractError):
        render_panel(img, [SaliencyMap(np.zeros((2, 2)), "grad-cam")], ["only one"])


def test_panel_golden():
    img = _panel_image()
    yy, xx = np.indices((4, 4))
    maps = [
        SaliencyMap(minmax((yy + xx).astype(float)), "medgrad-eclip"),
        SaliencyMap(np.eye(4), "grad-eclip"),
        SaliencyMap(np.zeros((4, 4)), "grad-cam"),
    ]
    png = render_panel(img, maps, ["original", *METHODS], alpha=0.5)
    assert _decode(png).shape == (128 + 14, 4 * 128 + 3 * 2, 3)
    check_golden("panel.png", png)
