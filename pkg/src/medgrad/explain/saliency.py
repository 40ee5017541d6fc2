"""Gradient-based saliency on the patch grid: MedGrad E-CLIP, Grad E-CLIP, Grad-CAM.

All three read the final vision block. Shared pieces:

* ``w_c``: gradient of ``cos(f_I, f_T)`` with respect to each channel of the
  unnormalized image embedding;
* ``v_i``: per-patch value features in embedding space
  (:class:`medgrad.model.EncoderActivations`).

MedGrad E-CLIP gates the channel map ``sum_c w_c v_ic`` by the patch's local
entropy weight; Grad E-CLIP gates it by ``ReLU(cos(q_cls, k_i))`` averaged over
heads (a reconstruction of that method's "loosened" attention similarity);
Grad-CAM weighs the final block's patch tokens by their mean gradient. Since
the entropy weight is the same for every channel it is applied after the
channel sum, which is algebraically the same as weighting inside it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from medgrad.errors import ContractError
from medgrad.explain.entropy import entropy_weights, local_entropy_fast, to_gray
from medgrad.numerics import Tensor, backward, cosine_similarity, no_grad

METHODS = ("medgrad-eclip", "grad-eclip", "grad-cam")


@dataclass
class ExplainConfig:
    disk_radius: int = 5
    bins: int = 32
    entropy_normalization: str = "minmax"
    overlay_alpha: float = 0.5

    def __post_init__(self):
        if self.disk_radius < 1:
            raise ContractError(f"disk_radius must be >= 1, got {self.disk_radius}")
        if self.bins < 2:
            raise ContractError(f"bins must be >= 2, got {self.bins}")
        if self.entropy_normalization not in ("minmax", "max-entropy"):
            raise ContractError(f"entropy_normalization must be 'minmax' or 'max-entropy', got {self.entropy_normalization!r}")
        if not 0.0 <= self.overlay_alpha <= 1.0:
            raise ContractError(f"overlay_alpha must lie in [0, 1], got {self.overlay_alpha}")


@dataclass
class SaliencyMap:
    values: np.ndarray  # rows×cols, >= 0
    method: str
    caption: str = ""
    normalization: str = "minmax"

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "caption": self.caption,
                "grid": list(self.values.shape),
                "values": self.values.tolist(),
            }
        )


def minmax(x: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant input maps to all zeros."""
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# array-level pieces


def channel_map(values: np.ndarray, w_c: np.ndarray) -> np.ndarray:
    """``sum_c w_c v_ic`` for every patch (length P)."""
    return values @ w_c


def gated_map(cmap: np.ndarray, weight: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """``minmax(ReLU(cmap_i * weight_i))`` reshaped to the patch grid."""
    return minmax(relu(cmap * weight.reshape(-1)).reshape(grid))


def attention_weights(cls_query: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """``minmax(mean_h ReLU(cos(q_h, k_hi)))`` for each patch.

    ``cls_query`` is heads×d_head, ``keys`` heads×P×d_head. Unlike the entropy
    weights, a constant positive similarity (every key aligned with the query)
    maps to all ones: equal attention is no reason to suppress every patch.
    """
    q = cls_query / np.maximum(np.linalg.norm(cls_query, axis=-1, keepdims=True), 1e-12)
    k = keys / np.maximum(np.linalg.norm(keys, axis=-1, keepdims=True), 1e-12)
    w = relu(np.einsum("hd,hpd->hp", q, k)).mean(axis=0)
    if w.max() <= w.min():
        return np.ones_like(w) if w.max() > 0 else np.zeros_like(w)
    return minmax(w)


def grad_cam_map(tokens: np.ndarray, grads: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """``minmax(ReLU(A @ alpha))`` with ``alpha = mean_i dcos/dA_i``."""
    alpha = grads.mean(axis=0)
    return minmax(relu(tokens @ alpha).reshape(grid))


# ---------------------------------------------------------------------------
# model-level


@dataclass
class SimilarityGradients:
    activations: object  # EncoderActivations
    w_c: np.ndarray  # D
    token_grads: np.ndarray  # P×d_v, dcos / d(final-block patch tokens)
    cosine: float


def similarity_gradients(model, image: np.ndarray, caption_tokens: np.ndarray) -> SimilarityGradients:
    """One forward/backward of ``cos(f_I, f_T)`` through a frozen view of ``model``."""
    model.check_finite()
    frozen = model.frozen()
    with no_grad():
        f_t = frozen.encode_texts(caption_tokens).data[0]
    capture: dict = {}
    raw = frozen.image_features(np.asarray(image), capture, track_final_block=True)
    emb = Tensor(raw.data[0].copy(), requires_grad=True)
    cos = cosine_similarity(emb, Tensor(f_t))
    backward(cos)
    w_c = emb.grad
    backward((raw[0] * Tensor(w_c)).sum())
    h = capture["h"]
    return SimilarityGradients(frozen.activations(capture), w_c, h.grad[0, 1:].copy(), cos.item())


def _caption(tokens, caption):
    return caption if caption is not None else " ".join(str(int(t)) for t in np.asarray(tokens).reshape(-1))


def entropy_weight_map(image: np.ndarray, grid: tuple[int, int], config: ExplainConfig) -> np.ndarray:
    emap = local_entropy_fast(to_gray(image), config.disk_radius, config.bins)
    return entropy_weights(emap, grid, config.entropy_normalization)


def medgrad_eclip(
    model,
    image: np.ndarray,
    caption_tokens: np.ndarray,
    config: ExplainConfig | None = None,
    caption: str | None = None,
    entropy_weight: np.ndarray | None = None,
) -> SaliencyMap:
    """Entropy-gated channel-gradient saliency.

    ``entropy_weight`` overrides the computed per-patch weights (rows×cols).
    """
    config = config or ExplainConfig()
    g = similarity_gradients(model, image, caption_tokens)
    grid = g.activations.patch_grid
    w_e = entropy_weight if entropy_weight is not None else entropy_weight_map(image, grid, config)
    if np.shape(w_e) != tuple(grid):
        raise ContractError(f"entropy weights of shape {np.shape(w_e)} do not match patch grid {grid}")
    cmap = channel_map(g.activations.value_features, g.w_c)
    return SaliencyMap(gated_map(cmap, np.asarray(w_e, dtype=cmap.dtype), grid), "medgrad-eclip", _caption(caption_tokens, caption))


def channel_gradient_map(model, image: np.ndarray, caption_tokens: np.ndarray, caption: str | None = None) -> SaliencyMap:
    """Ungated ``minmax(ReLU(sum_c w_c v_ic))``."""
    g = similarity_gradients(model, image, caption_tokens)
    cmap = channel_map(g.activations.value_features, g.w_c)
    return SaliencyMap(minmax(relu(cmap).reshape(g.activations.patch_grid)), "channel-gradient", _caption(caption_tokens, caption))


def grad_eclip(model, image: np.ndarray, caption_tokens: np.ndarray, caption: str | None = None) -> SaliencyMap:
    g = similarity_gradients(model, image, caption_tokens)
    act = g.activations
    w_s = attention_weights(act.cls_query, act.keys)
    cmap = channel_map(act.value_features, g.w_c)
    return SaliencyMap(gated_map(cmap, w_s.astype(cmap.dtype), act.patch_grid), "grad-eclip", _caption(caption_tokens, caption))


def grad_cam(model, image: np.ndarray, caption_tokens: np.ndarray, caption: str | None = None) -> SaliencyMap:
    g = similarity_gradients(model, image, caption_tokens)
    act = g.activations
    return SaliencyMap(grad_cam_map(act.patch_tokens, g.token_grads, act.patch_grid), "grad-cam", _caption(caption_tokens, caption))


def explain(model, image, caption_tokens, method: str, config: ExplainConfig | None = None, caption: str | None = None) -> SaliencyMap:
    if method == "medgrad-eclip":
        return medgrad_eclip(model, image, caption_tokens, config, caption)
    if method == "grad-eclip":
        return grad_eclip(model, image, caption_tokens, caption)
    if method == "grad-cam":
        return grad_cam(model, image, caption_tokens, caption)
    raise ContractError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
