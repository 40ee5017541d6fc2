"""Toy CLIP-style dual encoder built on :mod:`medgrad.numerics`.

Image side: non-overlapping patches -> linear embedding, class token and
learned positions -> pre-norm transformer blocks -> final norm on the class
token -> projection to the shared embedding space. Text side: token and
position embeddings -> causal pre-norm blocks -> final norm -> the token at the
EOS position -> projection. Both embeddings are L2-normalized; the learned
``log_temperature`` scales cosine similarities into logits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from medgrad.errors import ConfigError, ContractError, DimensionError, NumericError, VocabularyError
from medgrad.numerics import (
    Adam,
    Rng,
    Tensor,
    backward,
    concat,
    cross_entropy,
    exp,
    gelu,
    l2_normalize,
    layer_norm,
    no_grad,
    softmax,
    swapaxes,
)
from medgrad.synthdata.dataset import IMAGE_OPS, Dataset, ImageTextPair, augment_caption, augment_image
from medgrad.synthdata.vocab import EOS, eos_position, tokenize

log = logging.getLogger(__name__)

MIN_LOGIT_SCALE = 1.0
MAX_LOGIT_SCALE = 100.0
MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    vision_layers: int = 2
    vision_heads: int = 4
    vision_dim: int = 64
    text_layers: int = 2
    text_heads: int = 4
    text_dim: int = 64
    vocab_size: int = 64
    context_length: int = 32
    embed_dim: int = 64
    logit_scale_init: float = math.log(1 / 0.07)
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.vision_dim % self.vision_heads:
            raise ConfigError(f"vision_dim {self.vision_dim} is not divisible by vision_heads {self.vision_heads}")
        if self.text_dim % self.text_heads:
            raise ConfigError(f"text_dim {self.text_dim} is not divisible by text_heads {self.text_heads}")
        if self.vocab_size < 3 or self.context_length < 2:
            raise ConfigError("vocab_size must be >= 3 and context_length >= 2")
        if self.vision_layers < 1 or self.text_layers < 1:
            raise ConfigError("encoders need at least one block")

    @property
    def grid(self) -> tuple[int, int]:
        n = self.image_size // self.patch_size
        return n, n

    @property
    def n_patches(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @classmethod
    def vit_b16(cls, vocab_size: int) -> "ModelConfig":
        """ViT-B/16-sized geometry on 224×224 inputs."""
        return cls(
            image_size=224,
            patch_size=16,
            vision_layers=12,
            vision_heads=12,
            vision_dim=768,
            text_layers=12,
            text_heads=8,
            text_dim=512,
            vocab_size=vocab_size,
            context_length=32,
            embed_dim=512,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EncoderActivations:
    """Final vision block internals for one image.

    ``patch_tokens`` are the normalized patch tokens entering the final block
    (P×d_v); ``value_features`` are their value projections carried through the
    attention output projection, the final norm's gain and the image
    projection (P×D); ``cls_query`` is heads×d_head and ``keys`` heads×P×d_head.
    """

    patch_tokens: np.ndarray
    value_features: np.ndarray
    cls_query: np.ndarray
    keys: np.ndarray
    patch_grid: tuple[int, int]


class ClipModel:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._init_params(Rng(seed, "init"), np.dtype(dtype))

    # -- parameters ------------------------------------------------------
    def _add(self, name: str, value: np.ndarray, dtype) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name=name)

    def _linear(self, rng: Rng, name: str, fan_in: int, fan_out: int, dtype, scale: float = 1.0) -> None:
        self._add(f"{name}.weight", rng.derive(name).normal(0.0, scale / math.sqrt(fan_in), (fan_in, fan_out)), dtype)
        self._add(f"{name}.bias", np.zeros(fan_out), dtype)

    def _norm(self, name: str, dim: int, dtype) -> None:
        self._add(f"{name}.weight", np.ones(dim), dtype)
        self._add(f"{name}.bias", np.zeros(dim), dtype)

    def _blocks(self, rng: Rng, prefix: str, layers: int, dim: int, dtype) -> None:
        hidden = dim * self.config.mlp_ratio
        resid = 1.0 / math.sqrt(2 * layers)
        for i in range(layers):
            p = f"{prefix}.blocks.{i}"
            self._norm(f"{p}.ln1", dim, dtype)
            for qkv in ("q", "k", "v"):
                self._linear(rng, f"{p}.attn.{qkv}", dim, dim, dtype)
            self._linear(rng, f"{p}.attn.out", dim, dim, dtype, resid)
            self._norm(f"{p}.ln2", dim, dtype)
            self._linear(rng, f"{p}.mlp.fc1", dim, hidden, dtype)
            self._linear(rng, f"{p}.mlp.fc2", hidden, dim, dtype, resid)

    def _init_params(self, rng: Rng, dtype) -> None:
        c = self.config
        dv, dt = c.vision_dim, c.text_dim
        self._linear(rng, "visual.patch_embed", c.patch_size * c.patch_size * 3, dv, dtype)
        self._add("visual.class_token", rng.derive("cls").normal(0.0, 0.02, dv), dtype)
        self._add("visual.pos_embed", rng.derive("vpos").normal(0.0, 0.02, (c.n_patches + 1, dv)), dtype)
        self._norm("visual.ln_pre", dv, dtype)
        self._blocks(rng, "visual", c.vision_layers, dv, dtype)
        self._norm("visual.ln_post", dv, dtype)
        self._add("visual.proj", rng.derive("vproj").normal(0.0, 1 / math.sqrt(dv), (dv, c.embed_dim)), dtype)

        self._add("text.token_embed", rng.derive("tok").normal(0.0, 0.02, (c.vocab_size, dt)), dtype)
        self._add("text.pos_embed", rng.derive("tpos").normal(0.0, 0.01, (c.context_length, dt)), dtype)
        self._blocks(rng, "text", c.text_layers, dt, dtype)
        self._norm("text.ln_final", dt, dtype)
        self._add("text.proj", rng.derive("tproj").normal(0.0, 1 / math.sqrt(dt), (dt, c.embed_dim)), dtype)
        self._add("log_temperature", np.array(c.logit_scale_init), dtype)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise DimensionError(f"parameter {k}: expected shape {p.shape}, got {state[k].shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def astype(self, dtype) -> "ClipModel":
        clone = ClipModel.__new__(ClipModel)
        clone.config = self.config
        clone.params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return clone

    def frozen(self) -> "ClipModel":
        """View sharing parameter arrays but recording no parameter gradients."""
        clone = ClipModel.__new__(ClipModel)
        clone.config = self.config
        clone.params = {k: Tensor(v.data, name=k) for k, v in self.params.items()}
        return clone

    def check_finite(self) -> None:
        for k, v in self.params.items():
            if not np.all(np.isfinite(v.data)):
                raise NumericError(f"parameter {k} holds non-finite values")

    def copy(self) -> "ClipModel":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return self.params["log_temperature"].dtype

    @property
    def logit_scale(self) -> float:
        return float(np.exp(self.params["log_temperature"].data))

    def clamp_temperature(self) -> None:
        t = self.params["log_temperature"]
        t.data = np.asarray(np.clip(t.data, math.log(MIN_LOGIT_SCALE), math.log(MAX_LOGIT_SCALE)), dtype=t.dtype)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v.data).tobytes())
        return h.hexdigest()

    # -- forward ---------------------------------------------------------
    def _block(self, prefix: str, x: Tensor, heads: int, mask: np.ndarray | None = None, capture: dict | None = None):
        p = self.params
        b, n, d = x.shape
        dh = d // heads
        h = layer_norm(x, p[f"{prefix}.ln1.weight"], p[f"{prefix}.ln1.bias"])

        def proj(name):
            t = h @ p[f"{prefix}.attn.{name}.weight"] + p[f"{prefix}.attn.{name}.bias"]
            return t, t.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)

        _, q = proj("q")
        _, k = proj("k")
        v_flat, v = proj("v")
        scores = (q @ swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        attn = softmax(scores, axis=-1)
        o = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        x = x + (o @ p[f"{prefix}.attn.out.weight"] + p[f"{prefix}.attn.out.bias"])
        m = layer_norm(x, p[f"{prefix}.ln2.weight"], p[f"{prefix}.ln2.bias"])
        m = gelu(m @ p[f"{prefix}.mlp.fc1.weight"] + p[f"{prefix}.mlp.fc1.bias"])
        x = x + (m @ p[f"{prefix}.mlp.fc2.weight"] + p[f"{prefix}.mlp.fc2.bias"])
        if capture is not None:
            capture.update(h=h, q=q, k=k, v=v_flat)
        return x

    def patchify(self, images: np.ndarray) -> np.ndarray:
        c = self.config
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if images.ndim != 4 or images.shape[1:] != (c.image_size, c.image_size, 3):
            raise DimensionError(
                f"expected images of shape (B, {c.image_size}, {c.image_size}, 3), got {images.shape}"
            )
        b = images.shape[0]
        ps = c.patch_size
        rows, cols = c.grid
        x = images.reshape(b, rows, ps, cols, ps, 3).transpose(0, 1, 3, 2, 4, 5)
        return (x.reshape(b, rows * cols, ps * ps * 3) - 0.5).astype(self.dtype)

    def image_features(self, images: np.ndarray, capture: dict | None = None, track_final_block: bool = False) -> Tensor:
        """Unnormalized image embeddings (B×D). ``capture`` receives final-block internals.

        With ``track_final_block`` the final block's input is cut from the
        graph and replaced by a fresh leaf, so a backward pass only reaches the
        final block (and ``capture["h"]`` gets a retained gradient).
        """
        c, p = self.config, self.params
        patches = Tensor(self.patchify(images))
        b = patches.shape[0]
        x = patches @ p["visual.patch_embed.weight"] + p["visual.patch_embed.bias"]
        cls = p["visual.class_token"].reshape(1, 1, c.vision_dim) + np.zeros((b, 1, c.vision_dim), dtype=self.dtype)
        x = concat([cls, x], axis=1) + p["visual.pos_embed"]
        x = layer_norm(x, p["visual.ln_pre.weight"], p["visual.ln_pre.bias"])
        for i in range(c.vision_layers):
            last = i == c.vision_layers - 1
            if last and track_final_block:
                x = Tensor(x.data, requires_grad=True)
            x = self._block(f"visual.blocks.{i}", x, c.vision_heads, capture=capture if last else None)
        if capture is not None and track_final_block:
            capture["h"].retain_grad()
        pooled = layer_norm(x[:, 0], p["visual.ln_post.weight"], p["visual.ln_post.bias"])
        return pooled @ p["visual.proj"]

    def check_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.ndim != 2 or tokens.shape[1] > self.config.context_length:
            raise DimensionError(f"token batch must be (B, <= {self.config.context_length}), got {tokens.shape}")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise VocabularyError("token ids must be integers")
        bad = tokens[(tokens < 0) | (tokens >= self.config.vocab_size)]
        if bad.size:
            raise VocabularyError(f"token id(s) {sorted(set(bad.tolist()))} outside vocabulary of size {self.config.vocab_size}")
        if not np.all((tokens == EOS).any(axis=1)):
            raise VocabularyError("every token sequence needs an EOS")
        return tokens

    def text_features(self, tokens: np.ndarray) -> Tensor:
        """Unnormalized text embeddings (B×D) read at each sequence's EOS."""
        c, p = self.config, self.params
        tokens = self.check_tokens(tokens)
        b, n = tokens.shape
        x = p["text.token_embed"][tokens] + p["text.pos_embed"][:n]
        mask = np.triu(np.full((n, n), MASK_VALUE, dtype=self.dtype), k=1)
        for i in range(c.text_layers):
            x = self._block(f"text.blocks.{i}", x, c.text_heads, mask=mask)
        x = layer_norm(x, p["text.ln_final.weight"], p["text.ln_final.bias"])
        pooled = x[np.arange(b), eos_position(tokens)]
        return pooled @ p["text.proj"]

    def encode_images(self, images: np.ndarray) -> Tensor:
        return l2_normalize(self.image_features(images))

    def encode_texts(self, tokens: np.ndarray) -> Tensor:
        return l2_normalize(self.text_features(tokens))

    def activations(self, capture: dict, index: int = 0) -> EncoderActivations:
        """Turn a ``capture`` dict filled by :meth:`image_features` into activations of one image."""
        p = self.params
        h, q, k, v = (capture[n].data for n in ("h", "q", "k", "v"))
        gain = p["visual.ln_post.weight"].data
        values = ((v[index, 1:] @ p[f"visual.blocks.{self.config.vision_layers - 1}.attn.out.weight"].data) * gain) @ p[
            "visual.proj"
        ].data
        return EncoderActivations(
            patch_tokens=h[index, 1:].copy(),
            value_features=values,
            cls_query=q[index, :, 0].copy(),
            keys=k[index, :, 1:].copy(),
            patch_grid=self.config.grid,
        )


# ---------------------------------------------------------------------------
# module-level operations


def encode_image(model: ClipModel, image: np.ndarray) -> tuple[np.ndarray, EncoderActivations]:
    """Unit-norm embedding of one H×W×3 image plus final-block activations."""
    c = model.config
    if np.shape(image) != (c.image_size, c.image_size, 3):
        raise DimensionError(f"expected a {c.image_size}×{c.image_size}×3 image, got {np.shape(image)}")
    capture: dict = {}
    with no_grad():
        emb = l2_normalize(model.image_features(image, capture))
    return emb.data[0], model.activations(capture)


def encode_text(model: ClipModel, tokens: np.ndarray) -> np.ndarray:
    with no_grad():
        return model.encode_texts(tokens).data[0]


def similarity_matrix(model: ClipModel, images: np.ndarray, tokens: np.ndarray) -> Tensor:
    """``logits[i, j] = exp(log_temperature) * cos(image_i, text_j)``."""
    if len(images) != len(tokens):
        raise ContractError(f"batch sizes differ: {len(images)} images vs {len(tokens)} texts")
    img = model.encode_images(images)
    txt = model.encode_texts(tokens)
    return exp(model.params["log_temperature"]) * (img @ txt.T)


def contrastive_loss(logits: Tensor) -> Tensor:
    """Mean of the image->text (rows) and text->image (columns) cross-entropies."""
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ContractError(f"contrastive loss needs a square logit matrix, got {logits.shape}")
    targets = np.arange(logits.shape[0])
    return (cross_entropy(logits, targets) + cross_entropy(logits.T, targets)) * 0.5


def classify_batch(model: ClipModel, images: np.ndarray, prompt_tokens: np.ndarray) -> np.ndarray:
    """Class probabilities (B×K): softmax over temperature-scaled cosines to each prompt."""
    prompt_tokens = np.asarray(prompt_tokens)
    if prompt_tokens.ndim != 2 or len(prompt_tokens) < 1:
        raise ContractError("classification needs at least one class prompt")
    with no_grad():
        img = model.encode_images(images)
        txt = model.encode_texts(prompt_tokens)
        logits = (img @ txt.T) * model.logit_scale
        return softmax(logits, axis=-1).data


def classify(model: ClipModel, image: np.ndarray, prompt_tokens: np.ndarray) -> np.ndarray:
    if len(prompt_tokens) == 0:
        raise ContractError("classification needs at least one class prompt")
    return classify_batch(model, np.asarray(image)[None], prompt_tokens)[0]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 3e-4
    seed: int = 0
    augment: bool = True


VIT_B16_LR = 1e-5  # for the ViT-B/16 geometry; the toy default is 3e-4


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)


def prompt_tokens(dataset: Dataset, context_length: int) -> np.ndarray:
    return np.stack([tokenize(dataset.vocab, c, context_length) for c in dataset.class_prompts])


def predict(model: ClipModel, pairs: Sequence[ImageTextPair], prompts: np.ndarray, batch_size: int = 64) -> np.ndarray:
    preds = []
    for i in range(0, len(pairs), batch_size):
        images = np.stack([p.image for p in pairs[i : i + batch_size]])
        preds.append(classify_batch(model, images, prompts).argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _augmented_batch(dataset: Dataset, pairs: Sequence[ImageTextPair], rng: Rng, context_length: int, augment: bool):
    images, tokens = [], []
    for p in pairs:
        image, caption = p.image, p.caption
        if augment:
            op = int(rng.integers(0, len(IMAGE_OPS) + 1))
            if op < len(IMAGE_OPS):
                image = augment_image(image, IMAGE_OPS[op])
            caption = augment_caption(caption, rng)
        images.append(image)
        tokens.append(tokenize(dataset.vocab, caption, context_length))
    return np.stack(images), np.stack(tokens)


def train(
    model: ClipModel,
    dataset: Dataset,
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Contrastive training with Adam; deterministic for a fixed seed.

    Each epoch shuffles the pairs, applies a random flip/rotation (or none) and
    a criteria reordering per pair, and records the mean loss and the
    classification accuracy on the un-augmented training pairs.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    ctx = model.config.context_length
    prompts = prompt_tokens(dataset, ctx)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    root = Rng(config.seed, "train")
    result = TrainResult()
    labels = np.array([p.class_id for p in dataset.pairs])
    for epoch in range(config.epochs):
        rng = root.derive("epoch", epoch)
        order = rng.permutation(len(dataset))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [dataset.pairs[i] for i in order[start : start + config.batch_size]]
            images, tokens = _augmented_batch(dataset, batch, rng, ctx, config.augment)
            opt.zero_grad()
            loss = contrastive_loss(similarity_matrix(model, images, tokens))
            backward(loss)
            opt.step()
            model.clamp_temperature()
            total += loss.item() * len(batch)
            seen += len(batch)
        acc = float((predict(model, dataset.pairs, prompts, config.batch_size) == labels).mean())
        record = {"epoch": epoch + 1, "loss": total / seen, "train_acc": acc}
        result.history.append(record)
        log.info("epoch %d loss %.4f train_acc %.3f", record["epoch"], record["loss"], acc)
        if on_epoch is not None:
            on_epoch(record)
    return result
