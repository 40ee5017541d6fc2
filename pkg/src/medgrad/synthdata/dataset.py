"""Image/caption pairs: generation, augmentation, splitting and on-disk I/O.

On-disk layout::

    images/<id>.png      8-bit RGB
    masks/<id>.png       8-bit grayscale, 255 = lesion (optional)
    manifest.jsonl       {"id", "file", "mask", "class", "caption", "criteria"}
    vocab.txt            one token per line; id = line index + 3
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from medgrad.errors import CaptionParseError, ContractError, DataFormatError, DimensionError
from medgrad.numerics.rng import Rng
from medgrad.synthdata.generator import render
from medgrad.synthdata.templates import (
    DEFAULT_CLASSES,
    LesionSpec,
    class_templates,
    parse_caption,
    template_caption,
)
from medgrad.synthdata.vocab import DEFAULT_CONTEXT_LENGTH, Vocabulary, tokenize

log = logging.getLogger(__name__)

IMAGE_OPS = ("flip-h", "flip-v", "rot90", "rot180", "rot270")
RADIUS_RANGE = (0.2, 0.32)
IRREGULARITY_JITTER = 0.04


@dataclass
class ImageTextPair:
    id: str
    image: np.ndarray  # H×W×3 float32 in [0, 1]
    caption: str
    tokens: np.ndarray
    class_id: int
    mask: np.ndarray | None = None  # H×W bool
    spec: LesionSpec | None = None

    @property
    def criteria(self) -> list[str]:
        return parse_caption(self.caption)[1]


@dataclass
class Dataset:
    pairs: list[ImageTextPair]
    vocab: Vocabulary
    class_names: list[str]
    class_prompts: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def subset(self, pairs: Sequence[ImageTextPair]) -> "Dataset":
        return Dataset(list(pairs), self.vocab, self.class_names, self.class_prompts)


# ---------------------------------------------------------------------------
# generation


def generate_pair(
    spec: LesionSpec,
    rng: Rng,
    image_size: int,
    vocab: Vocabulary | None = None,
    pair_id: str = "0",
    context_length: int = DEFAULT_CONTEXT_LENGTH,
) -> ImageTextPair:
    image, mask = render(spec, rng, image_size)
    caption = spec.caption
    tokens = tokenize(vocab, caption, context_length) if vocab is not None else np.zeros(0, dtype=np.int64)
    return ImageTextPair(pair_id, image, caption, tokens, spec.class_id, mask, spec)


def pair_spec(class_id: int, k: int, rng: Rng) -> LesionSpec:
    """Per-pair jitter of a class template (radius and border irregularity)."""
    t = class_templates(k)[class_id]
    irr = float(np.clip(t.border_irregularity + rng.uniform(-IRREGULARITY_JITTER, IRREGULARITY_JITTER), 0.0, 1.0))
    return LesionSpec(
        class_id=class_id,
        class_name=t.name,
        symmetry_axes=t.symmetry_axes,
        border_irregularity=irr,
        colors=t.colors,
        structures=t.structures,
        lesion_radius_fraction=float(rng.uniform(*RADIUS_RANGE)),
    )


def template_vocabulary(k: int = DEFAULT_CLASSES) -> Vocabulary:
    return Vocabulary.from_captions(template_caption(t) for t in class_templates(k))


def generate_dataset(
    n_pairs: int,
    k_classes: int = DEFAULT_CLASSES,
    seed: int = 0,
    image_size: int = 64,
    context_length: int = DEFAULT_CONTEXT_LENGTH,
) -> Dataset:
    """Pair ``i`` has class ``i % k`` and its own stream ``Rng(seed, "pair", id)``."""
    templates = class_templates(k_classes)
    vocab = template_vocabulary(k_classes)
    root = Rng(seed)
    pairs = []
    for i in range(n_pairs):
        pid = f"{i:05d}"
        rng = root.derive("pair", pid)
        spec = pair_spec(i % k_classes, k_classes, rng.derive("spec"))
        pairs.append(generate_pair(spec, rng.derive("render"), image_size, vocab, pid, context_length))
    return Dataset(pairs, vocab, [t.name for t in templates], [template_caption(t) for t in templates])


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    for p in ds.pairs:
        h.update(p.id.encode())
        h.update(np.ascontiguousarray(p.image).tobytes())
        h.update(p.caption.encode())
        h.update(np.ascontiguousarray(p.tokens).tobytes())
        if p.mask is not None:
            h.update(np.packbits(p.mask).tobytes())
    h.update("\n".join(ds.vocab.tokens).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# augmentation


def augment_image(image: np.ndarray, op: str) -> np.ndarray:
    """Exact pixel permutation of an H×W or H×W×C raster (apply to masks too)."""
    if op not in IMAGE_OPS:
        raise ContractError(f"unknown augmentation {op!r}; expected one of {', '.join(IMAGE_OPS)}")
    if op.startswith("rot") and image.shape[0] != image.shape[1]:
        raise DimensionError(f"{op} needs a square raster, got {image.shape[:2]}")
    if op == "flip-h":
        return image[:, ::-1].copy()
    if op == "flip-v":
        return image[::-1].copy()
    return np.rot90(image, k={"rot90": 1, "rot180": 2, "rot270": 3}[op], axes=(0, 1)).copy()


def augment_caption(caption: str, rng: Rng) -> str:
    """Shuffle the criteria; the class name stays first."""
    name, criteria = parse_caption(caption)
    if len(criteria) < 2:
        return caption
    order = rng.permutation(len(criteria))
    return ", ".join([name, *(criteria[i] for i in order)])


# ---------------------------------------------------------------------------
# preparation


def pair_key(p: ImageTextPair) -> tuple[str, str]:
    return hashlib.sha256(np.ascontiguousarray(p.image).tobytes()).hexdigest(), p.caption


def dedupe(pairs: Sequence[ImageTextPair]) -> list[ImageTextPair]:
    seen = set()
    out = []
    for p in pairs:
        key = pair_key(p)
        if key in seen:
            continue
        seen.add(key)
        out.append(p)
    return out


def _apportion(sizes: Sequence[int], fraction: float) -> list[int]:
    """Largest-remainder shares of ``round(fraction * sum(sizes))``; ties go to earlier classes."""
    exact = [fraction * n for n in sizes]
    quotas = [int(np.floor(e)) for e in exact]
    left = int(np.floor(fraction * sum(sizes) + 0.5)) - sum(quotas)
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - quotas[i]), i))
    for i in order[:left]:
        quotas[i] += 1
    return quotas


def split_dataset(
    pairs: Sequence[ImageTextPair], fraction: float = 0.75, seed: int = 0
) -> tuple[list[ImageTextPair], list[ImageTextPair]]:
    """Stratified, seeded train/test split after removing duplicate (image, caption) pairs.

    The train total is ``floor(fraction * N + 0.5)`` over the stratifiable pairs,
    shared among classes by largest remainder, so every class gets its exact
    quota rounded up or down. Classes with fewer than two items go entirely to
    train (with a warning).
    """
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"split fraction must lie in (0, 1), got {fraction}")
    pairs = dedupe(pairs)
    if len(pairs) < 4:
        raise ContractError(f"need at least 4 pairs to split, got {len(pairs)}")
    by_class: dict[int, list[int]] = {}
    for i, p in enumerate(pairs):
        by_class.setdefault(p.class_id, []).append(i)
    train_idx, test_idx = [], []
    strata = []
    for cls in sorted(by_class):
        idx = by_class[cls]
        if len(idx) < 2:
            warnings.warn(f"class {cls} has {len(idx)} item(s); cannot stratify, assigning to train")
            train_idx += idx
        else:
            strata.append(cls)
    quotas = _apportion([len(by_class[c]) for c in strata], fraction)
    root = Rng(seed, "split")
    for cls, n_train in zip(strata, quotas):
        idx = by_class[cls]
        perm = root.derive(cls).permutation(len(idx))
        train_idx += [idx[j] for j in perm[:n_train]]
        test_idx += [idx[j] for j in perm[n_train:]]
    return [pairs[i] for i in sorted(train_idx)], [pairs[i] for i in sorted(test_idx)]


# ---------------------------------------------------------------------------
# disk I/O


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for p in ds.pairs:
        file = f"images/{p.id}.png"
        Image.fromarray(_to_uint8(p.image), "RGB").save(out / file, optimize=False)
        mask = None
        if p.mask is not None:
            mask = f"masks/{p.id}.png"
            Image.fromarray(p.mask.astype(np.uint8) * 255, "L").save(out / mask, optimize=False)
        record = {
            "id": p.id,
            "file": file,
            "mask": mask,
            "class": ds.class_names[p.class_id],
            "caption": p.caption,
            "criteria": p.criteria,
        }
        lines.append(json.dumps(record, sort_keys=True))
    (out / "manifest.jsonl").write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    ds.vocab.save(out / "vocab.txt")
    return out


def _load_raster(path: Path, image_size: int | None, mode: str) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"manifest references missing file: {path}")
    try:
        with Image.open(path) as im:
            im = im.convert(mode)
            if image_size is not None and im.size != (image_size, image_size):
                resample = Image.BILINEAR if mode == "RGB" else Image.NEAREST
                im = im.resize((image_size, image_size), resample)
            return np.asarray(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataFormatError(f"cannot read image {path}: {exc}") from exc


def load_image(path: str | Path, image_size: int | None = None) -> np.ndarray:
    """RGB float32 raster in [0, 1], bilinearly resized to ``image_size`` if given."""
    return _load_raster(Path(path), image_size, "RGB").astype(np.float32) / 255.0


def ingest_external(
    directory: str | Path,
    image_size: int | None = 64,
    vocab: Vocabulary | None = None,
    context_length: int = DEFAULT_CONTEXT_LENGTH,
    class_names: Sequence[str] | None = None,
) -> Dataset:
    """Load a dataset directory (ours or a user-supplied real one).

    Images are resized bilinearly to ``image_size``; masks (optional) with
    nearest-neighbour. The vocabulary comes from ``vocab``, else ``vocab.txt``
    in the directory, else is built from the captions. Class ids follow
    ``class_names`` if given, else first appearance in the manifest; the
    prompt for each class is its most frequent caption.
    """
    root = Path(directory)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest at {manifest}")
    records = []
    for n, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            for key in ("id", "file", "class", "caption"):
                if key not in rec:
                    raise KeyError(key)
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataFormatError(f"{manifest}:{n}: bad manifest record ({exc})") from exc
        records.append(rec)

    if vocab is None:
        vocab_file = root / "vocab.txt"
        vocab = Vocabulary.load(vocab_file) if vocab_file.is_file() else Vocabulary.from_captions(r["caption"] for r in records)
    names = list(class_names or [])
    for r in records:
        if r["class"] not in names:
            if class_names is not None:
                raise DataFormatError(f"unknown class {r['class']!r} in {manifest}")
            names.append(r["class"])

    pairs = []
    for r in records:
        image = load_image(root / r["file"], image_size)
        mask = None
        if r.get("mask"):
            mask = _load_raster(root / r["mask"], image_size, "L") > 127
        try:
            parse_caption(r["caption"])
        except CaptionParseError as exc:
            raise DataFormatError(f"{manifest}: record {r['id']}: {exc}") from exc
        tokens = tokenize(vocab, r["caption"], context_length)
        pairs.append(ImageTextPair(str(r["id"]), image, r["caption"], tokens, names.index(r["class"]), mask))

    prompts = []
    for cid, name in enumerate(names):
        caps = [p.caption for p in pairs if p.class_id == cid]
        prompts.append(max(dict.fromkeys(caps), key=caps.count) if caps else name)
    log.info("loaded %d pairs, %d classes from %s", len(pairs), len(names), root)
    return Dataset(pairs, vocab, names, prompts)
