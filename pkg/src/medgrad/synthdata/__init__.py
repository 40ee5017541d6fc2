"""Synthetic lesion image/caption pairs, tokenizer, augmentation and dataset I/O."""

from medgrad.synthdata.dataset import (
    IMAGE_OPS,
    Dataset,
    ImageTextPair,
    augment_caption,
    augment_image,
    dataset_hash,
    dedupe,
    generate_dataset,
    generate_pair,
    ingest_external,
    load_image,
    save_dataset,
    split_dataset,
)
from medgrad.synthdata.templates import ClassTemplate, LesionSpec, class_templates, parse_caption, template_caption
from medgrad.synthdata.vocab import BOS, EOS, PAD, Vocabulary, detokenize, normalize, tokenize

__all__ = [
    "BOS",
    "EOS",
    "IMAGE_OPS",
    "PAD",
    "ClassTemplate",
    "Dataset",
    "ImageTextPair",
    "LesionSpec",
    "Vocabulary",
    "augment_caption",
    "augment_image",
    "class_templates",
    "dataset_hash",
    "dedupe",
    "detokenize",
    "generate_dataset",
    "generate_pair",
    "ingest_external",
    "load_image",
    "normalize",
    "parse_caption",
    "save_dataset",
    "split_dataset",
    "template_caption",
    "tokenize",
]
