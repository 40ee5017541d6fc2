"""Classification metrics, contrastive loss and CLIP score over a dataset.

Precision, recall (= sensitivity), F1 and specificity are macro averages of
per-class one-vs-rest rates. A class with no predicted (or no true) items
contributes 0 to the corresponding rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from medgrad.errors import ContractError
from medgrad.model import ClipModel, classify_batch, contrastive_loss, prompt_tokens, similarity_matrix
from medgrad.numerics import Tensor, cosine_similarity, no_grad
from medgrad.synthdata.dataset import Dataset
from medgrad.synthdata.vocab import tokenize

REPORT_KEYS = ("accuracy", "loss", "precision", "recall", "f1", "sensitivity", "specificity", "clip_score", "n", "confusion")


@dataclass
class MetricsReport:
    accuracy: float
    loss: float
    precision: float
    recall: float
    f1: float
    sensitivity: float
    specificity: float
    clip_score: float
    n_samples: int
    batch_size: int
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "clip_score": self.clip_score,
            "n": self.n_samples,
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    """``counts[t, p]`` = items of true class t predicted as p."""
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return counts


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.where(den > 0, num / np.maximum(den, 1), 0.0)


def rates(confusion: np.ndarray) -> dict[str, float]:
    c = np.asarray(confusion, dtype=np.float64)
    total = c.sum()
    if total == 0:
        raise ContractError("confusion matrix is empty")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = total - tp - fp - fn
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    specificity = _safe_div(tn, tn + fp)
    return {
        "accuracy": float(tp.sum() / total),
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
        "sensitivity": float(recall.mean()),
        "specificity": float(specificity.mean()),
    }


def clip_score(f_i, f_t) -> float:
    """Cosine similarity of an image and a text embedding, no temperature."""
    with no_grad():
        return float(cosine_similarity(Tensor(np.asarray(f_i)), Tensor(np.asarray(f_t))).data)


def evaluate(model: ClipModel, dataset: Dataset, batch_size: int = 64) -> MetricsReport:
    if len(dataset) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    if not dataset.class_prompts:
        raise ContractError("dataset has no class prompts")
    ctx = model.config.context_length
    prompts = prompt_tokens(dataset, ctx)
    k = len(prompts)
    preds, losses, scores = [], [], []
    for start in range(0, len(dataset), batch_size):
        batch = dataset.pairs[start : start + batch_size]
        images = np.stack([p.image for p in batch])
        tokens = np.stack([tokenize(dataset.vocab, p.caption, ctx) for p in batch])
        preds.append(classify_batch(model, images, prompts).argmax(axis=1))
        with no_grad():
            losses.append(contrastive_loss(similarity_matrix(model, images, tokens)).item())
            img = model.encode_images(images)
            txt = model.encode_texts(tokens)
            scores.append(cosine_similarity(img, txt, axis=-1).data)
    y_pred = np.concatenate(preds)
    y_true = np.array([p.class_id for p in dataset.pairs])
    confusion = confusion_matrix(y_true, y_pred, k)
    r = rates(confusion)
    return MetricsReport(
        loss=float(np.mean(losses)),
        clip_score=float(np.concatenate(scores).astype(np.float64).mean()),
        n_samples=len(dataset),
        batch_size=batch_size,
        confusion=confusion,
        **r,
    )
