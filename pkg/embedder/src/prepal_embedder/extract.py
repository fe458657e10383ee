"""Turn raw texts into the engine's embedding file plus a label manifest.

Representations are the final hidden states of a pretrained transformer
encoder, reduced by average pooling over real token positions. Padding
never contributes; special tokens are excluded by default and included
behind a flag.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from prepal.dataset import (
    UNKNOWN_LABEL,
    EmbeddingMatrix,
    atomic_write_bytes,
    save_embeddings,
)
from prepal.errors import ValidationError


@dataclass
class ExtractReport:
    """What one extraction produced: the kept shape, the label coding,
    and which input rows were dropped and why."""

    n: int
    d: int
    class_names: list
    excluded: list = field(default_factory=list)  # (input_row, reason)


def _pool(hidden, weights):
    # hidden (n, L, d), weights (n, L) in {0,1}; rows with zero weight
    # are left as zeros for the caller to drop
    weights = weights.to(hidden.dtype)
    sums = torch.einsum("nld,nl->nd", hidden, weights)
    counts = weights.sum(dim=1, keepdim=True)
    return sums / counts.clamp(min=1.0), counts.squeeze(1)


def embed_texts(texts, model_dir, *, max_length=256, batch_size=32,
                include_special_tokens=False):
    """One pooled row per text.

    Returns (matrix, zero_token_positions): the matrix has one row per
    text that had at least one poolable token; positions list the input
    rows that had none (empty or all-special after truncation).
    """
    if not texts:
        raise ValidationError("texts is empty")
    tokenizer = AutoTokenizer.from_pretrained(model_dir)
    model = AutoModel.from_pretrained(model_dir)
    model.eval()

    rows = []
    counts = []
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            chunk = list(texts[start:start + batch_size])
            enc = tokenizer(
                chunk, padding=True, truncation=True,
                max_length=max_length, return_tensors="pt",
                return_special_tokens_mask=True,
            )
            special = enc.pop("special_tokens_mask")
            out = model(**enc)
            weights = enc["attention_mask"]
            if not include_special_tokens:
                weights = weights * (1 - special)
            pooled, kept = _pool(out.last_hidden_state, weights)
            rows.append(pooled.numpy())
            counts.append(kept.numpy())

    matrix = np.concatenate(rows).astype(np.float32)
    counts = np.concatenate(counts)
    zero = [int(i) for i in np.flatnonzero(counts == 0)]
    keep = np.flatnonzero(counts > 0)
    return matrix[keep], zero


def _code_labels(raw_labels):
    """Map raw label values to contiguous class ids; None stays unknown."""
    present = {v for v in raw_labels if v is not None}
    if all(isinstance(v, int) for v in present):
        names = sorted(present)
    else:
        names = sorted(present, key=str)
    ids = {v: i for i, v in enumerate(names)}
    coded = [UNKNOWN_LABEL if v is None else ids[v] for v in raw_labels]
    return coded, [str(v) for v in names]


def extract(rows, model_dir, embeddings_path, manifest_path, *,
            name, num_classes=None, max_length=256, batch_size=32,
            include_special_tokens=False) -> ExtractReport:
    """Write an embedding file and manifest for (text, label) rows.

    rows: sequence of (text, label-or-None). Labels may be any hashable
    values; they are coded to contiguous ids in sorted order. Rows whose
    text yields no poolable tokens are excluded from both files and
    recorded in the manifest under "excluded".
    """
    rows = list(rows)
    if not rows:
        raise ValidationError("no input rows")

    texts = [t for t, _ in rows]
    excluded = [(i, "empty text") for i, t in enumerate(texts)
                if not t or not t.strip()]
    dropped = {i for i, _ in excluded}
    candidates = [i for i in range(len(rows)) if i not in dropped]
    if not candidates:
        raise ValidationError("every input row has empty text")

    matrix, zero = embed_texts(
        [texts[i] for i in candidates], model_dir,
        max_length=max_length, batch_size=batch_size,
        include_special_tokens=include_special_tokens,
    )
    for pos in zero:
        excluded.append((candidates[pos], "no poolable tokens"))
        dropped.add(candidates[pos])
    kept = [i for i in candidates if i not in dropped]

    coded, class_names = _code_labels([rows[i][1] for i in kept])
    if num_classes is None and len(class_names) < 2:
        raise ValidationError(
            f"only {len(class_names)} distinct labels in the input; "
            "pass num_classes explicitly"
        )
    k = num_classes if num_classes is not None else len(class_names)
    if k < max(2, len(class_names)):
        raise ValidationError(
            f"num_classes={k} cannot hold {len(class_names)} observed "
            "classes (and must be at least 2)"
        )

    save_embeddings(EmbeddingMatrix(matrix), embeddings_path)
    doc = {
        "name": name,
        "n": len(kept),
        "num_classes": k,
        "labels": coded,
        "texts": [texts[i] for i in kept],
        "class_names": class_names,
        "excluded": [
            {"input_row": i, "reason": reason}
            for i, reason in sorted(excluded)
        ],
    }
    atomic_write_bytes(manifest_path, json.dumps(doc).encode("utf-8"))
    return ExtractReport(
        n=len(kept), d=matrix.shape[1], class_names=class_names,
        excluded=sorted(excluded),
    )
