"""Pooling semantics and output-format contract."""

import json

import numpy as np
import pytest

from prepal.dataset import load_embeddings, load_manifest
from prepal.errors import ValidationError
from prepal_embedder import embed_texts, extract

DOCS = [
    ("the cat sat on the mat", "animal"),
    ("a dog ran fast", "animal"),
    ("the big red rug", "thing"),
    ("a small blue mat", "thing"),
    ("the slow dog sat", "animal"),
]


class TestEmbedTexts:
    def test_one_row_per_text_with_model_width(self, tiny_encoder):
        matrix, zero = embed_texts([t for t, _ in DOCS], tiny_encoder)
        assert matrix.shape == (5, 32)
        assert matrix.dtype == np.float32
        assert zero == []
        assert np.all(np.isfinite(matrix))

    def test_duplicate_texts_get_identical_rows(self, tiny_encoder):
        matrix, _ = embed_texts(
            ["the cat sat", "a dog ran", "the cat sat"], tiny_encoder)
        np.testing.assert_array_equal(matrix[0], matrix[2])
        assert not np.array_equal(matrix[0], matrix[1])

    def test_padding_positions_contribute_nothing(self, tiny_encoder):
        # the same text pooled alone and pooled inside a batch that pads
        # it to a longer length must agree
        text = "the small cat sat on the rug"
        alone, _ = embed_texts([text], tiny_encoder)
        padded, _ = embed_texts(
            [text, "the big red dog ran fast on the big red mat " * 3],
            tiny_encoder)
        np.testing.assert_allclose(alone[0], padded[0], atol=1e-5)

    def test_batch_boundaries_are_invisible(self, tiny_encoder):
        texts = [t for t, _ in DOCS]
        one_go, _ = embed_texts(texts, tiny_encoder, batch_size=32)
        chunked, _ = embed_texts(texts, tiny_encoder, batch_size=2)
        np.testing.assert_allclose(one_go, chunked, atol=1e-5)

    def test_all_special_text_is_reported_not_embedded(self, tiny_encoder):
        matrix, zero = embed_texts(["the cat", ""], tiny_encoder)
        assert matrix.shape[0] == 1
        assert zero == [1]

    def test_special_token_flag_changes_the_pooling(self, tiny_encoder):
        without, _ = embed_texts(["the cat sat"], tiny_encoder)
        with_cls, _ = embed_texts(["the cat sat"], tiny_encoder,
                                  include_special_tokens=True)
        assert float(np.max(np.abs(without[0] - with_cls[0]))) > 1e-4

    def test_empty_input_is_rejected(self, tiny_encoder):
        with pytest.raises(ValidationError):
            embed_texts([], tiny_encoder)


class TestExtract:
    def test_outputs_load_through_the_engine(self, tiny_encoder, tmp_path):
        emb_path = str(tmp_path / "docs.emb")
        man_path = str(tmp_path / "docs.json")
        report = extract(DOCS, tiny_encoder, emb_path, man_path,
                         name="docs")
        assert (report.n, report.d) == (5, 32)
        assert report.class_names == ["animal", "thing"]

        emb = load_embeddings(emb_path)
        man = load_manifest(man_path)
        assert (emb.n, emb.d) == (5, 32)
        assert man.name == "docs"
        assert man.num_classes == 2
        assert man.labels == [0, 0, 1, 1, 0]
        assert man.texts == [t for t, _ in DOCS]

    def test_excluded_rows_are_noted_in_the_manifest(self, tiny_encoder,
                                                     tmp_path):
        rows = [DOCS[0], ("", "animal"), DOCS[2], ("   ", None)]
        emb_path = str(tmp_path / "x.emb")
        man_path = str(tmp_path / "x.json")
        report = extract(rows, tiny_encoder, emb_path, man_path, name="x")
        assert report.n == 2
        assert report.excluded == [(1, "empty text"), (3, "empty text")]

        # the note survives in the JSON and the engine still loads it
        doc = json.loads(open(man_path).read())
        assert doc["excluded"] == [
            {"input_row": 1, "reason": "empty text"},
            {"input_row": 3, "reason": "empty text"},
        ]
        assert load_manifest(man_path).n == 2

    def test_unlabeled_rows_become_unknown(self, tiny_encoder, tmp_path):
        rows = [("the cat", "a"), ("a dog", None), ("the rug", "b")]
        extract(rows, tiny_encoder, str(tmp_path / "u.emb"),
                str(tmp_path / "u.json"), name="u")
        man = load_manifest(str(tmp_path / "u.json"))
        assert man.labels == [0, -1, 1]

    def test_fully_unlabeled_needs_an_explicit_class_count(
            self, tiny_encoder, tmp_path):
        rows = [("the cat", None), ("a dog", None)]
        with pytest.raises(ValidationError, match="num_classes"):
            extract(rows, tiny_encoder, str(tmp_path / "n.emb"),
                    str(tmp_path / "n.json"), name="n")
        extract(rows, tiny_encoder, str(tmp_path / "n.emb"),
                str(tmp_path / "n.json"), name="n", num_classes=3)
        man = load_manifest(str(tmp_path / "n.json"))
        assert man.num_classes == 3 and man.labels == [-1, -1]

    def test_class_count_must_hold_the_observed_labels(self, tiny_encoder,
                                                       tmp_path):
        rows = [("the cat", "a"), ("a dog", "b"), ("the rug", "c")]
        with pytest.raises(ValidationError, match="cannot hold"):
            extract(rows, tiny_encoder, str(tmp_path / "k.emb"),
                    str(tmp_path / "k.json"), name="k", num_classes=2)

    def test_integer_labels_sort_numerically(self, tiny_encoder, tmp_path):
        rows = [("the cat", 10), ("a dog", 2), ("the rug", 10)]
        report = extract(rows, tiny_encoder, str(tmp_path / "i.emb"),
                         str(tmp_path / "i.json"), name="i")
        assert report.class_names == ["2", "10"]
        assert load_manifest(str(tmp_path / "i.json")).labels == [1, 0, 1]

    def test_extraction_is_deterministic(self, tiny_encoder, tmp_path):
        for run in ("a", "b"):
            extract(DOCS, tiny_encoder, str(tmp_path / f"{run}.emb"),
                    str(tmp_path / f"{run}.json"), name="same")
        assert (tmp_path / "a.emb").read_bytes() == \
            (tmp_path / "b.emb").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == \
            (tmp_path / "b.json").read_bytes()
