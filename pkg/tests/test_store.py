import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgmatch.errors import (
    BadMagicError,
    DuplicateIdError,
    InvalidRecordError,
    ManifestError,
    TruncatedError,
    UsageError,
    VersionError,
)
from fgmatch.store import (
    CoarsePairs,
    EmbeddingTable,
    VocabDataset,
    VocabItem,
    coarse_digest,
    embedding_matrix,
    load_coarse,
    load_vocab,
    read_table,
    vocab_digest,
    write_coarse_manifest,
    write_table,
    write_vocab_manifest,
)


def make_table(rng, dim=4, n=6, prefix="e"):
    entries = {f"{prefix}-{i}": rng.standard_normal(dim).astype(np.float32) for i in range(n)}
    return EmbeddingTable(dim=dim, entries=entries)


def raw_file(tmp_path, name, version=1, dim=2, count=1, body=b""):
    """Hand-assemble an embedding file with an arbitrary record body."""
    path = tmp_path / name
    path.write_bytes(b"FGEB" + struct.pack("<IIQ", version, dim, count) + body)
    return path


def record(key: str, floats) -> bytes:
    kb = key.encode("utf-8")
    return struct.pack("<H", len(kb)) + kb + struct.pack(f"<{len(floats)}f", *floats)


class TestRoundTrip:
    def test_simple_round_trip(self, tmp_path, rng):
        table = make_table(rng)
        write_table(table, tmp_path / "t.fgeb")
        back = read_table(tmp_path / "t.fgeb")
        assert back.equals(table)
        assert back.content_digest() == table.content_digest()

    def test_empty_table(self, tmp_path):
        table = EmbeddingTable(dim=3, entries={})
        write_table(table, tmp_path / "t.fgeb")
        back = read_table(tmp_path / "t.fgeb")
        assert len(back) == 0
        assert back.dim == 3

    def test_dim_one(self, tmp_path):
        table = EmbeddingTable(dim=1, entries={"only": [2.5]})
        write_table(table, tmp_path / "t.fgeb")
        back = read_table(tmp_path / "t.fgeb")
        assert back.vector("only")[0] == pytest.approx(2.5)

    def test_unicode_ids(self, tmp_path):
        table = EmbeddingTable(dim=2, entries={"кадр-1": [1.0, 2.0], "枠": [3.0, 4.0]})
        write_table(table, tmp_path / "t.fgeb")
        assert read_table(tmp_path / "t.fgeb").equals(table)

    def test_write_read_write_is_byte_stable(self, tmp_path, rng):
        table = make_table(rng, dim=5, n=9)
        write_table(table, tmp_path / "a.fgeb")
        write_table(read_table(tmp_path / "a.fgeb"), tmp_path / "b.fgeb")
        assert (tmp_path / "a.fgeb").read_bytes() == (tmp_path / "b.fgeb").read_bytes()

    def test_record_order_does_not_affect_equality(self, tmp_path, rng):
        vecs = {f"k{i}": rng.standard_normal(3).astype(np.float32) for i in range(4)}
        fwd = EmbeddingTable(dim=3, entries=vecs)
        rev = EmbeddingTable(dim=3, entries=dict(reversed(list(vecs.items()))))
        write_table(fwd, tmp_path / "f.fgeb")
        write_table(rev, tmp_path / "r.fgeb")
        assert (tmp_path / "f.fgeb").read_bytes() != (tmp_path / "r.fgeb").read_bytes()
        a, b = read_table(tmp_path / "f.fgeb"), read_table(tmp_path / "r.fgeb")
        assert a.equals(b)
        assert a.content_digest() == b.content_digest()

    @given(dim=st.integers(1, 8), n=st.integers(0, 12), seed=st.integers(0, 2**16))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, dim, n, seed):
        gen = np.random.default_rng(seed)
        table = make_table(gen, dim=dim, n=n, prefix=f"id{seed}")
        path = tmp_path_factory.mktemp("rt") / "t.fgeb"
        write_table(table, path)
        assert read_table(path).equals(table)


class TestReadErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.fgeb"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(BadMagicError):
            read_table(path)

    def test_tiny_file(self, tmp_path):
        path = tmp_path / "x.fgeb"
        path.write_bytes(b"FG")
        with pytest.raises(BadMagicError):
            read_table(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "x.fgeb"
        path.write_bytes(b"FGEB" + b"\x01\x00\x00\x00")
        with pytest.raises(TruncatedError):
            read_table(path)

    def test_unsupported_version(self, tmp_path):
        path = raw_file(tmp_path, "x.fgeb", version=2, dim=2, count=0)
        with pytest.raises(VersionError):
            read_table(path)

    def test_zero_dim(self, tmp_path):
        path = raw_file(tmp_path, "x.fgeb", dim=0, count=0)
        with pytest.raises(InvalidRecordError):
            read_table(path)

    def test_record_missing_floats(self, tmp_path):
        # dim says 4 but the only record carries 3 floats
        path = raw_file(tmp_path, "x.fgeb", dim=4, count=1,
                        body=record("a", [1.0, 2.0, 3.0]))
        with pytest.raises(TruncatedError):
            read_table(path)

    def test_count_larger_than_body(self, tmp_path):
        path = raw_file(tmp_path, "x.fgeb", dim=2, count=3,
                        body=record("a", [1.0, 2.0]))
        with pytest.raises(TruncatedError):
            read_table(path)

    def test_empty_id(self, tmp_path):
        path = raw_file(tmp_path, "x.fgeb", dim=2, count=1,
                        body=struct.pack("<H", 0) + struct.pack("<2f", 1.0, 2.0))
        with pytest.raises(InvalidRecordError):
            read_table(path)

    def test_duplicate_id(self, tmp_path):
        body = record("same", [1.0, 2.0]) + record("same", [3.0, 4.0])
        path = raw_file(tmp_path, "x.fgeb", dim=2, count=2, body=body)
        with pytest.raises(DuplicateIdError):
            read_table(path)

    def test_trailing_bytes(self, tmp_path):
        body = record("a", [1.0, 2.0]) + b"junk"
        path = raw_file(tmp_path, "x.fgeb", dim=2, count=1, body=body)
        with pytest.raises(InvalidRecordError, match="trailing"):
            read_table(path)

    def test_non_finite_payload(self, tmp_path):
        body = record("a", [1.0, float("nan")])
        path = raw_file(tmp_path, "x.fgeb", dim=2, count=1, body=body)
        with pytest.raises(InvalidRecordError):
            read_table(path)


class TestTableValidation:
    def test_nonpositive_dim(self):
        with pytest.raises(UsageError):
            EmbeddingTable(dim=0, entries={})

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            EmbeddingTable(dim=3, entries={"a": [1.0, 2.0]})

    def test_empty_id_rejected(self):
        with pytest.raises(InvalidRecordError):
            EmbeddingTable(dim=1, entries={"": [1.0]})

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidRecordError):
            EmbeddingTable(dim=2, entries={"a": [1.0, float("inf")]})

    def test_entries_frozen(self):
        table = EmbeddingTable(dim=2, entries={"a": [1.0, 2.0]})
        with pytest.raises(ValueError):
            table.vector("a")[0] = 9.0

    def test_contains_and_len(self):
        table = EmbeddingTable(dim=1, entries={"a": [1.0], "b": [2.0]})
        assert "a" in table and "c" not in table
        assert len(table) == 2

    def test_digest_sensitive_to_payload(self):
        t1 = EmbeddingTable(dim=2, entries={"a": [1.0, 2.0]})
        t2 = EmbeddingTable(dim=2, entries={"a": [1.0, 2.5]})
        assert t1.content_digest() != t2.content_digest()


class TestPairStructures:
    def test_duplicate_image_rejected(self):
        with pytest.raises(ManifestError, match="img-1"):
            CoarsePairs(split="train", items=[("img-1", ("c",)), ("img-1", ("d",))])

    def test_captionless_image_rejected(self):
        with pytest.raises(ManifestError):
            CoarsePairs(split="train", items=[("img-1", ())])

    def test_caption_ids_flattens_in_order(self):
        pairs = CoarsePairs(split="x", items=[("i0", ("a", "b")), ("i1", ("c",))])
        assert pairs.caption_ids() == ["a", "b", "c"]

    def test_unknown_benchmark(self):
        with pytest.raises(ManifestError, match="nonsense"):
            VocabDataset(benchmark="nonsense", n_negatives=10, items=[])

    def test_named_benchmark_enforces_vocab_size(self):
        items = [VocabItem("c", "p", ("n1", "n2"))]
        VocabDataset(benchmark="transparency", n_negatives=2, items=items)
        with pytest.raises(ManifestError, match="transparency"):
            VocabDataset(benchmark="transparency", n_negatives=10,
                         items=[VocabItem("c", "p", tuple(f"n{i}" for i in range(10)))])

    def test_custom_benchmark_accepts_any_width(self):
        items = [VocabItem("c", "p", tuple(f"n{i}" for i in range(7)))]
        assert VocabDataset(benchmark="custom", n_negatives=7, items=items).vocab_size == 8

    def test_mixed_negative_counts_rejected(self):
        items = [VocabItem("c1", "p1", ("a", "b")),
                 VocabItem("c2", "p2", ("a",))]
        with pytest.raises(ManifestError, match="c2"):
            VocabDataset(benchmark="custom", n_negatives=2, items=items)

    def test_positive_among_negatives_rejected(self):
        items = [VocabItem("c1", "p1", ("p1", "b"))]
        with pytest.raises(ManifestError, match="c1"):
            VocabDataset(benchmark="custom", n_negatives=2, items=items)

    def test_zero_negatives_rejected(self):
        with pytest.raises(ManifestError):
            VocabDataset(benchmark="custom", n_negatives=0, items=[])


def write_coarse_fixture(tmp_path, rng, dim=3):
    images = make_table(rng, dim=dim, n=2, prefix="img")
    texts = make_table(rng, dim=dim, n=3, prefix="cap")
    write_table(images, tmp_path / "img.fgeb")
    write_table(texts, tmp_path / "txt.fgeb")
    pairs = CoarsePairs(split="train",
                        items=[("img-0", ("cap-0", "cap-1")), ("img-1", ("cap-2",))])
    write_coarse_manifest(tmp_path / "coarse.json", dim, "img.fgeb", "txt.fgeb", pairs)
    return pairs, images, texts


def write_vocab_fixture(tmp_path, rng, dim=3):
    images = make_table(rng, dim=dim, n=2, prefix="crop")
    texts = make_table(rng, dim=dim, n=6, prefix="w")
    write_table(images, tmp_path / "img.fgeb")
    write_table(texts, tmp_path / "txt.fgeb")
    vocab = VocabDataset(benchmark="custom", n_negatives=2, items=[
        VocabItem("crop-0", "w-0", ("w-1", "w-2")),
        VocabItem("crop-1", "w-3", ("w-4", "w-5")),
    ])
    write_vocab_manifest(tmp_path / "vocab.json", dim, "img.fgeb", "txt.fgeb", vocab)
    return vocab, images, texts


class TestManifests:
    def test_coarse_round_trip(self, tmp_path, rng):
        pairs, images, texts = write_coarse_fixture(tmp_path, rng)
        got_pairs, got_images, got_texts = load_coarse(tmp_path / "coarse.json")
        assert got_pairs.items == pairs.items
        assert got_pairs.split == "train"
        assert got_images.equals(images)
        assert got_texts.equals(texts)

    def test_vocab_round_trip(self, tmp_path, rng):
        vocab, images, texts = write_vocab_fixture(tmp_path, rng)
        got_vocab, got_images, got_texts = load_vocab(tmp_path / "vocab.json")
        assert got_vocab.items == vocab.items
        assert got_vocab.benchmark == "custom"
        assert got_vocab.n_negatives == 2
        assert got_images.equals(images)

    def test_tables_resolved_relative_to_manifest(self, tmp_path, rng):
        sub = tmp_path / "nested"
        sub.mkdir()
        write_coarse_fixture(sub, rng)
        pairs, _, _ = load_coarse(sub / "coarse.json")
        assert len(pairs.items) == 2

    def test_dangling_image_id_named(self, tmp_path, rng):
        _, images, texts = write_coarse_fixture(tmp_path, rng)
        bad = CoarsePairs(split="train", items=[("img-9", ("cap-0",))])
        write_coarse_manifest(tmp_path / "bad.json", 3, "img.fgeb", "txt.fgeb", bad)
        with pytest.raises(ManifestError, match="img-9"):
            load_coarse(tmp_path / "bad.json")

    def test_dangling_caption_id_named(self, tmp_path, rng):
        write_coarse_fixture(tmp_path, rng)
        bad = CoarsePairs(split="train", items=[("img-0", ("cap-77",))])
        write_coarse_manifest(tmp_path / "bad.json", 3, "img.fgeb", "txt.fgeb", bad)
        with pytest.raises(ManifestError, match="cap-77"):
            load_coarse(tmp_path / "bad.json")

    def test_dangling_vocab_ids_named(self, tmp_path, rng):
        write_vocab_fixture(tmp_path, rng)
        vocab = VocabDataset(benchmark="custom", n_negatives=2,
                             items=[VocabItem("crop-0", "w-0", ("w-1", "w-99"))])
        write_vocab_manifest(tmp_path / "bad.json", 3, "img.fgeb", "txt.fgeb", vocab)
        with pytest.raises(ManifestError, match="w-99"):
            load_vocab(tmp_path / "bad.json")

    def test_missing_manifest_file(self, tmp_path):
        with pytest.raises(ManifestError):
            load_coarse(tmp_path / "absent.json")

    def test_unparseable_manifest(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_coarse(tmp_path / "bad.json")

    def test_non_object_manifest(self, tmp_path):
        (tmp_path / "bad.json").write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ManifestError):
            load_coarse(tmp_path / "bad.json")

    def test_missing_required_key(self, tmp_path, rng):
        write_coarse_fixture(tmp_path, rng)
        import json
        doc = json.loads((tmp_path / "coarse.json").read_text())
        del doc["image_table"]
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="image_table"):
            load_coarse(tmp_path / "bad.json")

    def test_missing_pairs_section(self, tmp_path, rng):
        write_coarse_fixture(tmp_path, rng)
        import json
        doc = json.loads((tmp_path / "coarse.json").read_text())
        del doc["pairs"]
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="pairs"):
            load_coarse(tmp_path / "bad.json")

    def test_dim_mismatch_with_tables(self, tmp_path, rng):
        pairs, _, _ = write_coarse_fixture(tmp_path, rng, dim=3)
        write_coarse_manifest(tmp_path / "bad.json", 4, "img.fgeb", "txt.fgeb", pairs)
        with pytest.raises(ManifestError, match="dim"):
            load_coarse(tmp_path / "bad.json")

    def test_coarse_manifest_on_vocab_loader(self, tmp_path, rng):
        write_coarse_fixture(tmp_path, rng)
        with pytest.raises(ManifestError, match="vocab_items"):
            load_vocab(tmp_path / "coarse.json")


class TestMatrixAndDigests:
    def test_embedding_matrix_orders_rows(self, rng):
        table = EmbeddingTable(dim=2, entries={"a": [1.0, 0.0], "b": [0.0, 2.0]})
        mat = embedding_matrix(table, ["b", "a"], normalize=False)
        assert mat.dtype == np.float64
        assert np.allclose(mat, [[0.0, 2.0], [1.0, 0.0]])

    def test_embedding_matrix_normalizes(self, rng):
        table = EmbeddingTable(dim=2, entries={"a": [3.0, 4.0]})
        mat = embedding_matrix(table, ["a"], normalize=True)
        assert np.allclose(np.linalg.norm(mat, axis=1), 1.0)

    def test_embedding_matrix_names_zero_row(self):
        from fgmatch.errors import DomainError

        table = EmbeddingTable(dim=2, entries={"ok": [1.0, 0.0], "dead": [0.0, 0.0]})
        with pytest.raises(DomainError, match="dead"):
            embedding_matrix(table, ["ok", "dead"], normalize=True)

    def test_coarse_digest_tracks_payload(self, tmp_path, rng):
        pairs, images, texts = write_coarse_fixture(tmp_path, rng)
        base = coarse_digest(pairs, images, texts)
        entries = dict(images.entries)
        entries["img-0"] = np.asarray(entries["img-0"]) + 1.0
        changed = EmbeddingTable(dim=images.dim, entries=entries)
        assert coarse_digest(pairs, changed, texts) != base

    def test_vocab_digest_stable_across_reload(self, tmp_path, rng):
        vocab, images, texts = write_vocab_fixture(tmp_path, rng)
        before = vocab_digest(vocab, images, texts)
        got_vocab, got_images, got_texts = load_vocab(tmp_path / "vocab.json")
        assert vocab_digest(got_vocab, got_images, got_texts) == before
