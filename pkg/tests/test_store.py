import numpy as np
import pytest
from conftest import oracle_cosine, random_store

from ragcap import (
    CorruptHeaderError,
    CountMismatchError,
    DimMismatchError,
    DuplicateIdError,
    EmptyStoreError,
    StoreFormatError,
    ZeroVectorError,
    build_store,
    cosine_similarity,
    filter_by_source,
    load_store,
    merge_stores,
    save_store,
)
from ragcap.store import read_ingest_tsv, read_vector_table, write_vector_table


def _records(n=3, dim=4, seed=0, source="a"):
    rng = np.random.default_rng(seed)
    return [
        (f"r{i}", f"caption {i}", rng.normal(size=dim), source) for i in range(n)
    ]


class TestBuildStore:
    def test_basic_construction(self):
        store = build_store(_records(3, 4), label="demo")
        assert len(store) == 3
        assert store.dim == 4
        norms = np.linalg.norm(store.matrix.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() <= 1e-5
        assert store.ids == ("r0", "r1", "r2")

    def test_duplicate_id(self):
        records = _records(2)
        records.append(("r0", "again", np.ones(4), "a"))
        with pytest.raises(DuplicateIdError, match="r0"):
            build_store(records)

    def test_zero_vector_reports_id(self):
        records = _records(2)
        records.append(("bad", "zero", np.zeros(4), "a"))
        with pytest.raises(ZeroVectorError, match="bad"):
            build_store(records)

    def test_dim_mismatch_reports_id(self):
        records = _records(2)
        records.append(("odd", "short", np.ones(3), "a"))
        with pytest.raises(DimMismatchError, match="odd"):
            build_store(records)

    def test_empty(self):
        with pytest.raises(EmptyStoreError):
            build_store([])

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            build_store([("x", "", np.ones(2), "a")])

    def test_insertion_order_preserved(self):
        store = build_store(_records(10, 3, seed=2))
        assert list(store.ids) == [f"r{i}" for i in range(10)]

    def test_pairwise_matrix_matches_bruteforce_oracle(self):
        # full O(N^2) recomputation from the raw input vectors
        rng = np.random.default_rng(20240917)
        raw = [rng.normal(size=32) for _ in range(50)]
        store = build_store(
            [(f"fx{i:04d}", f"cap {i}", raw[i], "fixture") for i in range(50)]
        )
        for i in range(50):
            for j in range(50):
                got = cosine_similarity(store[i].embedding, store[j].embedding)
                assert got == pytest.approx(oracle_cosine(raw[i], raw[j]), abs=1e-6)


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path, fixture_store):
        base = tmp_path / "fixture"
        save_store(fixture_store, base)
        loaded = load_store(base)
        assert loaded.matrix.tobytes() == fixture_store.matrix.tobytes()
        assert loaded.ids == fixture_store.ids
        assert loaded.texts == fixture_store.texts
        assert loaded.sources == fixture_store.sources

    def test_round_trip_cosine_exactly_one(self, tmp_path, fixture_store):
        base = tmp_path / "fixture"
        save_store(fixture_store, base)
        loaded = load_store(base)
        for before, after in zip(fixture_store, loaded):
            assert cosine_similarity(before.embedding, after.embedding) == 1.0

    def test_escaping_round_trip(self, tmp_path):
        nasty = "tab\there newline\nhere backslash\\here cr\rdone"
        store = build_store(
            [("weird\tid", nasty, np.ones(3), "src\nwith newline")], label="x"
        )
        save_store(store, tmp_path / "s")
        loaded = load_store(tmp_path / "s")
        assert loaded.ids == ("weird\tid",)
        assert loaded.texts == (nasty,)
        assert loaded.sources == ("src\nwith newline",)

    def test_bad_magic(self, tmp_path, fixture_store):
        base = tmp_path / "s"
        save_store(fixture_store, base)
        data = bytearray((tmp_path / "s.bin").read_bytes())
        data[:4] = b"XXXX"
        (tmp_path / "s.bin").write_bytes(bytes(data))
        with pytest.raises(CorruptHeaderError):
            load_store(base)

    def test_bad_version(self, tmp_path, fixture_store):
        base = tmp_path / "s"
        save_store(fixture_store, base)
        data = bytearray((tmp_path / "s.bin").read_bytes())
        data[4] = 99
        (tmp_path / "s.bin").write_bytes(bytes(data))
        with pytest.raises(CorruptHeaderError):
            load_store(base)

    def test_count_mismatch_metadata(self, tmp_path, fixture_store):
        base = tmp_path / "s"
        save_store(fixture_store, base)
        lines = (tmp_path / "s.tsv").read_text().splitlines(keepends=True)
        (tmp_path / "s.tsv").write_text("".join(lines[:-1]))
        with pytest.raises(CountMismatchError):
            load_store(base)

    def test_truncated_payload(self, tmp_path, fixture_store):
        base = tmp_path / "s"
        save_store(fixture_store, base)
        data = (tmp_path / "s.bin").read_bytes()
        (tmp_path / "s.bin").write_bytes(data[:-8])
        with pytest.raises(CountMismatchError):
            load_store(base)

    def test_unit_norm_reverified_on_load(self, tmp_path, fixture_store):
        base = tmp_path / "s"
        save_store(fixture_store, base)
        data = bytearray((tmp_path / "s.bin").read_bytes())
        # double the first row in place
        row = np.frombuffer(bytes(data[20 : 20 + 4 * 32]), dtype="<f4") * 2.0
        data[20 : 20 + 4 * 32] = row.astype("<f4").tobytes()
        (tmp_path / "s.bin").write_bytes(bytes(data))
        with pytest.raises(StoreFormatError):
            load_store(base)

    def test_malformed_metadata_row(self, tmp_path, fixture_store):
        base = tmp_path / "s"
        save_store(fixture_store, base)
        raw = (tmp_path / "s.tsv").read_text().splitlines()
        raw[3] = "only-one-field"
        (tmp_path / "s.tsv").write_text("\n".join(raw) + "\n")
        with pytest.raises(StoreFormatError):
            load_store(base)

    def test_empty_store_round_trip(self, tmp_path, fixture_store):
        empty = filter_by_source(fixture_store, {"fixture"})
        assert len(empty) == 0
        save_store(empty, tmp_path / "e")
        loaded = load_store(tmp_path / "e")
        assert len(loaded) == 0
        assert loaded.dim == fixture_store.dim


class TestFilter:
    def test_excludes_sources(self):
        records = _records(3, 4, seed=1, source="A") + [
            (f"b{i}", f"b caption {i}", np.random.default_rng(i + 50).normal(size=4), "B")
            for i in range(2)
        ]
        store = build_store(records)
        out = filter_by_source(store, {"B"})
        assert len(out) == 3
        assert set(out.sources) == {"A"}

    def test_empty_exclusion_is_identity(self, fixture_store):
        out = filter_by_source(fixture_store, set())
        assert out.ids == fixture_store.ids
        assert out.matrix.tobytes() == fixture_store.matrix.tobytes()

    def test_exclude_all_warns(self, fixture_store, caplog):
        with caplog.at_level("WARNING"):
            out = filter_by_source(fixture_store, {"fixture"})
        assert len(out) == 0
        assert any("removed all" in message for message in caplog.messages)

    def test_composition(self):
        rng = np.random.default_rng(11)
        records = [
            (f"r{i}", f"cap {i}", rng.normal(size=4), src)
            for i, src in enumerate(["A", "B", "C", "A", "B", "C", "D"])
        ]
        store = build_store(records)
        twice = filter_by_source(filter_by_source(store, {"A"}), {"C"})
        union = filter_by_source(store, {"A", "C"})
        assert twice.ids == union.ids


class TestMerge:
    def test_concatenation_order(self):
        a = random_store(3, 4, seed=20, prefix="a", label="A")
        b = random_store(2, 4, seed=21, prefix="b", label="B")
        merged = merge_stores(a, b)
        assert merged.ids == a.ids + b.ids
        assert len(merged) == 5

    def test_self_merge_dedup(self, fixture_store):
        merged = merge_stores(fixture_store, fixture_store, dedup_on_text=True)
        assert len(merged) == len(fixture_store)
        assert merged.texts == fixture_store.texts

    def test_dedup_matches_text_set_oracle(self):
        rng = np.random.default_rng(22)
        a_recs = [(f"a{i}", f"shared text {i}" if i < 7 else f"a text {i}",
                   rng.normal(size=4), "A") for i in range(10)]
        b_recs = [(f"b{i}", f"shared text {i}" if i < 7 else f"b text {i}",
                   rng.normal(size=4), "B") for i in range(9)]
        a, b = build_store(a_recs), build_store(b_recs)
        merged = merge_stores(a, b, dedup_on_text=True)
        expected = len(set(a.texts) | set(b.texts))
        assert len(merged) == expected == len(a) + len(b) - 7

    def test_id_collision_suffixed(self, caplog):
        rng = np.random.default_rng(23)
        a = build_store([("x", "first", rng.normal(size=4), "A")])
        b = build_store([("x", "second", rng.normal(size=4), "B")])
        with caplog.at_level("WARNING"):
            merged = merge_stores(a, b)
        assert merged.ids == ("x", "x~1")
        assert len(merged) == 2

    def test_dim_mismatch(self):
        a = random_store(2, 4, seed=24)
        b = random_store(2, 5, seed=25)
        with pytest.raises(DimMismatchError):
            merge_stores(a, b)

    def test_associativity_without_dedup(self):
        a = random_store(3, 4, seed=26, prefix="a")
        b = random_store(2, 4, seed=27, prefix="b")
        c = random_store(4, 4, seed=28, prefix="c")
        left = merge_stores(merge_stores(a, b), c)
        right = merge_stores(a, merge_stores(b, c))
        assert left.ids == right.ids
        assert left.texts == right.texts
        assert left.matrix.tobytes() == right.matrix.tobytes()


class TestPlainTextFormats:
    def test_ingest_tsv(self, tmp_path):
        path = tmp_path / "in.tsv"
        path.write_text(
            "id1\tsrcA\t3,4\tthree four caption\n"
            "id2\tsrcB\t1,0\twith\\ttab inside\n",
            encoding="utf-8",
        )
        records = read_ingest_tsv(path)
        store = build_store(records)
        assert store.ids == ("id1", "id2")
        assert store.texts[1] == "with\ttab inside"
        np.testing.assert_allclose(store.matrix[0], [0.6, 0.8], atol=1e-7)

    def test_vector_table_round_trip(self, tmp_path):
        rng = np.random.default_rng(30)
        ids = ["q1", "q2", "q3"]
        matrix = rng.normal(size=(3, 5)).astype(np.float32)
        path = tmp_path / "v.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            write_vector_table(fh, ids, matrix)
        got_ids, got = read_vector_table(path)
        assert got_ids == ids
        np.testing.assert_array_equal(got, matrix)

    def test_vector_table_dim_mismatch(self, tmp_path):
        path = tmp_path / "v.tsv"
        path.write_text("a\t1,2\nb\t1,2,3\n", encoding="utf-8")
        with pytest.raises(DimMismatchError):
            read_vector_table(path)
