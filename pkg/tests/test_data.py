import itertools

import numpy as np
import pytest

from fairprobe.data import (Attribute, AttributeSchema, TabularDataset, clip, first_variant,
                            flip_variants, in_domain, is_valid_pair, kmeans_seeds, load_csv,
                            load_schema, make_pairs, save_csv, save_schema)
from fairprobe.errors import EmptyDataset, ParseError, SchemaMismatch

from conftest import tiny_schema


def write(path, text):
    path.write_text(text)
    return path


class TestSchema:
    def test_partition(self, schema):
        assert schema.sensitive == {"s"}
        assert schema.non_sensitive == {"a0", "a1", "a2"}
        assert schema.sensitive.isdisjoint(schema.non_sensitive)
        np.testing.assert_array_equal(schema.sensitive_idx, [3])

    def test_needs_sensitive(self):
        with pytest.raises(SchemaMismatch):
            AttributeSchema((Attribute("a", 0, 1),))

    def test_min_le_max(self):
        with pytest.raises(SchemaMismatch):
            Attribute("a", 3, 1)

    def test_sensitive_domain_size(self):
        with pytest.raises(SchemaMismatch):
            AttributeSchema((Attribute("s", 1, 1, sensitive=True),))

    def test_json_round_trip(self, tmp_path, schema):
        save_schema(schema, tmp_path / "s.json")
        assert load_schema(tmp_path / "s.json") == schema

    def test_with_sensitive(self, schema):
        s2 = schema.with_sensitive(["a0", "s"])
        assert s2.sensitive == {"a0", "s"}
        with pytest.raises(SchemaMismatch):
            schema.with_sensitive(["nope"])


class TestLoadCsv:
    def test_well_formed(self, tmp_path, schema):
        p = write(tmp_path / "d.csv", "a0,a1,a2,s,label\n1,2,3,0,1\n4,5,6,1,0\n7,8,9,0,1\n")
        ds = load_csv(p, schema)
        assert len(ds) == 3
        np.testing.assert_array_equal(ds.X[1], [4, 5, 6, 1])
        np.testing.assert_array_equal(ds.y, [1, 0, 1])

    def test_clips_below_min(self, tmp_path, schema):
        p = write(tmp_path / "d.csv", "a0,a1,a2,s\n-4,2,12,0\n")
        np.testing.assert_array_equal(load_csv(p, schema).X[0], [0, 2, 9, 0])

    def test_column_order_follows_schema(self, tmp_path, schema):
        p = write(tmp_path / "d.csv", "s,a2,a1,a0\n1,3,2,1\n")
        np.testing.assert_array_equal(load_csv(p, schema).X[0], [1, 2, 3, 1])

    def test_missing_column(self, tmp_path, schema):
        p = write(tmp_path / "d.csv", "a0,a1,s\n1,2,0\n")
        with pytest.raises(SchemaMismatch):
            load_csv(p, schema)

    def test_parse_error_location(self, tmp_path, schema):
        p = write(tmp_path / "d.csv", "a0,a1,a2,s\n1,2,3,0\n1,x,3,0\n")
        with pytest.raises(ParseError) as info:
            load_csv(p, schema)
        assert info.value.row == 3 and info.value.column == "a1"

    def test_round_trip(self, tmp_path, schema):
        ds = TabularDataset(schema, np.array([[1.0, 2, 3, 0], [9, 0, 1, 1]]), np.array([0, 1]))
        save_csv(ds, tmp_path / "d.csv")
        back = load_csv(tmp_path / "d.csv", schema)
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)


class TestClip:
    def test_in_domain_unchanged(self, schema):
        x = np.array([1.0, 2, 3, 1])
        np.testing.assert_array_equal(clip(x, schema), x)

    def test_clamp(self):
        sch = AttributeSchema((Attribute("age", 17, 90), Attribute("s", 0, 1, True)))
        np.testing.assert_array_equal(clip([150, 0], sch), [90, 0])

    def test_rounds(self, schema):
        np.testing.assert_array_equal(clip([3.4, 2.5, 3.5, 0.6], schema), [3, 2, 4, 1])

    def test_idempotent(self, schema):
        x = np.random.default_rng(0).uniform(-5, 15, size=(50, 4))
        once = clip(x, schema)
        np.testing.assert_array_equal(clip(once, schema), once)
        assert in_domain(once, schema)


class TestFlipVariants:
    def test_binary(self, schema):
        v = flip_variants(np.array([1.0, 2, 3, 0]), schema)
        np.testing.assert_array_equal(v, [[1, 2, 3, 1]])

    def test_multi_valued(self):
        sch = AttributeSchema((Attribute("x", 0, 5), Attribute("age", 1, 9, True)))
        v = flip_variants(np.array([2.0, 3]), sch)
        assert len(v) == 8
        assert 3 not in v[:, 1] and np.all(v[:, 0] == 2)

    def test_two_sensitive_brute_force(self):
        sch = AttributeSchema((Attribute("x", 0, 5), Attribute("s1", 0, 1, True),
                               Attribute("s2", 0, 1, True)))
        x = np.array([4.0, 0, 0])
        oracle = sorted(c for c in itertools.product([0, 1], [0, 1]) if c != (0, 0))
        got = sorted(tuple(int(v) for v in row[1:]) for row in flip_variants(x, sch))
        assert got == oracle

    def test_first_variant_matches(self):
        sch = AttributeSchema((Attribute("x", 0, 5), Attribute("s1", 0, 2, True),
                               Attribute("s2", 0, 1, True)))
        X = np.array([[1.0, 0, 0], [2, 2, 1], [3, 0, 1]])
        for row, fv in zip(X, first_variant(X, sch)):
            np.testing.assert_array_equal(fv, flip_variants(row, sch)[0])

    def test_pairs_valid(self):
        sch = tiny_schema(sens_max=3)
        X = np.random.default_rng(0).integers(0, 4, size=(20, 4)).astype(float)
        A, B = make_pairs(X, sch)
        assert A.shape == (60, 4)
        assert all(is_valid_pair(a, b, sch) for a, b in zip(A, B))
        assert not is_valid_pair(A[0], A[0], sch)


class TestKMeansSeeds:
    def test_single_cluster_is_seeded_order(self):
        X = np.arange(40.0).reshape(20, 2)
        seeds = kmeans_seeds(X, 1, 5, rng_seed=3)
        np.testing.assert_array_equal(seeds, np.random.default_rng(3).permutation(20)[:5])

    def test_two_blobs_alternate(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(0, 0.1, size=(30, 2)), rng.normal(10, 0.1, size=(30, 2))])
        seeds = kmeans_seeds(X, 2, 20, rng_seed=0)
        blob = (seeds >= 30).astype(int)
        assert np.all(blob[::2] != blob[1::2])
        assert len(set(seeds.tolist())) == 20

    def test_round_robin_exhausts(self):
        X = np.vstack([np.zeros((2, 2)), np.full((6, 2), 10.0)]) + \
            np.random.default_rng(0).normal(0, 0.01, size=(8, 2))
        seeds = kmeans_seeds(X, 2, 8, rng_seed=0)
        assert sorted(seeds.tolist()) == list(range(8))

    def test_deterministic(self):
        X = np.random.default_rng(1).normal(size=(100, 3))
        np.testing.assert_array_equal(kmeans_seeds(X, 4, 50, 7), kmeans_seeds(X, 4, 50, 7))

    def test_errors(self):
        with pytest.raises(EmptyDataset):
            kmeans_seeds(np.zeros((0, 3)), 1, 5)
        with pytest.raises(ValueError):
            kmeans_seeds(np.zeros((2, 3)), 3, 5)


class TestSplit:
    def test_fractions(self, schema):
        ds = TabularDataset(schema, np.zeros((100, 4)), np.zeros(100, dtype=int))
        tr, va, te = ds.split(0)
        assert (len(tr), len(va), len(te)) == (70, 10, 20)
