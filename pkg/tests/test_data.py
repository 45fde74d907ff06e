import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaechoice.data import (
    ROUTE_SCHEMA,
    AttributeSchema,
    Corpus,
    denormalize,
    fit_normalization,
    load_csv,
    normalize,
    read_metadata,
    split,
    synth_corpus,
    write_csv,
    write_metadata,
)
from vaechoice.errors import ConfigError, ParseError, SchemaError, ValidationError


@pytest.fixture(scope="module")
def big_corpus():
    return synth_corpus(100_000, seed=7)


def _write_raw(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


class TestSchema:
    def test_table1_has_nine_attributes(self):
        assert len(ROUTE_SCHEMA) == 9
        assert ROUTE_SCHEMA.index("Route time detour") == 2

    def test_zero_std_rejected(self):
        with pytest.raises(SchemaError):
            AttributeSchema(("a", "b"), [0.0, 1.0], [1.0, 0.0])

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError):
            AttributeSchema(("a", "a"), [0.0, 1.0], [1.0, 1.0])

    def test_length_detour_mean_maps_to_zero(self):
        x = ROUTE_SCHEMA.means.copy()
        assert x[1] == 1.11
        z = normalize(x, ROUTE_SCHEMA)
        assert z[1] == 0.0
        x[1] = 1.11 + 0.21
        assert normalize(x, ROUTE_SCHEMA)[1] == pytest.approx(1.0, abs=1e-14)


class TestCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "c.csv"
        rows = [[0.1 * (i + 1)] * 9 for i in range(3)]
        _write_raw(p, ROUTE_SCHEMA.names, rows)
        c = load_csv(p)
        assert len(c) == 3
        np.testing.assert_array_equal(c.values, rows)

    def test_header_order_insensitive(self, tmp_path):
        p = tmp_path / "c.csv"
        names = list(reversed(ROUTE_SCHEMA.names))
        _write_raw(p, names, [list(range(9))])
        c = load_csv(p)
        np.testing.assert_array_equal(c.values[0], list(reversed(range(9))))

    def test_missing_column_named(self, tmp_path):
        p = tmp_path / "c.csv"
        names = [n for n in ROUTE_SCHEMA.names if n != "Route time detour"]
        _write_raw(p, names, [[1.0] * 8])
        with pytest.raises(SchemaError, match="Route time detour"):
            load_csv(p)

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "c.csv"
        rows = [[1.0] * 9, [1.0] * 4 + ["abc"] + [1.0] * 4]
        _write_raw(p, ROUTE_SCHEMA.names, rows)
        with pytest.raises(ParseError) as info:
            load_csv(p)
        assert info.value.row == 3
        assert info.value.column == ROUTE_SCHEMA.names[4]

    def test_negative_value(self, tmp_path):
        p = tmp_path / "c.csv"
        _write_raw(p, ROUTE_SCHEMA.names, [[1.0] * 8 + [-0.5]])
        with pytest.raises(ValidationError):
            load_csv(p)

    def test_round_trip_bit_exact(self, tmp_path):
        c = split(synth_corpus(500, seed=3), 0.8, seed=1)
        p = tmp_path / "rt.csv"
        write_csv(c, p)
        back = load_csv(p)
        np.testing.assert_array_equal(back.values, c.values)
        np.testing.assert_array_equal(back.split, c.split)

    @settings(max_examples=30)
    @given(st.lists(st.floats(0, 1e6, allow_nan=False, allow_infinity=False), min_size=9, max_size=90))
    def test_round_trip_any_floats(self, tmp_path_factory, xs):
        n = len(xs) // 9
        vals = np.array(xs[: 9 * n]).reshape(n, 9)
        p = tmp_path_factory.mktemp("rt") / "c.csv"
        write_csv(Corpus(vals), p)
        np.testing.assert_array_equal(load_csv(p).values, vals)

    def test_metadata_sidecar(self, tmp_path):
        p = tmp_path / "meta.json"
        write_metadata(p, ROUTE_SCHEMA, split_seed=4, train_fraction=0.8)
        schema, extra = read_metadata(p)
        assert schema.names == ROUTE_SCHEMA.names
        np.testing.assert_array_equal(schema.stds, ROUTE_SCHEMA.stds)
        assert extra == {"split_seed": 4, "train_fraction": 0.8}


class TestNormalization:
    def test_inverse_pair(self):
        c = split(synth_corpus(300, seed=2), 0.8, seed=0)
        s = fit_normalization(c)
        back = denormalize(normalize(c.values, s), s)
        np.testing.assert_allclose(back, c.values, atol=1e-12, rtol=0)

    def test_training_moments(self):
        c = split(synth_corpus(300, seed=2), 0.8, seed=0)
        s = fit_normalization(c)
        z = normalize(c.train, s)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0, ddof=1), 1.0, atol=1e-12)

    def test_depends_on_training_split_only(self):
        c = split(synth_corpus(300, seed=2), 0.8, seed=0)
        s = fit_normalization(c)
        values = c.values.copy()
        values[c.split == "test"] *= 3.0
        s2 = fit_normalization(Corpus(values, c.names, c.split))
        np.testing.assert_array_equal(s.means, s2.means)
        np.testing.assert_array_equal(s.stds, s2.stds)

    def test_denormalize_clamps(self):
        z = np.full(9, -100.0)
        np.testing.assert_array_equal(denormalize(z, ROUTE_SCHEMA), 0.0)

    def test_constant_column_is_schema_error(self):
        vals = np.ones((10, 9))
        with pytest.raises(SchemaError):
            fit_normalization(Corpus(vals))


class TestSplit:
    def test_reference_split_sizes(self):
        c = split(Corpus(np.ones((5002, 9))), 0.8, seed=0)
        assert (c.split == "train").sum() == 4001  # floor(5002 * 0.8)
        assert (c.split == "test").sum() == 1001

    def test_deterministic(self):
        c = Corpus(np.ones((50, 9)))
        np.testing.assert_array_equal(split(c, 0.5, 9).split, split(c, 0.5, 9).split)

    @pytest.mark.parametrize("f", [0.0, 1.0, -0.2, 1.5])
    def test_fraction_out_of_range(self, f):
        with pytest.raises(ConfigError):
            split(Corpus(np.ones((5, 9))), f, 0)

    @given(st.integers(1, 300), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
    def test_partition(self, n, f, seed):
        c = split(Corpus(np.arange(n * 9.0).reshape(n, 9)), f, seed)
        train, test = set(map(tuple, c.train)), set(map(tuple, c.test))
        assert not train & test
        assert len(train) + len(test) == n
        assert len(train) == int(np.floor(n * f))


class TestSynth:
    def test_time_detour_mean(self, big_corpus):
        j = ROUTE_SCHEMA.index("Route time detour")
        assert abs(big_corpus.values[:, j].mean() / 1.08 - 1) < 0.02

    def test_all_marginals_calibrated(self, big_corpus):
        v = big_corpus.values
        np.testing.assert_array_less(np.abs(v.mean(axis=0) / ROUTE_SCHEMA.means - 1), 0.02)
        np.testing.assert_array_less(np.abs(v.std(axis=0) / ROUTE_SCHEMA.stds - 1), 0.02)

    def test_non_negative(self, big_corpus):
        assert np.all(big_corpus.values >= 0)

    def test_deterministic(self):
        np.testing.assert_array_equal(synth_corpus(200, 5).values, synth_corpus(200, 5).values)

    def test_clusters_are_distinct(self, big_corpus):
        z = normalize(big_corpus.values, ROUTE_SCHEMA)
        labels = big_corpus.meta["cluster"]
        centers = np.stack([z[labels == k].mean(axis=0) for k in range(3)])
        assert np.min(np.abs(centers[:, None] - centers[None]).sum(-1)[np.triu_indices(3, 1)]) > 3.0

    def test_invalid_size(self):
        with pytest.raises(ConfigError):
            synth_corpus(0, 1)
