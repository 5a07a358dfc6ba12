import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpfa.dataset import (
    AttemptRecord,
    ColumnSchema,
    canonicalize,
    export_csv,
    from_sequences,
    ingest_csv,
    summarize,
)
from rpfa.errors import EmptyInputError, OrderingError, ParseError, SchemaError, ValidationError
from rpfa.simulators import PopulationConfig, simulate_bkt2


def _csv(text):
    return io.BytesIO(text.encode())


class TestIngest:
    def test_three_rows_one_sequence(self):
        ds = ingest_csv(_csv("student,kc,opportunity,outcome\ns1,k1,1,0\ns1,k1,2,1\ns1,k1,3,1\n"))
        assert ds.n_attempts == 3
        assert list(ds.sequences) == [("s1", "k1")]
        assert ds.sequences["s1", "k1"].outcomes == (0, 1, 1)

    def test_bad_outcome_reports_row(self):
        rows = "".join(f"s1,k1,{t},1\n" for t in range(1, 5)) + "s1,k1,5,2\n"
        with pytest.raises(ParseError) as err:
            ingest_csv(_csv("student,kc,opportunity,outcome\n" + rows))
        assert err.value.row == 5
        assert "row 5" in str(err.value)

    def test_missing_column_named(self):
        with pytest.raises(SchemaError) as err:
            ingest_csv(_csv("student,skill,outcome\ns1,k1,1\n"))
        assert err.value.column == "kc"

    def test_duplicate_opportunity(self):
        with pytest.raises(ValidationError):
            ingest_csv(_csv("student,kc,opportunity,outcome\ns1,k1,1,0\ns1,k1,1,1\n"))

    def test_custom_schema_and_order_key(self):
        text = "user,skill,correct,ts\nu,a,1,10\nu,a,0,3\nu,a,1,7\n"
        schema = ColumnSchema(student="user", kc="skill", outcome="correct", opportunity=None, order_key="ts")
        ds = ingest_csv(io.StringIO(text), schema)
        assert ds.sequences["u", "a"].outcomes == (0, 1, 1)

    def test_text_tokens_and_comments(self):
        ds = ingest_csv(_csv("# produced elsewhere\nstudent,kc,outcome\ns,k,true\n"))
        assert ds.sequences["s", "k"].outcomes == (1,)

    def test_bkt2_export_round_trip(self, tmp_path):
        ds = simulate_bkt2(PopulationConfig(n_kcs=8, n_students=60, seed=3))
        path = tmp_path / "log.csv"
        export_csv(ds, str(path))
        assert ingest_csv(str(path)) == ds

    def test_shuffled_export_is_identical(self):
        ds = simulate_bkt2(PopulationConfig(n_kcs=8, n_students=60, seed=4))
        buf = io.StringIO()
        export_csv(ds, buf)
        header, *rows = buf.getvalue().splitlines()
        random.Random(0).shuffle(rows)
        assert ingest_csv(io.StringIO("\n".join([header, *rows]) + "\n")) == ds


class TestCanonicalize:
    def test_order_keys_sort_then_renumber(self):
        recs = [AttemptRecord("s", "k", 1, order_key=10), AttemptRecord("s", "k", 0, order_key=3),
                AttemptRecord("s", "k", 1, order_key=7)]
        ds = canonicalize(recs)
        assert ds.sequences["s", "k"].outcomes == (0, 1, 1)
        assert [r.opportunity for r in ds.records] == [1, 2, 3]

    def test_gappy_opportunities_renumbered(self):
        recs = [AttemptRecord("s", "k", 1, opportunity=9), AttemptRecord("s", "k", 0, opportunity=4)]
        ds = canonicalize(recs)
        assert [(r.opportunity, r.outcome) for r in ds.records] == [(1, 0), (2, 1)]

    def test_single_record_without_keys(self):
        ds = canonicalize([AttemptRecord("s", "k", 1)])
        assert ds.sequences["s", "k"].outcomes == (1,)

    def test_ambiguous_group(self):
        with pytest.raises(OrderingError):
            canonicalize([AttemptRecord("s", "k", 1), AttemptRecord("s", "k", 0)])

    def test_tied_order_keys(self):
        with pytest.raises(OrderingError):
            canonicalize([AttemptRecord("s", "k", 1, order_key=1), AttemptRecord("s", "k", 0, order_key=1)])

    def test_invalid_outcome_rejected(self):
        with pytest.raises(ValueError):
            AttemptRecord("s", "k", 2)

    def test_indices_sorted_by_id(self):
        ds = from_sequences({("b", "z"): [1], ("a", "y"): [0], ("a", "z"): [1]})
        assert ds.student_index == ("a", "b")
        assert ds.kc_index == ("y", "z")

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("xy"), st.integers(0, 1)),
                    min_size=1, max_size=40), st.randoms())
    def test_permutation_invariance(self, rows, rnd):
        recs = [AttemptRecord(s, k, x, order_key=i) for i, (s, k, x) in enumerate(rows)]
        shuffled = list(recs)
        rnd.shuffle(shuffled)
        a, b = canonicalize(recs), canonicalize(shuffled)
        assert a == b
        assert sum(len(s) for s in a.sequences.values()) == a.n_attempts == len(rows)


class TestSummarize:
    def test_counts(self):
        ds = from_sequences({("s1", "k"): [0, 1], ("s2", "k"): [1, 1]})
        s = summarize(ds)
        assert (s.n_students, s.n_kcs, s.n_attempts) == (2, 1, 4)
        assert s.percent_correct_per_kc == {"k": 0.75}

    def test_median_kcs_per_student(self):
        seqs = {("s1", "k1"): [1]}
        seqs.update({("s2", f"k{j}"): [0] for j in range(3)})
        seqs.update({("s3", f"k{j}"): [1] for j in range(5)})
        assert summarize(from_sequences(seqs)).kcs_per_student.median == 3

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            summarize(canonicalize([]))

    def test_mean_kcs_per_student_near_population_mean(self):
        ds = simulate_bkt2(PopulationConfig(n_kcs=50, n_students=3500, kc_mean=5, seed=11))
        assert summarize(ds).kcs_per_student.mean == pytest.approx(5, abs=0.15)
