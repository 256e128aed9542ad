import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsval.data import (RatingFormat, RatingScale, build_dataset, compute_stats,
                         format_ratings, k_core_filter, load_dataset, parse_ratings,
                         save_dataset, split_users)
from irsval.errors import DataError, ParseError

SCALE = RatingScale(1.0, 5.0, 4.0)


def test_parse_doublecolon_line():
    assert parse_ratings(b"1::1193::5::978300760\n", "doublecolon") == [(1, 1193, 5.0, 978300760)]


def test_parse_csv_line_and_header():
    assert parse_ratings("7,42,3.5,100", RatingFormat.CSV) == [(7, 42, 3.5, 100)]
    text = "userId,movieId,rating,timestamp\n7,42,3.5,100\n"
    assert parse_ratings(text, "csv") == [(7, 42, 3.5, 100)]


def test_parse_tsv():
    assert parse_ratings(b"3\t4\t2\t9\n", "tsv") == [(3, 4, 2.0, 9)]


def test_parse_missing_field_reports_line():
    with pytest.raises(ParseError) as exc:
        parse_ratings(b"1::1193::5\n", "doublecolon")
    assert exc.value.line_no == 1
    assert "missing field" in str(exc.value)
    assert "1::1193::5" in str(exc.value)


def test_parse_error_on_later_line():
    with pytest.raises(ParseError) as exc:
        parse_ratings(b"1::2::3::4\n\n1::x::3::4\n", "doublecolon")
    assert exc.value.line_no == 3


def test_parse_rejects_bad_numbers():
    for line in (b"-1::2::3::4", b"1::2::abc::4", b"1::2::3::4.5", b"1::2::3::4::5"):
        with pytest.raises(ParseError):
            parse_ratings(line, "doublecolon")


def test_parse_empty_stream():
    assert parse_ratings(b"", "csv") == []


def test_wrong_format_fails_on_first_line():
    with pytest.raises(ParseError) as exc:
        parse_ratings(b"1::1193::5::978300760\n", "csv")
    assert exc.value.line_no == 1


records_st = st.lists(st.tuples(
    st.integers(0, 10**6), st.integers(0, 10**6),
    st.sampled_from([1.0, 2.0, 3.5, 4.25, 5.0, 0.1, 1e-3]),
    st.integers(0, 2**40)), max_size=30)


@given(records_st, st.sampled_from(list(RatingFormat)))
def test_format_parse_round_trip(records, fmt):
    assert parse_ratings(format_ratings(records, fmt, header=True), fmt) == records


def test_k_core_examples():
    A, B = 10, 11
    recs = [(A, 1, 5.0, 0), (A, 2, 5.0, 1), (B, 1, 5.0, 0), (B, 2, 5.0, 1), (B, 3, 5.0, 2)]
    out = k_core_filter(recs, 2)
    assert out == recs[:4]
    assert k_core_filter(recs, 1) == recs
    assert k_core_filter([(A, 1, 1.0, 0), (B, 1, 1.0, 0)], 2) == []
    assert k_core_filter([], 3) == []


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=60),
       st.integers(1, 4))
def test_k_core_fixpoint_and_idempotence(pairs, k):
    recs = [(u, i, 3.0, t) for t, (u, i) in enumerate(pairs)]
    out = k_core_filter(recs, k)
    assert k_core_filter(out, k) == out
    users = np.bincount([r[0] for r in out], minlength=9)
    items = np.bincount([r[1] for r in out], minlength=9)
    assert all(c == 0 or c >= k for c in users)
    assert all(c == 0 or c >= k for c in items)
    # order preserved: output is a subsequence of the input
    it = iter(recs)
    assert all(any(r == x for x in it) for r in out)


def test_densify_first_appearance():
    ds = build_dataset([(900, 55, 4.0, 1), (900, 23, 3.0, 2)], SCALE)
    assert ds.num_users == 1
    assert ds.users[0].items.tolist() == [0, 1]
    assert ds.item_ids.tolist() == [55, 23]
    assert ds.user_ids.tolist() == [900]


def test_timestamp_sort_is_stable():
    ds = build_dataset([(1, 5, 4.0, 9), (1, 6, 3.0, 3), (1, 7, 2.0, 3)], SCALE)
    h = ds.users[0]
    assert h.timestamps.tolist() == [3, 3, 9]
    assert h.items.tolist() == [1, 2, 0]


def test_rating_outside_scale():
    with pytest.raises(DataError, match="rating outside scale"):
        build_dataset([(1, 1, 7.0, 0)], SCALE)


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(0, 9)),
                min_size=1, max_size=40))
def test_densification_is_bijective(triples):
    recs = [(u, i, 3.0, t) for u, i, t in triples]
    ds = build_dataset(recs, SCALE)
    assert len(set(ds.user_ids.tolist())) == ds.num_users
    assert len(set(ds.item_ids.tolist())) == ds.num_items
    back = sorted((int(ds.user_ids[h.user]), int(ds.item_ids[i]))
                  for h in ds.users for i in h.items)
    assert back == sorted((u, i) for u, i, _, _ in recs)
    assert ds.item_popularity.sum() == len(recs)


def test_split_sizes():
    sp = split_users(100, seed=7)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (85, 5, 10)
    assert split_users(100, seed=7) == sp
    sp20 = split_users(20, seed=0)
    assert (len(sp20.train), len(sp20.validation), len(sp20.test)) == (17, 1, 2)


def test_split_too_few_users():
    with pytest.raises(DataError):
        split_users(2)


@given(st.integers(3, 400), st.integers(0, 2**32 - 1))
def test_split_partitions(n, seed):
    sp = split_users(n, seed=seed)
    all_users = sp.train + sp.validation + sp.test
    assert sorted(all_users) == list(range(n))


def test_stats_examples():
    ds = build_dataset([(1, i, 3.0, i) for i in range(5)], SCALE)
    st_ = compute_stats(ds)
    assert (st_.num_users, st_.num_interactions, st_.avg_interactions) == (1, 5, 5.0)
    assert st_.num_items <= 5
    empty = compute_stats(build_dataset([], SCALE))
    assert (empty.num_users, empty.num_items, empty.num_interactions,
            empty.avg_interactions) == (0, 0, 0, 0.0)


def test_dataset_round_trip(tmp_path):
    recs = [(3, 9, 4.0, 2), (3, 8, 5.0, 1), (4, 9, 1.5, 0)]
    ds = build_dataset(recs, SCALE)
    save_dataset(ds, tmp_path / "d.irsd")
    back = load_dataset(tmp_path / "d.irsd")
    assert back.scale == ds.scale and back.num_items == ds.num_items
    for a, b in zip(ds.users, back.users):
        assert np.array_equal(a.items, b.items)
        assert np.array_equal(a.ratings, b.ratings)
        assert np.array_equal(a.timestamps, b.timestamps)
    assert np.array_equal(back.item_ids, ds.item_ids)
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path / "nope.irsd")


def test_truncated_dataset_file(tmp_path):
    ds = build_dataset([(1, 1, 3.0, 0)], SCALE)
    p = tmp_path / "d.irsd"
    save_dataset(ds, p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(DataError):
        load_dataset(p)
