import math
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genretrans.corpus import (
    AnnotatedItem,
    CorpusFormatError,
    ParallelCorpus,
    decode,
    encode,
    fold_stats,
    format_sources,
    load_corpus,
    mean_source_tags,
    parse_sources,
    read_folds,
    stratified_group_kfold,
    subsample,
    write_folds,
)

DATA = Path(__file__).parent / "data"


def write(tmp_path, text, name="c.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def item(i, artist, sources=(), targets=("x",)):
    return AnnotatedItem(f"i{i:05d}", artist, frozenset(sources), frozenset(targets))


def test_load_three_lines(tmp_path):
    p = write(tmp_path, "a\tart1\tlf:rock;pop\tRock\nb\tart1\tlf:rock|tt:metal\tRock;Metal\nc\tart2\t\tPop\n")
    c = load_corpus(p)
    assert len(c) == 3
    assert c.sources == ["lf:pop", "lf:rock", "tt:metal"]
    assert c.targets == ["Metal", "Pop", "Rock"]
    assert c["b"].sources == {"lf:rock", "tt:metal"}
    assert c["c"].sources == frozenset()
    assert c.n_dropped == 0


def test_empty_target_is_dropped_and_counted(tmp_path):
    p = write(tmp_path, "a\tart1\tlf:rock\tRock\nb\tart1\tlf:pop\t\n")
    c = load_corpus(p)
    assert [it.item_id for it in c.items] == ["a"]
    assert c.n_dropped == 1
    assert c.sources == ["lf:rock"]


@pytest.mark.parametrize(
    "text",
    [
        "a\tart1\tlf:rock\tRock\na\tart2\tlf:pop\tPop\n",  # duplicate id
        "a\tart1\tlf:rock\n",  # three fields
        "a\tart1\trock\tRock\n",  # no system prefix
        "\tart1\tlf:rock\tRock\n",  # empty id
    ],
)
def test_malformed_lines(tmp_path, text):
    with pytest.raises(CorpusFormatError, match=r":\d+:"):
        load_corpus(write(tmp_path, text))


def test_fixture_corpus():
    c = load_corpus(DATA / "corpus.tsv")
    assert len(c) == 13 and c.n_dropped == 1
    assert "lastfm:progressive death metal" in c.sources
    assert c["i13"].sources == frozenset()


def test_vocabulary_must_cover_annotations(tmp_path):
    p = write(tmp_path, "a\tart1\tlf:rock\tRock\n")
    with pytest.raises(CorpusFormatError):
        load_corpus(p, sources=["lf:pop"])


def test_sources_field_round_trip():
    s = parse_sources("lf:rock;pop|tt:heavy metal")
    assert s == {"lf:rock", "lf:pop", "tt:heavy metal"}
    assert parse_sources(format_sources(s)) == s
    assert parse_sources("") == frozenset()


def test_encode_hand_written():
    items = [
        item(0, "a", ["s:a", "s:b"], ["x"]),
        item(1, "a", [], ["y"]),
        item(2, "b", ["s:c"], ["x", "y"]),
        item(3, "c", ["s:a", "s:c"], ["y"]),
    ]
    c = ParallelCorpus.from_items(items)
    X, Y = encode(c)
    assert X.toarray().tolist() == [[1, 1, 0], [0, 0, 0], [0, 0, 1], [1, 0, 1]]
    assert Y.toarray().tolist() == [[1, 0], [0, 1], [1, 1], [0, 1]]
    assert X[0].sum() == 2
    X0, Y0 = encode(c, [])
    assert X0.shape == (0, 3) and Y0.shape == (0, 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(
    st.tuples(st.sets(st.sampled_from("abcdef"), max_size=4), st.sets(st.sampled_from("xyz"), min_size=1)),
    min_size=1, max_size=30,
))
def test_encode_decode_round_trip(rows):
    items = [item(i, "a", [f"s:{t}" for t in src], tgt) for i, (src, tgt) in enumerate(rows)]
    c = ParallelCorpus.from_items(items)
    X, Y = encode(c)
    assert decode(X, c.sources) == [it.sources for it in c.items]
    assert decode(Y, c.targets) == [it.targets for it in c.items]


def random_grouped_corpus(rng, n_items=None):
    n_items = n_items or int(rng.integers(20, 200))
    n_artists = int(rng.integers(4, max(5, n_items // 2)))
    labels = [f"l{j}" for j in range(int(rng.integers(2, 8)))]
    items = []
    for i in range(n_items):
        k = int(rng.integers(1, 3))
        tgt = rng.choice(labels, size=k, replace=False)
        items.append(item(i, f"a{int(rng.integers(0, n_artists))}", [], tgt))
    return ParallelCorpus.from_items(items)


def test_artist_atomicity_on_100_random_corpora():
    rng = np.random.default_rng(0)
    for trial in range(100):
        c = random_grouped_corpus(rng)
        k = 4
        if len({it.artist_id for it in c.items}) < k:
            continue
        folds = stratified_group_kfold(c, k, seed=trial)
        assert set(folds) == {it.item_id for it in c.items}
        assert set(folds.values()) <= set(range(k))
        by_artist = {}
        for it in c.items:
            assert by_artist.setdefault(it.artist_id, folds[it.item_id]) == folds[it.item_id]


def test_single_label_group_free_within_one():
    rng = np.random.default_rng(1)
    for trial in range(100):
        n = int(rng.integers(8, 200))
        labels = [f"l{j}" for j in range(int(rng.integers(1, 6)))]
        items = [item(i, f"a{i}", [], [labels[int(rng.integers(len(labels)))]]) for i in range(n)]
        c = ParallelCorpus.from_items(items)
        folds = stratified_group_kfold(c, 4, seed=trial)
        for dev in fold_stats(c.items, folds, 4).values():
            assert np.all(np.abs(dev) <= 1.0 + 1e-9)
        sizes = Counter(folds.values())
        assert max(sizes.values()) - min(sizes.values()) <= 1


def test_dominant_artist_stays_in_one_fold():
    items = [item(i, "big", [], ["x"]) for i in range(40)]
    items += [item(40 + i, f"a{i}", [], ["x" if i % 2 else "y"]) for i in range(60)]
    c = ParallelCorpus.from_items(items)
    folds = stratified_group_kfold(c, 4, seed=0)
    assert len({folds[it.item_id] for it in items if it.artist_id == "big"}) == 1
    dev = fold_stats(c.items, folds, 4)
    assert set(dev) == {"x", "y"}


def test_fold_determinism_and_errors():
    c = random_grouped_corpus(np.random.default_rng(2), 120)
    assert stratified_group_kfold(c, 4, 3) == stratified_group_kfold(c, 4, 3)
    with pytest.raises(ValueError):
        stratified_group_kfold(c, 1)
    small = ParallelCorpus.from_items([item(0, "a"), item(1, "b")])
    with pytest.raises(ValueError):
        stratified_group_kfold(small, 4)


def test_fold_export_round_trip(tmp_path):
    c = random_grouped_corpus(np.random.default_rng(3), 80)
    folds = stratified_group_kfold(c, 4, 0)
    write_folds(folds, tmp_path / "f.tsv")
    assert read_folds(tmp_path / "f.tsv") == folds


def test_subsample():
    items = [item(i, "a") for i in range(8192)]
    assert subsample(items, 1.0) == items
    assert len(subsample(items, 2 ** -13)) == 1
    assert len(subsample(items, 0.3)) == math.ceil(0.3 * 8192)
    assert subsample(items, 0.01, seed=4) == subsample(items, 0.01, seed=4)
    assert subsample(items, 0.01, seed=4) != subsample(items, 0.01, seed=5)
    with pytest.raises(ValueError):
        subsample(items, 0.0)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 3000), e=st.integers(1, 13), seed=st.integers(0, 100))
def test_subsamples_are_nested(n, e, seed):
    items = [item(i, "a") for i in range(n)]
    big = set(subsample(items, 2.0 ** -(e - 1), seed))
    small = set(subsample(items, 2.0 ** -e, seed))
    assert small <= big


def test_mean_source_tags():
    assert mean_source_tags([item(0, "a", ["s:a", "s:b"]), item(1, "a", ["s:a", "s:b", "s:c"])]) == 2.5
    assert mean_source_tags([item(0, "a", ["s:a", "s:b", "s:c", "s:d"])]) == 4
    sizes = [1, 0, 3, 2, 4]
    items = [item(i, "a", [f"s:{j}" for j in range(k)]) for i, k in enumerate(sizes)]
    assert mean_source_tags(items) == sum(sizes) / 5
    with pytest.raises(ValueError):
        mean_source_tags([])


def test_corpus_file_round_trip(tmp_path):
    c = load_corpus(DATA / "corpus.tsv")
    c.to_file(tmp_path / "c.tsv")
    back = load_corpus(tmp_path / "c.tsv")
    assert back.items == c.items
    assert back.sources == c.sources and back.targets == c.targets
