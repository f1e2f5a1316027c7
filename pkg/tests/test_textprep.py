import logging
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emoreact import textprep as tp
from emoreact.labels import EMOTIONS, REACTIONS
from emoreact.textprep import DataError, FilterConfig, RawPost
from oracles import random_posts, reference_census, reference_filter


def hits(**kw):
    return {r: kw.get(r, 0) for r in REACTIONS}


class TestFilter:
    def test_dominant_love(self):
        post = RawPost("t", hits(LOVE=30, WOW=2, HAHA=1))
        assert tp.filter_posts([post]) == [("t", "LOVE")]

    def test_below_tau(self):
        assert tp.filter_posts([RawPost("t", hits(LOVE=15))]) == []

    def test_exactly_tau_kept(self):
        assert tp.filter_posts([RawPost("t", hits(LOVE=20))]) == [("t", "LOVE")]

    def test_tie_dropped(self):
        assert tp.filter_posts([RawPost("t", hits(SAD=10, ANGRY=10))]) == []

    def test_gamma_boundary_is_strict(self):
        # 8 vs 0.4 * 20: equal, so dropped; 9 vs 0.4 * 20 kept
        assert tp.post_label(RawPost("t", hits(LOVE=8, WOW=5, HAHA=5, SAD=5, ANGRY=5)), FilterConfig(0, 0.4)) is None
        assert tp.post_label(RawPost("t", hits(LOVE=9, WOW=5, HAHA=5, SAD=5, ANGRY=5)), FilterConfig(0, 0.4)) == "LOVE"

    def test_each_reading(self):
        post = RawPost("t", hits(LOVE=9, WOW=8, HAHA=8, SAD=8, ANGRY=8))
        assert tp.post_label(post, FilterConfig(0, 0.4, "mass")) is None
        assert tp.post_label(post, FilterConfig(0, 0.4, "each")) == "LOVE"

    def test_empty_post_never_kept(self):
        assert tp.post_label(RawPost("t", hits()), FilterConfig(0, 0.0)) is None

    def test_missing_columns_count_as_zero(self):
        assert tp.post_label(RawPost("t", {"WOW": 25}), FilterConfig()) == "WOW"

    @pytest.mark.parametrize("bad", [{"LIKE": 3}, {"LOVE": -1}, {"LOVE": 1.5}])
    def test_invalid_hits(self, bad):
        with pytest.raises(DataError):
            RawPost("t", bad)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FilterConfig(tau=-1)
        with pytest.raises(ValueError):
            FilterConfig(dominance="other")

    @pytest.mark.parametrize("tau, gamma", [(0, 0.0), (20, 0.4), (50, 1.0), (5, 2.5)])
    def test_matches_reference(self, tau, gamma):
        posts = random_posts(3000, seed=tau)
        got = tp.filter_posts(posts, FilterConfig(tau, gamma))
        assert got == reference_filter(posts, tau, gamma)
        assert tp.census(got) == reference_census(got)

    def test_census_order_and_zeros(self):
        c = tp.census([("a", "WOW"), ("b", "WOW")])
        assert list(c) == list(REACTIONS)
        assert c["WOW"] == 2 and c["LOVE"] == 0


class TestPreprocess:
    def test_example_sentence(self):
        assert tp.preprocess("Snake on a plane!") == ["snake", "on", "a", "plane", "!"]

    def test_numbers_and_urls(self):
        assert tp.preprocess("Won 3,000 at http://x.co") == ["won", "<num>", "at"]

    def test_empty(self):
        assert tp.preprocess("") == []

    def test_brackets_and_hashtags(self):
        assert tp.preprocess("(wow) [so] {good} #love") == ["wow", "so", "good", "#", "love"]

    def test_decimal_number(self):
        assert tp.preprocess("pi is 3.14.") == ["pi", "is", "<num>", "."]

    def test_www_url(self):
        assert tp.preprocess("see www.example.com now") == ["see", "now"]

    def test_quotes_split(self):
        assert tp.preprocess('he said "don\'t"') == ["he", "said", '"', "don", "'", "t", '"']

    @settings(max_examples=300, deadline=None)
    @given(st.text(alphabet=st.sampled_from(list("abcXYZ019 .,!?;:'\"#()[]{}/:wthp<>-_\t\n")), max_size=60))
    def test_idempotent(self, text):
        once = tp.preprocess(text)
        assert tp.preprocess(" ".join(once)) == once

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=40))
    def test_idempotent_unicode(self, text):
        once = tp.preprocess(text)
        assert tp.preprocess(" ".join(once)) == once

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=40))
    def test_output_shape(self, text):
        for tok in tp.preprocess(text):
            assert tok and tok == tok.strip()
            assert not any(ch in tok for ch in "()[]{}")
            assert not any(ch.isdecimal() for ch in tok) or tok == "<num>"


class TestVocabulary:
    def test_small_corpus(self):
        v = tp.build_vocab([["a", "b"], ["c", "a"]], 10000)
        assert len(v) == 3 + len(tp.SPECIALS)
        assert v.id(tp.PAD) == 0

    def test_tie_break(self):
        v = tp.build_vocab([["b"] * 5 + ["a"] * 5], 1)
        assert v.tokens == ["a"]

    def test_frequency_order(self):
        v = tp.build_vocab([["x", "y", "y", "z", "z", "z"]], 2)
        assert v.tokens == ["z", "y"]

    def test_unknown(self):
        v = tp.build_vocab([["a"]], 10)
        assert v.id("never") == v.unk_id

    def test_num_token_is_special(self):
        v = tp.build_vocab([["<num>", "a"]], 10)
        assert v.tokens == ["a"]
        assert v.id("<num>") == 2

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            tp.build_vocab([[]], 10)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            tp.build_vocab([["a"]], 0)

    def test_roundtrip_and_digest(self, tmp_path):
        v = tp.build_vocab([["a", "b", "b"]], 10)
        v.save(tmp_path / "v.txt")
        w = tp.Vocabulary.load(tmp_path / "v.txt")
        assert w.index == v.index
        assert w.digest() == v.digest()
        assert tp.build_vocab([["a", "c"]], 10).digest() != v.digest()


class TestEncoding:
    def setup_method(self):
        self.vocab = tp.build_vocab([[f"w{i}" for i in range(50)]], 100)

    def test_truncation(self):
        ex = tp.encode_example([f"w{i}" for i in range(45)], self.vocab)
        assert len(ex.ids) == 30
        assert ex.ids == tuple(self.vocab.ids([f"w{i}" for i in range(30)]))

    def test_no_padding(self):
        ex = tp.encode_example(["w1", "w2", "w3", "w4", "w5"], self.vocab)
        assert len(ex.ids) == 5 and 0 not in ex.ids

    def test_empty_after_preprocessing(self):
        with pytest.raises(DataError):
            tp.encode_example(tp.preprocess("http://only.url"), self.vocab)

    def test_label_by_name(self):
        ex = tp.encode_example(["w1"], self.vocab, task="emotion", label="fear")
        assert ex.label == EMOTIONS.index("fear")
        assert list(ex.y) == [0, 0, 1, 0, 0, 0]

    def test_unlabeled_dummy(self):
        ex = tp.encode_example(["w1"], self.vocab)
        assert ex.task is None and ex.y.size == 0

    def test_bad_label(self):
        with pytest.raises(DataError):
            tp.Example((3,), "reaction", 7)
        with pytest.raises(DataError):
            tp.make_record("x", "reaction", "LIKE")

    def test_encode_corpus_drops_empty(self):
        corpus = tp.Corpus([tp.make_record("w1 w2", "reaction", "SAD"), tp.make_record("", "reaction", "SAD")])
        enc = tp.encode_corpus(corpus, self.vocab)
        assert len(enc.T_r) == 1


def labeled(n, classes, prefix, rng):
    return [(f"{prefix} {k}", rng.choice(classes)) for k in range(n)]


class TestSplits:
    def setup_method(self):
        rng = random.Random(0)
        self.fb = labeled(1000, REACTIONS, "fb", rng)
        self.unl = [f"u {k}" for k in range(300)]
        self.aff = labeled(200, EMOTIONS, "aff", rng)
        self.isear = labeled(300, [e for e in EMOTIONS if e != "surprise"], "isear", rng)
        self.fairy = labeled(250, EMOTIONS, "fairy", rng)

    def split(self, test_set="isear", seed=0):
        return tp.make_splits(self.fb, self.unl, self.aff, self.isear, self.fairy, test_set, seed)

    def test_allocate(self):
        assert tp.allocate(1000, (0.7, 0.15, 0.15)) == [700, 150, 150]
        assert tp.allocate(7, (0.7, 0.15, 0.15)) == [5, 1, 1]
        assert tp.allocate(1, (0.8, 0.2)) == [1, 0]
        assert sum(tp.allocate(13, (0.7, 0.15, 0.15))) == 13

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 500))
    def test_allocate_within_one(self, n):
        for fracs in ((0.7, 0.15, 0.15), (0.8, 0.2)):
            counts = tp.allocate(n, fracs)
            assert sum(counts) == n
            assert all(abs(c - n * f) < 1 for c, f in zip(counts, fracs))

    def test_facebook_fractions(self):
        train, val, test = self.split()
        sizes = (len(train.T_r), len(val.T_r), len(test.T_r))
        assert sum(sizes) == 1000
        assert all(abs(a - b) <= len(REACTIONS) for a, b in zip(sizes, (700, 150, 150)))
        totals = Counter(lab for _, lab in self.fb)
        for corpus, frac in ((train, 0.7), (val, 0.15), (test, 0.15)):
            got = Counter(r.label for r in corpus.T_r)
            for label, n in totals.items():
                assert abs(got[label] - n * frac) <= 1

    def test_held_out_set(self):
        train, val, test = self.split("isear")
        assert all(r.source == "isear" for r in test.T_e)
        assert len(test.T_e) == 300
        assert not any(r.source == "isear" for r in train.T_e + val.T_e)
        for name, data in (("affective", self.aff), ("fairy", self.fairy)):
            n_tr = sum(r.source == name for r in train.T_e)
            n_va = sum(r.source == name for r in val.T_e)
            assert n_tr + n_va == len(data)
            assert abs(n_tr - 0.8 * len(data)) <= len(EMOTIONS)

    def test_unlabeled_all_in_train(self):
        train, val, test = self.split()
        assert len(train.T_u) == 300 and not val.T_u and not test.T_u

    def test_deterministic(self):
        a, b = self.split(seed=3), self.split(seed=3)
        assert [r.text for r in a[0].all()] == [r.text for r in b[0].all()]
        c = self.split(seed=4)
        assert [r.text for r in a[0].T_r] != [r.text for r in c[0].T_r]

    def test_disjoint_texts(self):
        fb = self.fb + [("shared text", "SAD")]
        unl = self.unl + ["shared text", "fb 3"]
        aff = self.aff + [("shared text", "fear")]
        train, val, test = tp.make_splits(fb, unl, aff, self.isear, self.fairy, "fairy", 0)
        texts = [r.text for c in (train, val, test) for r in c.all()]
        assert len(texts) == len(set(texts))

    def test_errors(self):
        with pytest.raises(ValueError):
            self.split("imdb")
        with pytest.raises(DataError):
            tp.make_splits([], self.unl, self.aff, self.isear, self.fairy, "isear")
        with pytest.raises(DataError):
            tp.make_splits(self.fb, self.unl, [], self.isear, self.fairy, "isear")


class TestIngestion:
    def write(self, tmp_path, name, lines):
        p = tmp_path / name
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p

    def test_affective_argmax(self, tmp_path):
        p = self.write(tmp_path, "a.tsv", ["text\tanger\tdisgust\tfear\thappiness\tsadness\tsurprise",
                                           "boo\t10\t0\t0\t0\t5\t80", "tie\t50\t50\t0\t0\t0\t0"])
        assert tp.ingest_emotion_dataset(p, "affective") == [("boo", "surprise")]

    def test_isear_mapping(self, tmp_path):
        p = self.write(tmp_path, "i.tsv", ["a\tjoy", "b\tguilt", "c\tshame", "d\tfear"])
        assert tp.ingest_emotion_dataset(p, "isear") == [("a", "happiness"), ("d", "fear")]

    def test_fairy_agreement(self, tmp_path):
        p = self.write(tmp_path, "f.tsv", ["a\tf\tf\tf\tf", "b\tD\tD\tD\tsa", "c\th\th\th\tsa", "d\tn\tn\tn\tn",
                                           "e\tsad"])
        assert tp.ingest_emotion_dataset(p, "fairy") == [("a", "fear"), ("b", "disgust"), ("e", "sadness")]

    def test_malformed_rows_logged(self, tmp_path, caplog):
        p = self.write(tmp_path, "i.tsv", ["a\tjoy", "only one column", "c\tnonsense", "d\tanger"])
        with caplog.at_level(logging.WARNING):
            out = tp.ingest_emotion_dataset(p, "isear")
        assert out == [("a", "happiness"), ("d", "anger")]
        assert ":2:" in caplog.text and ":3:" in caplog.text
        assert "2 malformed rows" in caplog.text

    def test_posts_reader(self, tmp_path):
        p = self.write(tmp_path, "p.tsv", ["text\tlove\twow\thaha\tsad\tangry", "hi\t30\t2\t1\t0\t0"])
        (post,) = tp.read_posts(p)
        assert post.reaction_hits == {"LOVE": 30, "WOW": 2, "HAHA": 1, "SAD": 0, "ANGRY": 0}

    @pytest.mark.parametrize("lines", [["text\tlike\twow\thaha\tsad\tangry"],
                                       ["text\tlove\twow\thaha\tsad\tangry", "hi\t1\tx\t0\t0\t0"],
                                       ["text\tlove\twow\thaha\tsad\tangry", "hi\t1\t2"]])
    def test_posts_reader_rejects(self, tmp_path, lines):
        with pytest.raises(DataError):
            tp.read_posts(self.write(tmp_path, "p.tsv", lines))


class TestArtificial:
    def corpus(self):
        return tp.Corpus([tp.make_record("love it", "reaction", "LOVE"), tp.make_record("lol", "reaction", "HAHA")],
                         [tp.make_record("scary", "emotion", "fear")],
                         [tp.make_record("plain text")])

    def test_adds_mapped_copies(self):
        out = tp.artificial_augment(self.corpus())
        assert len(out) == len(self.corpus()) + 3
        assert ("love it", "happiness") in [(r.text, r.label) for r in out.T_e]
        assert ("scary", "WOW") in [(r.text, r.label) for r in out.T_r]

    def test_originals_untouched(self):
        c = self.corpus()
        before = [r for r in c.all()]
        out = tp.artificial_augment(c)
        assert c.all() == before
        assert out.T_r[:2] == c.T_r and out.T_e[:1] == c.T_e and out.T_u == c.T_u

    def test_never_fear_or_disgust_from_reactions(self):
        c = tp.Corpus([tp.make_record(f"t{r}", "reaction", r) for r in REACTIONS])
        labels = {r.label for r in tp.artificial_augment(c).T_e}
        assert not labels & {"fear", "disgust"}

    def test_encoded_examples(self):
        vocab = tp.build_vocab([r.tokens for r in self.corpus().all()], 100)
        enc = tp.encode_corpus(self.corpus(), vocab)
        out = tp.artificial_augment(enc)
        assert [x.label for x in out.T_e] == [EMOTIONS.index("fear"), EMOTIONS.index("happiness"),
                                              EMOTIONS.index("happiness")]
