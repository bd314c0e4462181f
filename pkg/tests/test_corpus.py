import itertools
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edre.corpus import (
    Clarity,
    CorpusError,
    CorpusStore,
    HostConfig,
    LabelFileError,
    RaterLabel,
    ReviewComment,
    aggregate_majority,
    corpus_stats,
    ingest_from_host,
    load_corpus,
    load_labels,
    majority_label,
    needs_explanation,
    parse_timestamp,
    sample_corpus,
    save_corpus,
)
from edre.host import AuthError, GitHubClient

from conftest import make_review


def gh_comment(cid, created="2019-02-01T10:00:00Z", body="looks good"):
    return {
        "id": cid,
        "body": body,
        "user": {"login": "dev"},
        "created_at": created,
        "html_url": f"https://example.invalid/c/{cid}",
    }


class TestClarity:
    def test_order(self):
        assert Clarity.UNCLEAR < Clarity.SOMEWHAT_UNCLEAR < Clarity.SOMEWHAT_CLEAR < Clarity.CLEAR
        assert len(Clarity) == 4

    def test_needs_explanation(self):
        assert [needs_explanation(c) for c in Clarity] == [True, True, False, False]

    @pytest.mark.parametrize("text,expected", [
        ("clear", Clarity.CLEAR),
        ("Somewhat Clear", Clarity.SOMEWHAT_CLEAR),
        ("SOMEWHAT_UNCLEAR", Clarity.SOMEWHAT_UNCLEAR),
        (" unclear ", Clarity.UNCLEAR),
    ])
    def test_parse(self, text, expected):
        assert Clarity.parse(text) is expected

    def test_parse_unknown_lists_allowed(self):
        with pytest.raises(ValueError, match="somewhat_clear"):
            Clarity.parse("meh")


class TestLabels:
    def write(self, tmp_path, text):
        p = tmp_path / "labels.csv"
        p.write_text(text)
        return p

    def test_single_row(self, tmp_path):
        labels = load_labels(self.write(tmp_path, "review_id,rater_id,label\nr1,dev3,clear\n"))
        assert labels == [RaterLabel("r1", "dev3", Clarity.CLEAR)]

    def test_duplicate_vote(self, tmp_path):
        p = self.write(tmp_path, "review_id,rater_id,label\nr1,dev3,clear\nr1,dev3,unclear\n")
        with pytest.raises(LabelFileError, match="duplicate"):
            load_labels(p)

    def test_ten_rows(self, tmp_path):
        rows = [f"r{r},dev{d},clear" for r in (1, 2) for d in range(5)]
        labels = load_labels(self.write(tmp_path, "review_id,rater_id,label\n" + "\n".join(rows) + "\n"))
        assert len(labels) == 10

    def test_malformed_row_names_line(self, tmp_path):
        p = self.write(tmp_path, "review_id,rater_id,label\nr1,dev1,clear\nr2,dev1\n")
        with pytest.raises(LabelFileError, match=":3:"):
            load_labels(p)

    def test_unknown_label_lists_allowed(self, tmp_path):
        p = self.write(tmp_path, "review_id,rater_id,label\nr1,dev1,fuzzy\n")
        with pytest.raises(LabelFileError, match=r":2:.*somewhat_unclear"):
            load_labels(p)

    def test_bad_header(self, tmp_path):
        with pytest.raises(LabelFileError, match="header"):
            load_labels(self.write(tmp_path, "id,rater,label\n"))


class TestMajority:
    def votes(self, *names):
        return [RaterLabel("r1", f"d{i}", Clarity.parse(n)) for i, n in enumerate(names)]

    def aggregate(self, labels):
        comment = make_review("r1", "x", Clarity.CLEAR).comment
        return aggregate_majority(labels, [comment])

    def test_strict_plurality(self):
        out = self.aggregate(self.votes("clear", "clear", "unclear", "somewhat clear", "clear"))
        assert out[0].clarity is Clarity.CLEAR
        assert out[0].vote_counts[Clarity.CLEAR] == 3

    def test_tie_goes_to_least_clear(self):
        out = self.aggregate(self.votes("clear", "clear", "unclear", "unclear"))
        assert out[0].clarity is Clarity.UNCLEAR

    def test_tie_enumeration(self):
        # every 2-way tie over all label pairs resolves to the smaller label
        for a, b in itertools.combinations(Clarity, 2):
            assert majority_label({a: 2, b: 2}) is min(a, b)

    def test_single_vote(self):
        assert self.aggregate(self.votes("somewhat clear"))[0].clarity is Clarity.SOMEWHAT_CLEAR

    def test_zero_votes_excluded(self, toy_corpus):
        comments = [r.comment for r in toy_corpus]
        out = aggregate_majority([RaterLabel("t01", "d", Clarity.CLEAR)], comments)
        assert [r.id for r in out] == ["t01"]

    def test_min_votes(self, toy_corpus):
        comments = [r.comment for r in toy_corpus]
        labels = [RaterLabel("t01", "a", Clarity.CLEAR), RaterLabel("t02", "a", Clarity.CLEAR), RaterLabel("t02", "b", Clarity.CLEAR)]
        assert [r.id for r in aggregate_majority(labels, comments, min_votes=2)] == ["t02"]

    def test_unknown_review(self):
        with pytest.raises(CorpusError, match="unknown review"):
            aggregate_majority([RaterLabel("zz", "d", Clarity.CLEAR)], [])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from(list(Clarity)), min_size=1, max_size=9), st.randoms())
    def test_permutation_invariant_and_maximal(self, names, rnd):
        labels = [RaterLabel("r1", f"d{i}", c) for i, c in enumerate(names)]
        first = self.aggregate(labels)[0]
        shuffled = labels[:]
        rnd.shuffle(shuffled)
        assert self.aggregate(shuffled)[0].clarity is first.clarity
        top = first.vote_counts[first.clarity]
        assert all(n <= top for n in first.vote_counts.values())
        assert sum(first.vote_counts.values()) == len(names)


class TestStats:
    def test_single(self):
        s = corpus_stats([make_review("a", "fix this", Clarity.CLEAR)])
        assert (s.n_reviews, s.avg_words, s.avg_chars) == (1, 2, 8)
        assert s.label_distribution[Clarity.CLEAR] == 1.0

    def test_empty(self):
        s = corpus_stats([])
        assert s.n_reviews == 0 and s.avg_words == 0.0
        assert set(s.label_distribution) == set(Clarity)

    def test_distribution_sums_to_one(self, synthetic_small):
        s = corpus_stats(synthetic_small)
        assert abs(sum(s.label_distribution.values()) - 1.0) < 1e-9

    def test_sample_corpus(self):
        s = corpus_stats(sample_corpus())
        assert s.n_reviews == 12


class TestPersistence:
    def test_corpus_roundtrip(self, tmp_path, toy_corpus):
        path = tmp_path / "c.jsonl"
        save_corpus(toy_corpus, path)
        back = load_corpus(path)
        assert [r.to_dict() for r in back] == [r.to_dict() for r in toy_corpus]

    def test_store_dedup(self, tmp_path, toy_corpus):
        store = CorpusStore(tmp_path / "s.jsonl")
        comments = [r.comment for r in toy_corpus]
        assert store.add(comments) == 10
        assert store.add(comments[:3]) == 0
        assert len(store.load()) == 10

    def test_invalid_json_names_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "a", "clarity": "clear"}\n{oops\n')
        with pytest.raises(CorpusError, match=":2:"):
            load_corpus(p)

    def test_empty_body_kept(self):
        c = ReviewComment.from_dict({"id": "e", "body": ""})
        assert c.is_empty

    def test_timestamp_normalized(self):
        ts = parse_timestamp("2019-05-01T12:00:00+02:00")
        assert ts.hour == 10 and ts.utcoffset().total_seconds() == 0


class TestIngest:
    def test_empty_repo_list(self):
        assert ingest_from_host(HostConfig(repos=[]), "2019-01-01T00:00:00Z", "2019-12-01T00:00:00Z") == []

    def test_pagination_page_size_one(self, mock_host):
        path = "/repos/org/alpha/pulls/comments"
        mock_host.script[("GET", path)] = [(200, [gh_comment(1)]), (200, [gh_comment(2)]), (200, [])]
        client = GitHubClient(mock_host.url, token="t")
        out = ingest_from_host(HostConfig(["org/alpha"], per_page=1), "2019-01-01T00:00:00Z", "2019-12-01T00:00:00Z", client=client)
        assert [c.id for c in out] == ["1", "2"]
        assert [r["query"]["page"] for r in mock_host.requests] == ["1", "2", "3"]
        assert out[0].project == "alpha"

    def test_window_dedup_and_idempotent_store(self, mock_host, tmp_path):
        mock_host.script[("GET", "/repos/org/a/pulls/comments")] = [
            (200, [gh_comment(1), gh_comment(2, "2020-01-05T00:00:00Z"), gh_comment(3)])
        ]
        mock_host.script[("GET", "/repos/org/b/pulls/comments")] = [(200, [gh_comment(3), gh_comment(4)])]
        client = GitHubClient(mock_host.url, token="t")
        store = CorpusStore(tmp_path / "store.jsonl")
        cfg = HostConfig(["org/a", "org/b"], per_page=100)
        first = ingest_from_host(cfg, "2019-01-01T00:00:00Z", "2019-12-31T00:00:00Z", store=store, client=client)
        assert sorted(c.id for c in first) == ["1", "3", "4"]
        ingest_from_host(cfg, "2019-01-01T00:00:00Z", "2019-12-31T00:00:00Z", store=store, client=client)
        assert sorted(store.ids()) == ["1", "3", "4"]
        lines = (tmp_path / "store.jsonl").read_text().splitlines()
        assert len(lines) == 3 and json.loads(lines[0])["author"] == "dev"

    def test_missing_token_is_auth_error(self, monkeypatch):
        monkeypatch.delenv("EDRE_TOKEN", raising=False)
        with pytest.raises(AuthError):
            ingest_from_host(HostConfig(["o/r"], base_url="http://127.0.0.1:9"), "2019-01-01", "2019-02-01")


def test_shuffled_labels_fixture_matches_sample():
    from edre.corpus import load_comments, sample_paths

    comments_path, labels_path = sample_paths()
    labels = load_labels(labels_path)
    random.Random(5).shuffle(labels)
    out = aggregate_majority(labels, load_comments(comments_path))
    assert [r.clarity for r in out] == [r.clarity for r in sample_corpus()]
