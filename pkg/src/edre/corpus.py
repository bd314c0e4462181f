"""Review comment corpus: mining, rater labels, majority vote and statistics."""
from __future__ import annotations

import csv
import json
import logging
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from edre.host import AuthError, GitHubClient

log = logging.getLogger(__name__)


class Clarity(IntEnum):
    UNCLEAR = 0
    SOMEWHAT_UNCLEAR = 1
    SOMEWHAT_CLEAR = 2
    CLEAR = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Clarity":
        key = text.strip().lower().replace(" ", "_").replace("-", "_")
        try:
            return cls[key.upper()]
        except KeyError:
            allowed = ", ".join(c.label for c in cls)
            raise ValueError(f"unknown clarity {text!r}; allowed values: {allowed}") from None


def needs_explanation(clarity: Clarity) -> bool:
    return clarity <= Clarity.SOMEWHAT_UNCLEAR


class CorpusError(ValueError):
    pass


class LabelFileError(CorpusError):
    pass


def parse_timestamp(value: str | datetime) -> datetime:
    if isinstance(value, datetime):
        ts = value
    else:
        ts = datetime.fromisoformat(value.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class ReviewComment:
    id: str
    project: str
    author: str
    created_at: datetime
    body: str
    thread_url: str = ""

    @property
    def is_empty(self) -> bool:
        return not self.body.strip()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "project": self.project,
            "author": self.author,
            "created_at": format_timestamp(self.created_at),
            "body": self.body,
            "thread_url": self.thread_url,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ReviewComment":
        return cls(
            id=str(obj["id"]),
            project=obj.get("project", ""),
            author=obj.get("author", ""),
            created_at=parse_timestamp(obj.get("created_at", "1970-01-01T00:00:00Z")),
            body=obj.get("body") or "",
            thread_url=obj.get("thread_url", ""),
        )

    @classmethod
    def from_github(cls, obj: dict, project: str) -> "ReviewComment":
        return cls(
            id=str(obj["id"]),
            project=project,
            author=(obj.get("user") or {}).get("login", ""),
            created_at=parse_timestamp(obj["created_at"]),
            body=obj.get("body") or "",
            thread_url=obj.get("html_url", ""),
        )


@dataclass(frozen=True)
class RaterLabel:
    review_id: str
    rater_id: str
    clarity: Clarity


@dataclass(frozen=True)
class LabeledReview:
    comment: ReviewComment
    clarity: Clarity
    vote_counts: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.comment.id

    @property
    def body(self) -> str:
        return self.comment.body

    def to_dict(self) -> dict:
        obj = self.comment.to_dict()
        obj["clarity"] = self.clarity.label
        obj["vote_counts"] = {c.label: int(self.vote_counts.get(c, 0)) for c in Clarity}
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "LabeledReview":
        clarity = Clarity.parse(obj["clarity"])
        votes = {Clarity.parse(k): int(v) for k, v in (obj.get("vote_counts") or {}).items()}
        if not any(votes.values()):
            votes = {clarity: 1}
        return cls(ReviewComment.from_dict(obj), clarity, votes)


@dataclass(frozen=True)
class CorpusStats:
    n_reviews: int
    avg_words: float
    avg_chars: float
    label_distribution: dict

    def format_table(self) -> str:
        lines = [
            f"reviews          {self.n_reviews}",
            f"avg words        {self.avg_words:.2f}",
            f"avg characters   {self.avg_chars:.2f}",
        ]
        for c in sorted(Clarity, reverse=True):
            share = self.label_distribution.get(c, 0.0)
            lines.append(f"{c.label:<17}{100 * share:.1f}%")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# storage

class CorpusStore:
    """Append-only JSON Lines store of review comments, deduplicated by id."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def ids(self) -> set[str]:
        return {c.id for c in self.load()}

    def load(self) -> list[ReviewComment]:
        if not self.path.exists():
            return []
        return [ReviewComment.from_dict(obj) for obj in _read_jsonl(self.path)]

    def add(self, comments: Iterable[ReviewComment]) -> int:
        """Append comments whose id is not stored yet; returns how many were new."""
        with self._lock:
            known = self.ids()
            new = []
            for c in comments:
                if c.id not in known:
                    known.add(c.id)
                    new.append(c)
            if new:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    for c in new:
                        fh.write(json.dumps(c.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            return len(new)


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def load_comments(path: str | Path) -> list[ReviewComment]:
    return [ReviewComment.from_dict(obj) for obj in _read_jsonl(Path(path))]


def load_corpus(path: str | Path) -> list[LabeledReview]:
    """Load the labeled reviews of a corpus file, skipping unlabeled rows."""
    return [LabeledReview.from_dict(obj) for obj in _read_jsonl(Path(path)) if obj.get("clarity")]


def save_corpus(corpus: Sequence[LabeledReview], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for review in corpus:
            fh.write(json.dumps(review.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# mining

@dataclass
class HostConfig:
    repos: list[str]
    base_url: str = "https://api.github.com"
    token: str | None = None
    per_page: int = 100


def _fetch_repo(client: GitHubClient, repo: str, since: datetime, until: datetime, per_page: int) -> list[ReviewComment]:
    project = repo.split("/")[-1]
    found = []
    for obj in client.list_review_comments(repo, since=format_timestamp(since), per_page=per_page):
        comment = ReviewComment.from_github(obj, project)
        if since <= comment.created_at <= until:
            found.append(comment)
    log.info("fetched %d review comments from %s", len(found), repo)
    return found


def ingest_from_host(
    config: HostConfig,
    since: str | datetime,
    until: str | datetime,
    store: CorpusStore | None = None,
    client: GitHubClient | None = None,
    max_workers: int = 4,
) -> list[ReviewComment]:
    """Mine all pull-request review comments created in ``[since, until]``.

    Repositories are fetched concurrently; the result is deduplicated by id
    and, when ``store`` is given, appended to it.
    """
    if not config.repos:
        return []
    since, until = parse_timestamp(since), parse_timestamp(until)
    if client is None:
        client = GitHubClient(config.base_url, token=config.token)
    if not client.token:
        raise AuthError("no API token configured (set EDRE_TOKEN)")

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(config.repos)))) as pool:
        batches = list(pool.map(lambda r: _fetch_repo(client, r, since, until, config.per_page), config.repos))

    seen: set[str] = set()
    comments = []
    for batch in batches:
        for c in batch:
            if c.id not in seen:
                seen.add(c.id)
                comments.append(c)
    if store is not None:
        added = store.add(comments)
        log.info("stored %d new comments (%d already present)", added, len(comments) - added)
    return comments


# --------------------------------------------------------------------------
# labels

LABEL_HEADER = ["review_id", "rater_id", "label"]


def load_labels(path: str | Path) -> list[RaterLabel]:
    labels = []
    seen = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != LABEL_HEADER:
            raise LabelFileError(f"{path}:1: expected header {','.join(LABEL_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3 or not row[0].strip() or not row[1].strip():
                raise LabelFileError(f"{path}:{lineno}: malformed row {row!r}")
            review_id, rater_id, text = (cell.strip() for cell in row)
            try:
                clarity = Clarity.parse(text)
            except ValueError as exc:
                raise LabelFileError(f"{path}:{lineno}: {exc}") from None
            if (review_id, rater_id) in seen:
                raise LabelFileError(f"{path}:{lineno}: duplicate vote by {rater_id} on {review_id}")
            seen.add((review_id, rater_id))
            labels.append(RaterLabel(review_id, rater_id, clarity))
    return labels


def majority_label(vote_counts: dict) -> Clarity:
    """Plurality label; ties go to the least clear of the tied labels."""
    top = max(vote_counts.values())
    return min(c for c, n in vote_counts.items() if n == top)


def aggregate_majority(
    labels: Sequence[RaterLabel],
    comments: Sequence[ReviewComment],
    min_votes: int = 1,
) -> list[LabeledReview]:
    by_id = {c.id: c for c in comments}
    votes: dict[str, Counter] = {}
    for lab in labels:
        if lab.review_id not in by_id:
            raise CorpusError(f"label references unknown review {lab.review_id!r}")
        votes.setdefault(lab.review_id, Counter())[lab.clarity] += 1

    result = []
    for c in comments:
        counts = votes.get(c.id)
        if not counts or sum(counts.values()) < max(1, min_votes):
            continue
        vote_counts = {k: counts.get(k, 0) for k in Clarity}
        result.append(LabeledReview(c, majority_label(counts), vote_counts))
    return result


def corpus_stats(corpus: Sequence[LabeledReview]) -> CorpusStats:
    n = len(corpus)
    if n == 0:
        return CorpusStats(0, 0.0, 0.0, {c: 0.0 for c in Clarity})
    words = sum(len(r.body.split()) for r in corpus)
    chars = sum(len(r.body) for r in corpus)
    counts = Counter(r.clarity for r in corpus)
    return CorpusStats(n, words / n, chars / n, {c: counts.get(c, 0) / n for c in Clarity})


# --------------------------------------------------------------------------
# bundled sample

def sample_paths() -> tuple[Path, Path]:
    """Paths of the bundled 12-comment sample and its rater labels."""
    root = resources.files("edre.data")
    return Path(str(root.joinpath("sample_comments.jsonl"))), Path(str(root.joinpath("sample_labels.csv")))


def sample_corpus() -> list[LabeledReview]:
    comments_path, labels_path = sample_paths()
    return aggregate_majority(load_labels(labels_path), load_comments(comments_path))
