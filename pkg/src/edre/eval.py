"""Evaluation protocol: stratified folds, hold-out split, metrics, grid search, reports."""
from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from edre.corpus import Clarity, LabeledReview
from edre.embed import ExternalEmbedding, build_vocabulary, stack_vectors, tfidf_matrix
from edre.learners import Algorithm, TrainingError, predict_matrix, resolve_config, train_matrix
from edre.serial import canonical_dumps, read_document, write_document
from edre.textprep import PrepConfig, TokenDoc, preprocess

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
CLASSES = tuple(Clarity)
# display order of classifiers in benchmark tables
TABLE_ORDER = (Algorithm.RF, Algorithm.NB, Algorithm.LOGREG, Algorithm.SVM, Algorithm.GBRT)
TABLE_NAMES = {
    Algorithm.RF: "Random Forest",
    Algorithm.NB: "Naive Bayes",
    Algorithm.LOGREG: "Logistic Regression",
    Algorithm.SVM: "SVM",
    Algorithm.GBRT: "GBRT",
}


class EvaluationError(ValueError):
    pass


# --------------------------------------------------------------------------
# splits

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict
    seed: int

    def test_ids(self, fold: int) -> list[str]:
        return sorted(rid for rid, f in self.assignments.items() if f == fold)

    def train_ids(self, fold: int) -> list[str]:
        return sorted(rid for rid, f in self.assignments.items() if f != fold)

    def fold_sizes(self) -> list[int]:
        return np.bincount(list(self.assignments.values()), minlength=self.k).tolist()


def _by_class(corpus: Sequence[LabeledReview]) -> dict:
    groups: dict[Clarity, list[str]] = {}
    for r in corpus:
        groups.setdefault(r.clarity, []).append(r.id)
    return {c: sorted(ids) for c, ids in sorted(groups.items())}


def stratified_kfold(corpus: Sequence[LabeledReview], k: int, seed: int = 0) -> FoldPlan:
    """Assign every review to one of ``k`` folds, balancing each class.

    Members of each class are shuffled, the classes are concatenated in label
    order, and the i-th review of that sequence goes to fold ``i mod k``.
    Both fold sizes and per-class fold counts therefore differ by at most one.
    """
    if k < 2:
        raise EvaluationError(f"k must be at least 2, got {k}")
    if k > len(corpus):
        raise EvaluationError(f"k={k} exceeds corpus size {len(corpus)}")
    if len({r.id for r in corpus}) != len(corpus):
        raise EvaluationError("corpus contains duplicate review ids")
    groups = _by_class(corpus)
    if len(groups) < 2:
        raise EvaluationError("stratified folds need at least 2 classes")
    rng = np.random.default_rng(seed)
    order = []
    for ids in groups.values():
        order.extend(ids[i] for i in rng.permutation(len(ids)))
    return FoldPlan(k, {rid: i % k for i, rid in enumerate(order)}, int(seed))


def _largest_remainder(sizes: list[int], total: int) -> list[int]:
    n = sum(sizes)
    quotas = [Fraction(s * total, n) for s in sizes]
    alloc = [int(q) for q in quotas]
    by_remainder = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in by_remainder[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


def holdout_split(
    corpus: Sequence[LabeledReview], test_fraction: float = 0.2, seed: int = 0
) -> tuple[list[LabeledReview], list[LabeledReview]]:
    """Stratified train/test split with ``round(test_fraction * N)`` test reviews."""
    if not 0 < test_fraction < 1:
        raise EvaluationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if not corpus:
        raise EvaluationError("cannot split an empty corpus")
    n_test = int(Fraction(test_fraction) * len(corpus) + Fraction(1, 2))
    groups = _by_class(corpus)
    alloc = _largest_remainder([len(ids) for ids in groups.values()], n_test)
    rng = np.random.default_rng(seed)
    test_ids = set()
    for ids, m in zip(groups.values(), alloc):
        test_ids.update(ids[i] for i in rng.permutation(len(ids))[:m])
    train = [r for r in corpus if r.id not in test_ids]
    test = [r for r in corpus if r.id in test_ids]
    return train, test


# --------------------------------------------------------------------------
# metrics

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[predicted, actual]`` by clarity value."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (4, 4) or (counts < 0).any():
            raise EvaluationError("confusion matrix must be a 4x4 array of non-negative counts")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_predictions(cls, predicted: Sequence, actual: Sequence) -> "ConfusionMatrix":
        if len(predicted) != len(actual):
            raise EvaluationError("predicted and actual labels differ in length")
        counts = np.zeros((4, 4), dtype=np.int64)
        np.add.at(counts, (np.asarray(predicted, dtype=int), np.asarray(actual, dtype=int)), 1)
        return cls(counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def exact_accuracy(self) -> Fraction:
        if self.total == 0:
            raise EvaluationError("accuracy of an empty confusion matrix is undefined")
        return Fraction(self.trace, self.total)

    def format(self) -> str:
        order = sorted(Clarity, reverse=True)
        width = max(len(c.label) for c in order) + 2
        lines = ["predicted \\ actual".ljust(width + 2) + "".join(c.label.rjust(width) for c in order)]
        for p in order:
            row = "".join(str(self.counts[p, a]).rjust(width) for a in order)
            lines.append(p.label.ljust(width + 2) + row)
        return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    precision: dict
    recall: dict
    f1: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    confusion: ConfusionMatrix
    flags: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": {c.label: v for c, v in sorted(self.precision.items())},
            "recall": {c.label: v for c, v in sorted(self.recall.items())},
            "f1": {c.label: v for c, v in sorted(self.f1.items())},
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "confusion": self.confusion.counts.tolist(),
            "flags": list(self.flags),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        per_class = lambda d: {Clarity.parse(k): float(v) for k, v in d.items()}  # noqa: E731
        return cls(
            precision=per_class(obj["precision"]),
            recall=per_class(obj["recall"]),
            f1=per_class(obj["f1"]),
            macro_precision=float(obj["macro_precision"]),
            macro_recall=float(obj["macro_recall"]),
            macro_f1=float(obj["macro_f1"]),
            accuracy=float(obj["accuracy"]),
            confusion=ConfusionMatrix(np.array(obj["confusion"])),
            flags=list(obj.get("flags", [])),
            provenance=dict(obj.get("provenance", {})),
        )


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def compute_metrics(confusion: ConfusionMatrix, provenance: dict | None = None) -> MetricsReport:
    """Per-class and macro precision/recall/F1 plus accuracy.

    A 0/0 precision or recall is reported as 0 and listed in ``flags``.
    Macro recall and F1 average over classes present in the data (nonzero
    column); macro precision also includes classes that were only predicted.
    """
    M = confusion.counts
    if confusion.total == 0:
        raise EvaluationError("cannot compute metrics from an all-zero confusion matrix")
    rows, cols = M.sum(axis=1), M.sum(axis=0)
    precision, recall, f1, flags = {}, {}, {}, []
    for c in CLASSES:
        if rows[c] == 0:
            precision[c] = 0.0
            flags.append(f"precision:{c.label}:0/0")
        else:
            precision[c] = M[c, c] / rows[c]
        if cols[c] == 0:
            recall[c] = 0.0
            flags.append(f"recall:{c.label}:0/0")
        else:
            recall[c] = M[c, c] / cols[c]
        f1[c] = _f1(precision[c], recall[c])
    present = [c for c in CLASSES if cols[c] > 0]
    seen = [c for c in CLASSES if cols[c] > 0 or rows[c] > 0]
    return MetricsReport(
        precision={c: float(v) for c, v in precision.items()},
        recall={c: float(v) for c, v in recall.items()},
        f1={c: float(v) for c, v in f1.items()},
        macro_precision=float(np.mean([precision[c] for c in seen])),
        macro_recall=float(np.mean([recall[c] for c in present])),
        macro_f1=float(np.mean([f1[c] for c in present])),
        accuracy=float(confusion.exact_accuracy()),
        confusion=confusion,
        flags=flags,
        provenance=dict(provenance or {}),
    )


def average_reports(reports: Sequence[MetricsReport], provenance: dict | None = None) -> MetricsReport:
    """Unweighted mean of fold reports; the confusion matrix is pooled."""
    if not reports:
        raise EvaluationError("no reports to average")
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    pooled = reports[0].confusion
    for r in reports[1:]:
        pooled = pooled + r.confusion
    flags = sorted({f for r in reports for f in r.flags})
    return MetricsReport(
        precision={c: mean([r.precision[c] for r in reports]) for c in CLASSES},
        recall={c: mean([r.recall[c] for r in reports]) for c in CLASSES},
        f1={c: mean([r.f1[c] for r in reports]) for c in CLASSES},
        macro_precision=mean([r.macro_precision for r in reports]),
        macro_recall=mean([r.macro_recall for r in reports]),
        macro_f1=mean([r.macro_f1 for r in reports]),
        accuracy=mean([r.accuracy for r in reports]),
        confusion=pooled,
        flags=flags,
        provenance=dict(provenance or {}),
    )


# --------------------------------------------------------------------------
# featurization shared by both protocols

def embedding_name(embedding) -> str:
    if isinstance(embedding, ExternalEmbedding):
        return embedding.name
    if embedding in (None, "tfidf"):
        return "tfidf"
    raise EvaluationError(f"unknown embedding {embedding!r}; use 'tfidf' or an ExternalEmbedding")


class _Featurizer:
    """Caches preprocessing so that folds only rebuild the vocabulary."""

    def __init__(self, corpus: Sequence[LabeledReview], embedding, prep: PrepConfig | None, min_df: int):
        self.embedding = embedding
        self.prep = prep or PrepConfig()
        self.min_df = min_df
        self.labels = {r.id: r.clarity for r in corpus}
        if isinstance(embedding, ExternalEmbedding):
            missing = [r.id for r in corpus if r.id not in embedding]
            if missing:
                raise EvaluationError(f"external embedding has no vector for review {missing[0]!r}")
            self.docs = None
        else:
            embedding_name(embedding)
            self.docs: dict[str, TokenDoc] | None = {r.id: preprocess(r.comment, self.prep) for r in corpus}

    def matrices(self, train_ids: Sequence[str], test_ids: Sequence[str]):
        if self.docs is None:
            X_train = stack_vectors([self.embedding.vector(i) for i in train_ids])
            X_test = stack_vectors([self.embedding.vector(i) for i in test_ids])
            return X_train, X_test, self.embedding.fingerprint, None
        train_docs = [self.docs[i] for i in train_ids]
        vocab = build_vocabulary(train_docs, self.min_df, self.prep)
        X_train = tfidf_matrix(train_docs, vocab)
        X_test = tfidf_matrix([self.docs[i] for i in test_ids], vocab)
        return X_train, X_test, vocab.fingerprint, vocab


@dataclass(frozen=True)
class FoldResult:
    repeat: int
    fold: int
    train_ids: tuple
    test_ids: tuple
    vocabulary: object
    report: MetricsReport


def _evaluate_split(featurizer, algorithm, config, train_ids, test_ids, seed) -> tuple[MetricsReport, object]:
    X_train, X_test, fp, vocab = featurizer.matrices(train_ids, test_ids)
    y_train = [featurizer.labels[i] for i in train_ids]
    model = train_matrix(algorithm, X_train, y_train, config, seed, fp, vocab)
    predicted, _, _ = predict_matrix(model, X_test)
    actual = [featurizer.labels[i] for i in test_ids]
    return compute_metrics(ConfusionMatrix.from_predictions(predicted, actual)), vocab


def _provenance(algorithm, config, embedding, protocol, k, repeats, seed, **extra) -> dict:
    out = {
        "algorithm": Algorithm.parse(algorithm).value,
        "config": config,
        "embedding": embedding_name(embedding),
        "protocol": protocol,
        "k": k,
        "repeats": repeats,
        "seed": int(seed),
        "averaging": "macro",
    }
    out.update(extra)
    return out


def cross_validate(
    algorithm,
    config: dict | None,
    embedding,
    corpus: Sequence[LabeledReview],
    k: int = 5,
    repeats: int = 5,
    seed: int = 0,
    prep: PrepConfig | None = None,
    min_df: int = 1,
    max_workers: int = 1,
    on_fold: Callable[[FoldResult], None] | None = None,
) -> MetricsReport:
    """Repeated stratified k-fold cross-validation.

    Each repeat draws a fresh fold plan; the TF-IDF vocabulary is rebuilt
    from each training split.  Metrics are averaged over all ``k * repeats``
    test folds and the confusion matrix is pooled.
    """
    algorithm = Algorithm.parse(algorithm)
    config = resolve_config(algorithm, config)
    if repeats < 1:
        raise EvaluationError(f"repeats must be at least 1, got {repeats}")
    featurizer = _Featurizer(corpus, embedding, prep, min_df)
    seeds = np.random.SeedSequence(seed).generate_state(2 * repeats)
    jobs = []
    for r in range(repeats):
        plan = stratified_kfold(corpus, k, int(seeds[2 * r]))
        for f in range(k):
            jobs.append((r, f, plan.train_ids(f), plan.test_ids(f), int(seeds[2 * r + 1]) + f))

    def run(job):
        r, f, train_ids, test_ids, train_seed = job
        try:
            report, vocab = _evaluate_split(featurizer, algorithm, config, train_ids, test_ids, train_seed)
        except TrainingError as exc:
            raise TrainingError(f"repeat {r} fold {f}: {exc}") from exc
        log.debug("repeat %d fold %d: accuracy %.4f", r, f, report.accuracy)
        return FoldResult(r, f, tuple(train_ids), tuple(test_ids), vocab, report)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    results.sort(key=lambda fr: (fr.repeat, fr.fold))
    if on_fold is not None:
        for fr in results:
            on_fold(fr)
    provenance = _provenance(algorithm, config, embedding, "repeated-kfold", k, repeats, seed)
    return average_reports([fr.report for fr in results], provenance)


def holdout_evaluate(
    algorithm,
    config: dict | None,
    embedding,
    corpus: Sequence[LabeledReview],
    test_fraction: float = 0.2,
    seed: int = 0,
    prep: PrepConfig | None = None,
    min_df: int = 1,
) -> MetricsReport:
    """Train on a stratified split and score the held-out part once."""
    algorithm = Algorithm.parse(algorithm)
    config = resolve_config(algorithm, config)
    train, test = holdout_split(corpus, test_fraction, seed)
    featurizer = _Featurizer(corpus, embedding, prep, min_df)
    report, _ = _evaluate_split(featurizer, algorithm, config, [r.id for r in train], [r.id for r in test], seed)
    report.provenance = _provenance(
        algorithm, config, embedding, "holdout", 1, 1, seed, test_fraction=test_fraction, n_train=len(train), n_test=len(test)
    )
    return report


def expand_grid(grid: dict) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise EvaluationError("hyperparameter grid must be nonempty")
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def grid_search(
    algorithm,
    grid: dict,
    embedding,
    corpus: Sequence[LabeledReview],
    k: int = 5,
    seed: int = 0,
    repeats: int = 1,
    prep: PrepConfig | None = None,
) -> tuple[dict, list[tuple[dict, MetricsReport]]]:
    """Cross-validate every grid cell; best = max macro-F1, then accuracy, then smaller config."""
    rows = []
    for cell in expand_grid(grid):
        report = cross_validate(algorithm, cell, embedding, corpus, k=k, repeats=repeats, seed=seed, prep=prep)
        rows.append((report.provenance["config"], report))
    best = min(rows, key=lambda row: (-row[1].macro_f1, -row[1].accuracy, canonical_dumps(row[0])))
    return best[0], rows


# --------------------------------------------------------------------------
# reports

CSV_COLUMNS = ["algorithm", "embedding", "protocol", "k", "repeats", "seed", "class", "precision", "recall", "f1", "accuracy"]


def save_report(report: MetricsReport, path) -> None:
    write_document(path, "edre-report", REPORT_FORMAT_VERSION, report.provenance, report.to_dict())


def load_report(path) -> MetricsReport:
    _, body = read_document(path, "edre-report", REPORT_FORMAT_VERSION)
    return MetricsReport.from_dict(body)


def _table_key(report: MetricsReport):
    algo = Algorithm.parse(report.provenance.get("algorithm", "nb"))
    return TABLE_ORDER.index(algo)


def render_table(reports: Sequence[MetricsReport]) -> str:
    """Classifier x embedding table of macro precision, recall, F-score and accuracy."""
    embeddings = sorted({r.provenance.get("embedding", "tfidf") for r in reports}, key=lambda e: (e != "tfidf", e))
    cells = {}
    for r in reports:
        key = (Algorithm.parse(r.provenance["algorithm"]), r.provenance.get("embedding", "tfidf"))
        if key in cells:
            raise EvaluationError(f"two reports for {key[0].value} with embedding {key[1]}")
        cells[key] = r
    name_w = max(len("EMBEDDING"), *(len(TABLE_NAMES[a]) for a, _ in cells))
    group_w = 4 * 10
    head1 = "EMBEDDING".ljust(name_w) + "".join(("  " + e).ljust(group_w) for e in embeddings)
    head2 = " " * name_w + "".join(
        "".join(h.rjust(10) for h in ("Precision", "Recall", "F-Score", "Acc.")) for _ in embeddings
    )
    lines = [head1.rstrip(), head2]
    for algo in TABLE_ORDER:
        if not any((algo, e) in cells for e in embeddings):
            continue
        parts = [TABLE_NAMES[algo].ljust(name_w)]
        for e in embeddings:
            r = cells.get((algo, e))
            values = (r.macro_precision, r.macro_recall, r.macro_f1, r.accuracy) if r else (None,) * 4
            parts.append("".join(("-" if v is None else f"{v:.4f}").rjust(10) for v in values))
        lines.append("".join(parts))
    return "\n".join(lines) + "\n"


def render_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(reports, key=lambda r: (_table_key(r), r.provenance.get("embedding", ""))):
        p = r.provenance
        lead = [p.get("algorithm"), p.get("embedding"), p.get("protocol"), p.get("k"), p.get("repeats"), p.get("seed")]
        for c in CLASSES:
            writer.writerow(lead + [c.label, repr(r.precision[c]), repr(r.recall[c]), repr(r.f1[c]), repr(r.accuracy)])
        writer.writerow(lead + ["MACRO", repr(r.macro_precision), repr(r.macro_recall), repr(r.macro_f1), repr(r.accuracy)])
    return buf.getvalue()


def read_report_csv(text: str) -> list[dict]:
    """Parse :func:`render_csv` output back into typed rows."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_COLUMNS:
        raise EvaluationError(f"unexpected report columns {reader.fieldnames}")
    rows = []
    for row in reader:
        for key in ("k", "repeats", "seed"):
            row[key] = int(row[key])
        for key in ("precision", "recall", "f1", "accuracy"):
            row[key] = float(row[key])
        rows.append(row)
    return rows


def render_report(reports: Sequence[MetricsReport]) -> tuple[str, str]:
    """Text benchmark table followed by one confusion matrix per report, and the CSV."""
    parts = [render_table(reports)]
    for r in sorted(reports, key=lambda r: (_table_key(r), r.provenance.get("embedding", ""))):
        p = r.provenance
        parts.append(
            f"\n{TABLE_NAMES[Algorithm.parse(p['algorithm'])]} / {p.get('embedding')} "
            f"({p.get('protocol')}, k={p.get('k')}, repeats={p.get('repeats')}, seed={p.get('seed')})\n"
        )
        parts.append(r.confusion.format())
    return "".join(parts), render_csv(reports)
