"""Command-line entry point: ``edre <command> [options]``.

Any option can also come from an INI file passed with ``--config``; keys
in its ``[edre]`` section use the option's long name with dashes replaced
by underscores (``min_df = 2``).  Options given on the command line win.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from edre.corpus import (
    CorpusStore,
    HostConfig,
    aggregate_majority,
    corpus_stats,
    ingest_from_host,
    load_comments,
    load_corpus,
    load_labels,
    sample_corpus,
    save_corpus,
)
from edre.embed import build_vocabulary, load_external_vectors, stack_vectors, tfidf_matrix
from edre.learners import DEFAULT_GRIDS, Algorithm, save_model, train_matrix
from edre.serial import canonical_dumps

log = logging.getLogger("edre")

PROTOCOLS = ("holdout", "repeated-kfold")


def _value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _param(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), _value(value.strip())


def _grid_axis(text: str) -> tuple[str, list]:
    key, sep, values = text.partition("=")
    if not sep or not key or not values:
        raise argparse.ArgumentTypeError(f"expected key=v1,v2,..., got {text!r}")
    return key.strip(), [_value(v.strip()) for v in values.split(",")]


def _algorithm(text: str) -> Algorithm:
    try:
        return Algorithm.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _orders(text: str) -> tuple[int, ...]:
    try:
        orders = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not orders or min(orders) < 1:
        raise argparse.ArgumentTypeError("n-gram orders must be >= 1")
    return orders


# --------------------------------------------------------------------------
# helpers shared by commands

def _prep(args):
    from edre.textprep import PrepConfig, load_stoplist

    kwargs = {"ngram_orders": args.ngrams}
    if args.stopwords:
        kwargs["stopword_list"] = load_stoplist(args.stopwords)
    return PrepConfig(**kwargs)


def _corpus(args):
    if args.corpus is None:
        print("note: using the bundled 12-review sample corpus", file=sys.stderr)
        return sample_corpus()
    return load_corpus(args.corpus)


def _seed(args) -> int:
    if args.seed is None:
        args.seed = 0
        print("seed: 0 (default)", file=sys.stderr)
    return args.seed


def _write(text: str, path) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _embedding(args):
    return load_external_vectors(args.vectors) if args.vectors else "tfidf"


# --------------------------------------------------------------------------
# commands

def cmd_ingest(args) -> int:
    config = HostConfig(repos=args.repo or [], base_url=args.base_url, per_page=args.per_page)
    comments = ingest_from_host(config, args.since, args.until, store=CorpusStore(args.out))
    print(f"fetched {len(comments)} review comments into {args.out}")
    return 0


def cmd_labels(args) -> int:
    corpus = aggregate_majority(load_labels(args.labels), load_comments(args.comments), min_votes=args.min_votes)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} labeled reviews to {args.out}")
    return 0


def cmd_stats(args) -> int:
    _write(corpus_stats(_corpus(args)).format_table(), args.out)
    return 0


def cmd_train(args) -> int:
    seed = _seed(args)
    corpus = _corpus(args)
    labels = [r.clarity for r in corpus]
    config = dict(args.param or [])
    if args.vectors:
        emb = load_external_vectors(args.vectors)
        X = stack_vectors([emb.vector(r.id) for r in corpus])
        model = train_matrix(args.algorithm, X, labels, config, seed, emb.fingerprint)
    else:
        from edre.textprep import preprocess

        prep = _prep(args)
        docs = [preprocess(r.comment, prep) for r in corpus]
        vocab = build_vocabulary(docs, args.min_df, prep)
        model = train_matrix(args.algorithm, tfidf_matrix(docs, vocab), labels, config, seed, vocab.fingerprint, vocab)
    save_model(model, args.out)
    print(f"trained {model.algorithm.value} on {len(corpus)} reviews (seed {seed}); model written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from edre.eval import cross_validate, holdout_evaluate, render_report, save_report

    seed = _seed(args)
    corpus = _corpus(args)
    config = dict(args.param or [])
    if args.protocol == "holdout":
        report = holdout_evaluate(args.algorithm, config, _embedding(args), corpus, args.test_fraction, seed, _prep(args), args.min_df)
    else:
        report = cross_validate(
            args.algorithm, config, _embedding(args), corpus, args.k, args.repeats, seed, _prep(args), args.min_df
        )
    if args.out:
        save_report(report, args.out)
    text, _ = render_report([report])
    sys.stdout.write(text)
    return 0


def cmd_gridsearch(args) -> int:
    from edre.eval import grid_search

    seed = _seed(args)
    algorithm = Algorithm.parse(args.algorithm)
    grid = dict(args.grid) if args.grid else DEFAULT_GRIDS[algorithm]
    best, rows = grid_search(algorithm, grid, _embedding(args), _corpus(args), args.k, seed, args.repeats, _prep(args))
    lines = [f"{'config':<48}{'macro-F1':>10}{'Acc.':>10}"]
    for config, report in rows:
        shown = canonical_dumps({k: config[k] for k in sorted(grid)})
        lines.append(f"{shown:<48}{report.macro_f1:>10.4f}{report.accuracy:>10.4f}")
    lines.append(f"best: {canonical_dumps({k: best[k] for k in sorted(grid)})}")
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_report(args) -> int:
    from edre.eval import load_report, render_report

    text, csv_text = render_report([load_report(p) for p in args.reports])
    _write(text, args.out)
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    return 0


def cmd_index(args) -> int:
    from edre.learners import load_model
    from edre.retrieval import build_index, save_index

    corpus = _corpus(args)
    if args.vectors:
        embedding = load_external_vectors(args.vectors)
    else:
        model = load_model(args.model)
        if model.embedding is None:
            raise ValueError(f"{args.model} carries no TF-IDF vocabulary; pass --vectors instead")
        embedding = model.embedding
    index = build_index(corpus, embedding, args.min_similarity)
    save_index(index, args.out)
    print(f"indexed {len(index)} clear or somewhat clear reviews into {args.out}")
    return 0


def cmd_explain(args) -> int:
    from edre.learners import load_model
    from edre.retrieval import explain, load_index

    decision = explain(args.text, load_model(args.model), load_index(args.index), k=args.top, project=args.project)
    if args.json:
        print(json.dumps(decision.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
        return 0
    flag = " (low confidence: no known terms)" if decision.low_confidence else ""
    print(f"clarity: {decision.clarity.label}{flag}")
    print("scores:  " + "  ".join(f"{k}={v:.4f}" for k, v in decision.scores.as_dict().items()))
    if not decision.needs_explanation:
        print("no examples needed")
    elif not decision.hits:
        print("no similar clear examples found")
    else:
        for hit in decision.hits:
            print(f"{hit.rank}. [{hit.similarity:.2f}] {hit.review_id}: {hit.body}")
            if hit.thread_url:
                print(f"   {hit.thread_url}")
    return 0


def cmd_serve(args) -> int:
    from edre.host import GitHubClient
    from edre.learners import load_model
    from edre.retrieval import load_index
    from edre.service import PostedRecord, WebhookApp, serve

    app = WebhookApp(
        load_model(args.model),
        load_index(args.index),
        GitHubClient(args.base_url),
        record=PostedRecord(args.posted_log),
    )
    serve(app, args.host, args.port)
    return 0


# --------------------------------------------------------------------------
# parser

class _Formatter(argparse.HelpFormatter):
    """Show defaults, except where there is none."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default not in (None, False, argparse.SUPPRESS) and "%(default)" not in text:
            text += " (default: %(default)s)"
        return text


def _add_corpus(p, required=False):
    p.add_argument("--corpus", required=required, help="labeled corpus (JSON Lines); default: bundled sample")


def _add_prep(p):
    p.add_argument("--ngrams", type=_orders, default="1,2,3", help="comma-separated n-gram orders")
    p.add_argument("--min-df", type=int, default=1, help="drop terms found in fewer documents")
    p.add_argument("--stopwords", help="stop-word file replacing the bundled list")


def _add_algorithm(p):
    p.add_argument("--algorithm", type=_algorithm, default="svm", help="nb, logreg, svm, rf or gbrt")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (0 when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edre", description="Review clarity classification and example retrieval.")
    parser.add_argument("--config", help="INI file whose [edre] section sets option defaults")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("ingest", help="mine pull-request review comments", formatter_class=_Formatter)
    p.add_argument("--repo", action="append", help="owner/name; repeat for several repositories")
    p.add_argument("--since", required=True, help="ISO-8601 start of the window")
    p.add_argument("--until", required=True, help="ISO-8601 end of the window")
    p.add_argument("--out", required=True, help="comment store (JSON Lines, appended)")
    p.add_argument("--base-url", default="https://api.github.com", help="REST API root")
    p.add_argument("--per-page", type=int, default=100, help="page size")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("labels", help="aggregate rater labels by majority vote", formatter_class=_Formatter)
    p.add_argument("--comments", required=True, help="comment store (JSON Lines)")
    p.add_argument("--labels", required=True, help="CSV with review_id,rater_id,label")
    p.add_argument("--min-votes", type=int, default=1, help="skip reviews with fewer votes")
    p.add_argument("--out", required=True, help="labeled corpus to write")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("stats", help="corpus size, lengths and label distribution", formatter_class=_Formatter)
    _add_corpus(p)
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a classifier", formatter_class=_Formatter)
    _add_corpus(p)
    _add_algorithm(p)
    p.add_argument("--param", type=_param, action="append", help="hyperparameter key=value; repeatable")
    p.add_argument("--vectors", help="precomputed vectors (id<TAB>values) instead of TF-IDF")
    _add_prep(p)
    _add_seed(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validate or hold-out evaluate", formatter_class=_Formatter)
    _add_corpus(p)
    _add_algorithm(p)
    p.add_argument("--param", type=_param, action="append", help="hyperparameter key=value; repeatable")
    p.add_argument("--vectors", help="precomputed vectors (id<TAB>values) instead of TF-IDF")
    p.add_argument("--protocol", choices=PROTOCOLS, default="repeated-kfold", help="evaluation protocol")
    p.add_argument("--k", type=int, default=5, help="folds per repeat")
    p.add_argument("--repeats", type=int, default=5, help="repeats of k-fold")
    p.add_argument("--test-fraction", type=float, default=0.2, help="hold-out test share")
    _add_prep(p)
    _add_seed(p)
    p.add_argument("--out", help="report file (JSON) for the report command")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="cross-validate a hyperparameter grid", formatter_class=_Formatter)
    _add_corpus(p)
    _add_algorithm(p)
    p.add_argument("--grid", type=_grid_axis, action="append", help="axis key=v1,v2; repeatable; default grid when omitted")
    p.add_argument("--vectors", help="precomputed vectors (id<TAB>values) instead of TF-IDF")
    p.add_argument("--k", type=int, default=5, help="folds per repeat")
    p.add_argument("--repeats", type=int, default=1, help="repeats of k-fold per grid cell")
    _add_prep(p)
    _add_seed(p)
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("report", help="render saved reports as a benchmark table", formatter_class=_Formatter)
    p.add_argument("reports", nargs="+", help="report files written by evaluate --out")
    p.add_argument("--csv", help="also write the CSV form here")
    p.add_argument("--out", help="write the text table here instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("index", help="build the example index", formatter_class=_Formatter)
    _add_corpus(p)
    p.add_argument("--model", help="model whose vocabulary defines the vector space")
    p.add_argument("--vectors", help="precomputed vectors (id<TAB>values) instead of TF-IDF")
    p.add_argument("--min-similarity", type=float, default=0.1, help="similarity floor for hits")
    p.add_argument("--out", required=True, help="index file to write")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("explain", help="classify one review and show similar clear examples", formatter_class=_Formatter)
    p.add_argument("--text", required=True, help="review comment text")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--top", type=int, default=5, help="number of examples")
    p.add_argument("--project", help="only show examples from this project")
    p.add_argument("--json", action="store_true", help="print the decision as JSON")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve", help="run the webhook bot", formatter_class=_Formatter)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8080, help="listen port")
    p.add_argument("--base-url", default="https://api.github.com", help="REST API root for posting")
    p.add_argument("--posted-log", default="posted.jsonl", help="append-only record of posted comments")
    p.set_defaults(func=cmd_serve)
    return parser


def _subparsers(parser) -> dict:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def apply_config_file(parser: argparse.ArgumentParser, path) -> None:
    """Turn the ``[edre]`` section of ``path`` into parser defaults."""
    ini = configparser.ConfigParser()
    if not ini.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config file not found: {path}")
    if not ini.has_section("edre"):
        raise ValueError(f"{path}: missing [edre] section")
    values = dict(ini.items("edre"))
    used = set()
    for sp in _subparsers(parser).values():
        defaults = {}
        for action in sp._actions:
            if action.dest not in values:
                continue
            raw = values[action.dest]
            used.add(action.dest)
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = ini.getboolean("edre", action.dest)
            elif isinstance(action, argparse._AppendAction):
                defaults[action.dest] = [action.type(v.strip()) if action.type else v.strip() for v in raw.split(";") if v.strip()]
            else:
                defaults[action.dest] = action.type(raw) if action.type else raw
            if action.required:
                action.required = False
        sp.set_defaults(**defaults)
    unknown = sorted(set(values) - used)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            apply_config_file(parser, known.config)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        log.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
