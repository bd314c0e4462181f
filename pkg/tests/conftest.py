import json
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import pytest

from edre.corpus import Clarity, LabeledReview, ReviewComment

GOLDEN = Path(__file__).parent / "golden"


class MockHost:
    """Scripted GitHub-compatible server.

    ``script[(method, path)]`` is a list of responses consumed in order; the
    last one repeats.  A response is ``(status, json_body)`` or
    ``(status, json_body, headers)``.  Every request is recorded.
    """

    def __init__(self):
        self.script = {}
        self.requests = []
        self.lock = threading.Lock()
        self._next_id = 1000
        host = self

        class Handler(BaseHTTPRequestHandler):
            def _reply(self, method):
                parsed = urlparse(self.path)
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                with host.lock:
                    host.requests.append({
                        "method": method,
                        "path": parsed.path,
                        "query": {k: v[0] for k, v in parse_qs(parsed.query).items()},
                        "headers": dict(self.headers.items()),
                        "json": json.loads(raw) if raw else None,
                    })
                    queue = host.script.get((method, parsed.path))
                    if queue:
                        resp = queue.pop(0) if len(queue) > 1 else queue[0]
                    elif method == "POST":
                        host._next_id += 1
                        resp = (201, {"id": host._next_id})
                    else:
                        resp = (404, {"message": "Not Found"})
                status, body = resp[0], resp[1]
                headers = resp[2] if len(resp) > 2 else {}
                data = json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                for k, v in headers.items():
                    self.send_header(k, v)
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._reply("GET")

            def do_POST(self):
                self._reply("POST")

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    def posts(self):
        return [r for r in self.requests if r["method"] == "POST"]


@pytest.fixture
def mock_host():
    host = MockHost()
    host.thread.start()
    yield host
    host.server.shutdown()
    host.server.server_close()


def make_review(rid, body, clarity, project="Alpha", day=1):
    comment = ReviewComment(
        id=rid,
        project=project,
        author="dev",
        created_at=datetime(2019, 3, day, tzinfo=timezone.utc),
        body=body,
        thread_url=f"https://example.invalid/{project.lower()}/pull/1#discussion_{rid}",
    )
    return LabeledReview(comment, clarity, {clarity: 1})


@pytest.fixture
def toy_corpus():
    rows = [
        ("t01", "Please add a docstring to this helper", Clarity.CLEAR),
        ("t02", "Fix the typo in the error message", Clarity.CLEAR),
        ("t03", "Add a docstring and fix the typo", Clarity.CLEAR),
        ("t04", "Extract this constant into settings", Clarity.CLEAR),
        ("t05", "Simplify the naming for readability", Clarity.SOMEWHAT_CLEAR),
        ("t06", "Cleanup naming here for readability", Clarity.SOMEWHAT_CLEAR),
        ("t07", "This looks somehow weird", Clarity.SOMEWHAT_UNCLEAR),
        ("t08", "Odd and weird, somehow", Clarity.SOMEWHAT_UNCLEAR),
        ("t09", "Huh confusing", Clarity.UNCLEAR),
        ("t10", "Confusing, unclear, huh", Clarity.UNCLEAR),
    ]
    return [make_review(*r) for r in rows]


@pytest.fixture(scope="session")
def synthetic_small():
    from edre.synth import generate_reviews

    return generate_reviews(300, seed=3)


def fit_tfidf(corpus, algorithm="nb", config=None, seed=0, min_df=1):
    """Train on ``corpus`` with a TF-IDF vocabulary built from it."""
    from edre.embed import build_vocabulary, tfidf_matrix
    from edre.learners import train_matrix
    from edre.textprep import PrepConfig, preprocess

    prep = PrepConfig()
    docs = [preprocess(r.comment, prep) for r in corpus]
    vocab = build_vocabulary(docs, min_df, prep)
    X = tfidf_matrix(docs, vocab)
    return train_matrix(algorithm, X, [r.clarity for r in corpus], config, seed, vocab.fingerprint, vocab)


@pytest.fixture
def toy_artifacts(toy_corpus):
    from edre.retrieval import build_index

    model = fit_tfidf(toy_corpus)
    return model, build_index(toy_corpus, model.embedding, min_similarity=0.0)
