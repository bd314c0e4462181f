"""Webhook bot: classify new review comments and post clear examples back.

The HTTP layer is a thin wrapper around :class:`WebhookApp`, whose
``handle(headers, raw_body)`` does all the work and returns
``(status, json_body)`` so it can be exercised without sockets.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import threading
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Sequence

from edre.corpus import format_timestamp
from edre.host import GitHubClient, HostError
from edre.learners import TrainedModel, load_model
from edre.retrieval import Decision, ExampleHit, RetrievalIndex, explain, load_index

log = logging.getLogger(__name__)

SECRET_ENV = "EDRE_WEBHOOK_SECRET"
SIGNATURE_HEADER = "X-Hub-Signature-256"
QUOTE_LIMIT = 200
ELLIPSIS = "…"

ACTIONS = ("posted", "skipped-clear", "skipped-duplicate", "skipped-no-hits")

RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["action", "comment_id", "delivery_id", "clarity", "low_confidence", "hits", "posted_comment_id", "timestamp"],
    "properties": {
        "action": {"enum": list(ACTIONS)},
        "comment_id": {"type": "string"},
        "delivery_id": {"type": "string"},
        "clarity": {"type": ["string", "null"]},
        "low_confidence": {"type": "boolean"},
        "hits": {"type": "integer", "minimum": 0, "maximum": 5},
        "posted_comment_id": {"type": ["string", "null"]},
        "timestamp": {"type": "string"},
    },
    "additionalProperties": False,
}

ERROR_SCHEMA = {
    "type": "object",
    "required": ["error"],
    "properties": {
        "error": {"type": "string"},
        "fields": {"type": "object", "additionalProperties": {"type": "string"}},
        "comment_id": {"type": "string"},
        "queued_for_retry": {"type": "boolean"},
    },
    "additionalProperties": False,
}


class ServiceError(RuntimeError):
    pass


class ReloadError(ServiceError):
    pass


# --------------------------------------------------------------------------
# events

@dataclass(frozen=True)
class WebhookEvent:
    delivery_id: str
    repo: str
    pr_number: int
    comment_id: str
    comment_body: str
    comment_url: str = ""
    thread_id: str | None = None
    project: str | None = None


class PayloadError(ValueError):
    def __init__(self, fields: dict):
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(fields.items())))
        self.fields = fields


def _flatten_github(payload: dict) -> dict:
    """Map a native pull_request_review_comment payload onto the flat event fields."""
    comment = payload.get("comment") or {}
    pr = payload.get("pull_request") or {}
    repo = payload.get("repository") or {}
    return {
        "repo": repo.get("full_name"),
        "pr_number": pr.get("number"),
        "comment_id": comment.get("id"),
        "comment_body": comment.get("body"),
        "comment_url": comment.get("html_url", ""),
        "thread_id": comment.get("in_reply_to_id") or comment.get("id"),
    }


def parse_event(payload, delivery_header: str | None = None) -> WebhookEvent:
    if not isinstance(payload, dict):
        raise PayloadError({"body": "must be a JSON object"})
    if "comment" in payload and "pull_request" in payload:
        payload = {**_flatten_github(payload), "delivery_id": payload.get("delivery_id")}
    errors = {}
    delivery_id = payload.get("delivery_id") or delivery_header
    if not delivery_id:
        errors["delivery_id"] = "missing (payload field or X-GitHub-Delivery header)"
    repo = payload.get("repo")
    if not isinstance(repo, str) or "/" not in repo:
        errors["repo"] = "must be a string of the form owner/name"
    pr_number = payload.get("pr_number")
    if isinstance(pr_number, bool) or not isinstance(pr_number, int) or pr_number < 1:
        errors["pr_number"] = "must be a positive integer"
    comment_id = payload.get("comment_id")
    if isinstance(comment_id, bool) or not isinstance(comment_id, (str, int)) or str(comment_id) == "":
        errors["comment_id"] = "must be a nonempty string or integer"
    body = payload.get("comment_body")
    if not isinstance(body, str):
        errors["comment_body"] = "must be a string"
    url = payload.get("comment_url", "")
    if not isinstance(url, str):
        errors["comment_url"] = "must be a string"
    thread_id = payload.get("thread_id")
    if thread_id is not None and (isinstance(thread_id, bool) or not isinstance(thread_id, (str, int))):
        errors["thread_id"] = "must be a string or integer"
    if errors:
        raise PayloadError(errors)
    return WebhookEvent(
        delivery_id=str(delivery_id),
        repo=repo,
        pr_number=pr_number,
        comment_id=str(comment_id),
        comment_body=body,
        comment_url=url,
        thread_id=None if thread_id is None else str(thread_id),
        project=payload.get("project") if isinstance(payload.get("project"), str) else None,
    )


def sign(secret: str, raw_body: bytes) -> str:
    return "sha256=" + hmac.new(secret.encode("utf-8"), raw_body, hashlib.sha256).hexdigest()


def verify_signature(secret: str, raw_body: bytes, header: str | None) -> bool:
    if not header:
        return False
    return hmac.compare_digest(sign(secret, raw_body), header.strip())


# --------------------------------------------------------------------------
# explanation text

def _quote(text: str) -> str:
    text = " ".join(text.split())
    if len(text) > QUOTE_LIMIT:
        text = text[:QUOTE_LIMIT] + ELLIPSIS
    return text


def format_explanation(hits: Sequence[ExampleHit]) -> str:
    if not hits:
        raise ValueError("format_explanation needs at least one hit")
    lines = ["This review comment may be hard to act on. Similar comments that reviewers found clear:", ""]
    for hit in hits:
        lines.append(f"{hit.rank}. similarity {hit.similarity:.2f}")
        lines.append(f"   > {_quote(hit.body)}")
        lines.append(f"   {hit.thread_url or '(no link)'}")
    return "\n".join(lines) + "\n"


def post_comment(client: GitHubClient, repo: str, pr_number: int, body: str, in_reply_to: str | None = None) -> str:
    return client.post_comment(repo, pr_number, body, in_reply_to=in_reply_to)


# --------------------------------------------------------------------------
# state

class PostedRecord:
    """Append-only log of ``comment_id -> posted_comment_id``; replayed on open."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._posted: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        row = json.loads(line)
                        self._posted.setdefault(row["comment_id"], row["posted_comment_id"])
                    except (json.JSONDecodeError, KeyError, TypeError):
                        # a torn final write is the only expected corruption
                        log.warning("%s:%d: skipping unreadable record", self.path, lineno)

    def __contains__(self, comment_id: str) -> bool:
        return comment_id in self._posted

    def __len__(self) -> int:
        return len(self._posted)

    def get(self, comment_id: str) -> str | None:
        return self._posted.get(comment_id)

    def add(self, comment_id: str, posted_comment_id: str) -> None:
        with self._lock:
            if comment_id in self._posted:
                return
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"comment_id": comment_id, "posted_comment_id": posted_comment_id}) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._posted[comment_id] = posted_comment_id


@dataclass(frozen=True)
class Artifacts:
    model: TrainedModel
    index: RetrievalIndex

    def __post_init__(self):
        if self.model.embedding_fingerprint != self.index.embedding_fingerprint:
            raise ReloadError(
                f"model embedding {self.model.embedding_fingerprint} does not match "
                f"index embedding {self.index.embedding_fingerprint}"
            )


@dataclass(frozen=True)
class BotResponse:
    comment_id: str
    delivery_id: str
    action: str
    decision: Decision | None
    posted_comment_id: str | None
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "comment_id": self.comment_id,
            "delivery_id": self.delivery_id,
            "clarity": self.decision.clarity.label if self.decision else None,
            "low_confidence": bool(self.decision and self.decision.low_confidence),
            "hits": len(self.decision.hits) if self.decision else 0,
            "posted_comment_id": self.posted_comment_id,
            "timestamp": self.timestamp,
        }


def _utcnow() -> str:
    return format_timestamp(datetime.now(timezone.utc))


class WebhookApp:
    def __init__(
        self,
        model: TrainedModel,
        index: RetrievalIndex,
        client: GitHubClient,
        secret: str | None = None,
        record: PostedRecord | None = None,
        k: int = 5,
        clock: Callable[[], str] = _utcnow,
    ):
        secret = secret if secret is not None else os.environ.get(SECRET_ENV)
        if not secret:
            raise ServiceError(f"webhook secret is not configured (set {SECRET_ENV})")
        self._secret = secret
        self._artifacts = Artifacts(model, index)
        self._swap_lock = threading.Lock()
        self.client = client
        self.record = record if record is not None else PostedRecord()
        self.k = k
        self.clock = clock
        self._claim_lock = threading.Lock()
        self._claimed: set[str] = set()
        self._retry: deque = deque()

    @property
    def artifacts(self) -> Artifacts:
        return self._artifacts

    def reload_artifacts(self, model_path, index_path) -> dict:
        """Load a new model/index pair and swap it in; the old pair stays on any failure."""
        pair = Artifacts(load_model(model_path), load_index(index_path))
        with self._swap_lock:
            self._artifacts = pair
        log.info("reloaded artifacts (embedding %s)", pair.model.embedding_fingerprint)
        return self.health()

    def health(self) -> dict:
        pair = self._artifacts
        return {
            "status": "ok",
            "model_fingerprint": pair.model.embedding_fingerprint,
            "index_fingerprint": pair.index.embedding_fingerprint,
            "algorithm": pair.model.algorithm.value,
            "index_entries": len(pair.index),
        }

    # claims make the duplicate check atomic across concurrent deliveries
    def _claim(self, comment_id: str) -> bool:
        with self._claim_lock:
            if comment_id in self._claimed or comment_id in self.record:
                return False
            self._claimed.add(comment_id)
            return True

    def _release(self, comment_id: str) -> None:
        with self._claim_lock:
            self._claimed.discard(comment_id)

    def process(self, event: WebhookEvent) -> BotResponse:
        """Classify one event and post when needed; raises HostError if posting fails."""
        if not self._claim(event.comment_id):
            return BotResponse(event.comment_id, event.delivery_id, "skipped-duplicate", None, None, self.clock())
        pair = self._artifacts
        try:
            decision = explain(event.comment_body, pair.model, pair.index, k=self.k, project=event.project)
            if not decision.needs_explanation:
                action, posted = "skipped-clear", None
            elif not decision.hits:
                action, posted = "skipped-no-hits", None
            else:
                text = format_explanation(decision.hits)
                posted = post_comment(self.client, event.repo, event.pr_number, text, in_reply_to=event.thread_id)
                self.record.add(event.comment_id, posted)
                action = "posted"
        except BaseException:
            self._release(event.comment_id)
            raise
        log.info("comment %s: %s", event.comment_id, action)
        return BotResponse(event.comment_id, event.delivery_id, action, decision, posted, self.clock())

    def handle(self, headers: dict, raw_body: bytes) -> tuple[int, dict]:
        lower = {k.lower(): v for k, v in headers.items()}
        if not verify_signature(self._secret, raw_body, lower.get(SIGNATURE_HEADER.lower())):
            return 401, {"error": "invalid or missing signature"}
        try:
            payload = json.loads(raw_body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return 400, {"error": "malformed payload", "fields": {"body": f"not valid JSON ({exc})"}}
        try:
            event = parse_event(payload, lower.get("x-github-delivery"))
        except PayloadError as exc:
            return 400, {"error": "malformed payload", "fields": exc.fields}
        try:
            response = self.process(event)
        except HostError as exc:
            log.error("posting for comment %s failed: %s", event.comment_id, exc)
            self._retry.append(event)
            return 502, {"error": f"code host error: {exc}", "comment_id": event.comment_id, "queued_for_retry": True}
        return 200, response.to_dict()

    @property
    def pending_retries(self) -> int:
        return len(self._retry)

    def retry_pending(self) -> list[BotResponse]:
        """Retry each queued event once; events that fail again are dropped."""
        done = []
        for _ in range(len(self._retry)):
            event = self._retry.popleft()
            try:
                done.append(self.process(event))
            except HostError as exc:
                log.error("retry for comment %s failed, giving up: %s", event.comment_id, exc)
        return done


# --------------------------------------------------------------------------
# HTTP

def make_handler(app: WebhookApp):
    class Handler(BaseHTTPRequestHandler):
        server_version = "edre-bot/1"

        def _send(self, status: int, obj: dict) -> None:
            data = json.dumps(obj, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/healthz":
                self._send(200, app.health())
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/webhook":
                self._send(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            try:
                status, body = app.handle(dict(self.headers.items()), raw)
            except Exception:
                log.exception("unhandled error while processing webhook")
                status, body = 500, {"error": "internal error"}
            self._send(status, body)

        def log_message(self, fmt, *args):
            log.debug("%s - " + fmt, self.address_string(), *args)

    return Handler


def make_server(app: WebhookApp, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), make_handler(app))
    server.daemon_threads = True
    return server


def serve(app: WebhookApp, host: str = "127.0.0.1", port: int = 8080, retry_interval: float = 30.0) -> None:
    server = make_server(app, host, port)
    stop = threading.Event()

    def retry_loop():
        while not stop.wait(retry_interval):
            app.retry_pending()

    threading.Thread(target=retry_loop, daemon=True).start()
    log.info("listening on %s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    finally:
        stop.set()
        server.server_close()
