"""Minimal client for GitHub-compatible REST endpoints.

Only the two calls the pipeline needs are covered: listing pull-request
review comments of a repository (fully paginated) and posting a comment on
a pull request.
"""
from __future__ import annotations

import logging
import os
import time
from typing import Callable, Iterator

import requests

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.github.com"
TOKEN_ENV = "EDRE_TOKEN"


class HostError(RuntimeError):
    """The code host answered with an error status."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class AuthError(HostError):
    pass


class PermissionDeniedError(HostError):
    pass


class RateLimitError(HostError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message, status=429)
        self.retry_after = retry_after


class HostUnavailableError(HostError):
    """Network-level failure: the host could not be reached at all."""


def _host_message(response: requests.Response) -> str:
    try:
        payload = response.json()
    except ValueError:
        return response.text.strip()[:200]
    if isinstance(payload, dict) and "message" in payload:
        return str(payload["message"])
    return response.text.strip()[:200]


class GitHubClient:
    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        token: str | None = None,
        session: requests.Session | None = None,
        max_retries: int = 3,
        backoff: float = 1.0,
        max_wait: float = 60.0,
        timeout: float = 10.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.session = session or requests.Session()
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_wait = max_wait
        self.timeout = timeout
        self.sleep = sleep

    def _headers(self) -> dict:
        headers = {"Accept": "application/vnd.github+json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _rate_limit_wait(self, response: requests.Response, attempt: int) -> float | None:
        """Seconds to wait if ``response`` is a rate-limit rejection, else None."""
        if response.status_code not in (403, 429):
            return None
        retry_after = response.headers.get("Retry-After")
        remaining = response.headers.get("X-RateLimit-Remaining")
        if retry_after is not None:
            try:
                return max(0.0, float(retry_after))
            except ValueError:
                return self.backoff * 2**attempt
        if remaining == "0":
            reset = response.headers.get("X-RateLimit-Reset")
            if reset is not None:
                try:
                    return max(0.0, float(reset) - time.time())
                except ValueError:
                    pass
            return self.backoff * 2**attempt
        if response.status_code == 429:
            return self.backoff * 2**attempt
        return None

    def request(self, method: str, url: str, **kwargs) -> requests.Response:
        if not url.startswith("http"):
            url = self.base_url + url
        server_retry_used = False
        attempt = 0
        while True:
            try:
                response = self.session.request(
                    method, url, headers=self._headers(), timeout=self.timeout, **kwargs
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                raise HostUnavailableError(f"{method} {url}: {exc}") from exc

            status = response.status_code
            if status < 400:
                return response
            if status == 401:
                raise AuthError(f"authentication failed: {_host_message(response)}", status)

            wait = self._rate_limit_wait(response, attempt)
            if wait is not None:
                if attempt >= self.max_retries:
                    raise RateLimitError(
                        f"rate limit exceeded after {attempt} retries: {_host_message(response)}",
                        retry_after=wait,
                    )
                log.warning("rate limited on %s, waiting %.1fs", url, wait)
                self.sleep(min(wait, self.max_wait))
                attempt += 1
                continue
            if status == 403:
                raise PermissionDeniedError(f"permission denied: {_host_message(response)}", status)
            if status >= 500 and not server_retry_used:
                server_retry_used = True
                log.warning("host error %d on %s, retrying once", status, url)
                self.sleep(self.backoff)
                continue
            raise HostError(f"host returned {status}: {_host_message(response)}", status)

    def paginate(self, path: str, params: dict | None = None, per_page: int = 100) -> Iterator[dict]:
        """Yield every item of a paginated list endpoint.

        Follows ``Link: rel="next"`` when the host sends it; otherwise stops at
        the first short page.
        """
        params = dict(params or {})
        params["per_page"] = per_page
        page = 1
        while True:
            params["page"] = page
            response = self.request("GET", path, params=params)
            items = response.json()
            if not isinstance(items, list):
                raise HostError(f"expected a JSON list from {path}", response.status_code)
            yield from items
            if "Link" in response.headers:
                if "next" not in response.links:
                    return
            elif len(items) < per_page:
                return
            page += 1

    def list_review_comments(self, repo: str, since: str | None = None, per_page: int = 100) -> Iterator[dict]:
        params = {"sort": "created", "direction": "asc"}
        if since:
            params["since"] = since
        return self.paginate(f"/repos/{repo}/pulls/comments", params, per_page=per_page)

    def post_comment(self, repo: str, pr_number: int, body: str, in_reply_to: str | None = None) -> str:
        """Post ``body`` on a pull request and return the host-assigned id.

        With ``in_reply_to`` the comment is a reply inside that review thread,
        otherwise it is a top-level conversation comment.
        """
        if in_reply_to:
            path = f"/repos/{repo}/pulls/{pr_number}/comments/{in_reply_to}/replies"
        else:
            path = f"/repos/{repo}/issues/{pr_number}/comments"
        response = self.request("POST", path, json={"body": body})
        return str(response.json()["id"])
