import pytest

from edre.host import (
    AuthError,
    GitHubClient,
    HostError,
    HostUnavailableError,
    PermissionDeniedError,
    RateLimitError,
)


def client_for(host, **kw):
    sleeps = []
    kw.setdefault("sleep", sleeps.append)
    return GitHubClient(host.url, token="secret", **kw), sleeps


class TestPostComment:
    def test_returns_host_id(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/issues/3/comments")] = [(201, {"id": "c42"})]
        client, _ = client_for(mock_host)
        assert client.post_comment("o/r", 3, "hello") == "c42"
        req = mock_host.posts()[0]
        assert req["json"] == {"body": "hello"}
        assert req["headers"]["Authorization"] == "Bearer secret"

    def test_thread_reply(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/pulls/3/comments/77/replies")] = [(201, {"id": 5})]
        client, _ = client_for(mock_host)
        assert client.post_comment("o/r", 3, "hi", in_reply_to="77") == "5"

    def test_forbidden_is_permission_error(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/issues/3/comments")] = [(403, {"message": "Resource not accessible"})]
        client, _ = client_for(mock_host)
        with pytest.raises(PermissionDeniedError, match="Resource not accessible"):
            client.post_comment("o/r", 3, "x")

    def test_rate_limit_then_success(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/issues/3/comments")] = [
            (403, {"message": "API rate limit exceeded"}, {"Retry-After": "2", "X-RateLimit-Remaining": "0"}),
            (201, {"id": 9}),
        ]
        client, sleeps = client_for(mock_host)
        assert client.post_comment("o/r", 3, "x") == "9"
        assert sleeps == [2.0]
        assert len(mock_host.posts()) == 2

    def test_rate_limit_exhausted_carries_retry_after(self, mock_host):
        mock_host.script[("GET", "/x")] = [(429, {"message": "slow down"}, {"Retry-After": "7"})]
        client, sleeps = client_for(mock_host, max_retries=2)
        with pytest.raises(RateLimitError) as err:
            client.request("GET", "/x")
        assert err.value.retry_after == 7.0
        assert len(sleeps) == 2

    def test_server_error_retried_once(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/issues/1/comments")] = [(502, {"message": "bad gateway"}), (201, {"id": 1})]
        client, _ = client_for(mock_host)
        assert client.post_comment("o/r", 1, "x") == "1"

    def test_server_error_twice_fails(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/issues/1/comments")] = [(500, {"message": "boom"})]
        client, _ = client_for(mock_host)
        with pytest.raises(HostError) as err:
            client.post_comment("o/r", 1, "x")
        assert err.value.status == 500
        assert len(mock_host.posts()) == 2

    def test_client_error_surfaces_host_message(self, mock_host):
        mock_host.script[("POST", "/repos/o/r/issues/1/comments")] = [(422, {"message": "Validation Failed"})]
        client, _ = client_for(mock_host)
        with pytest.raises(HostError, match="Validation Failed"):
            client.post_comment("o/r", 1, "x")


class TestErrors:
    def test_auth_distinct_from_network(self, mock_host):
        mock_host.script[("GET", "/y")] = [(401, {"message": "Bad credentials"})]
        client, _ = client_for(mock_host)
        with pytest.raises(AuthError):
            client.request("GET", "/y")
        dead = GitHubClient("http://127.0.0.1:9", token="t", timeout=1)
        with pytest.raises(HostUnavailableError):
            dead.request("GET", "/y")
        assert not issubclass(HostUnavailableError, AuthError)


class TestPaginate:
    def test_follows_link_header(self, mock_host):
        nxt = f'<{mock_host.url}/items?page=2>; rel="next"'
        mock_host.script[("GET", "/items")] = [
            (200, [1, 2], {"Link": nxt}),
            (200, [3], {"Link": f'<{mock_host.url}/items?page=1>; rel="first"'}),
        ]
        client, _ = client_for(mock_host)
        assert list(client.paginate("/items", per_page=2)) == [1, 2, 3]

    def test_stops_on_short_page(self, mock_host):
        mock_host.script[("GET", "/items")] = [(200, [1, 2]), (200, [3])]
        client, _ = client_for(mock_host)
        assert list(client.paginate("/items", per_page=2)) == [1, 2, 3]
        assert len(mock_host.requests) == 2
