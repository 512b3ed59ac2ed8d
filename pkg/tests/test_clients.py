import json

import httpx
import pytest

from dxkit.clients import ChatCompletionsClient
from dxkit.engine import HttpDirector, SamplingParams
from dxkit.errors import ClientUnavailable


def make_client(handler, api_key_env="DXKIT_API_KEY"):
    client = ChatCompletionsClient("http://director.test/v1", "dx-7b", api_key_env=api_key_env)
    client._http = httpx.Client(
        base_url="http://director.test/v1", transport=httpx.MockTransport(handler)
    )
    return client


def completion_response(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


class TestChatCompletionsClient:
    def test_payload_shape_and_reply(self):
        seen = {}

        def handler(request: httpx.Request):
            seen["url"] = str(request.url)
            seen["payload"] = json.loads(request.content)
            return completion_response("pong")

        client = make_client(handler)
        reply = client.complete("ping", temperature=0.6, top_p=0.95, top_k=20, seed=7)
        assert reply == "pong"
        assert seen["url"].endswith("/chat/completions")
        assert seen["payload"]["model"] == "dx-7b"
        assert seen["payload"]["messages"] == [{"role": "user", "content": "ping"}]
        assert seen["payload"]["temperature"] == 0.6
        assert seen["payload"]["top_p"] == 0.95
        assert seen["payload"]["top_k"] == 20
        assert seen["payload"]["seed"] == 7

    def test_auth_token_read_from_environment_only(self, monkeypatch):
        monkeypatch.setenv("DXKIT_API_KEY", "token-123")
        seen = {}

        def handler(request: httpx.Request):
            seen["auth"] = request.headers.get("authorization")
            return completion_response("ok")

        make_client(handler).complete("x")
        assert seen["auth"] == "Bearer token-123"

    def test_no_auth_header_when_env_unset(self, monkeypatch):
        monkeypatch.delenv("DXKIT_API_KEY", raising=False)
        seen = {}

        def handler(request: httpx.Request):
            seen["auth"] = request.headers.get("authorization")
            return completion_response("ok")

        make_client(handler).complete("x")
        assert seen["auth"] is None

    def test_http_error_wrapped(self):
        def handler(request):
            return httpx.Response(500, text="boom")

        with pytest.raises(ClientUnavailable):
            make_client(handler).complete("x")

    def test_malformed_response_wrapped(self):
        def handler(request):
            return httpx.Response(200, json={"unexpected": True})

        with pytest.raises(ClientUnavailable):
            make_client(handler).complete("x")


class TestHttpDirector:
    def test_sampling_params_forwarded(self):
        seen = {}

        def handler(request: httpx.Request):
            seen["payload"] = json.loads(request.content)
            return completion_response("[Final Diagnosis]:\nSo the final answer is x.")

        director = HttpDirector(make_client(handler))
        director.generate("prefix text", SamplingParams(temperature=0.6, top_p=0.9, top_k=20, seed=3))
        assert seen["payload"]["temperature"] == 0.6
        assert seen["payload"]["top_p"] == 0.9
        assert seen["payload"]["seed"] == 3

    def test_zero_top_k_omitted(self):
        seen = {}

        def handler(request: httpx.Request):
            seen["payload"] = json.loads(request.content)
            return completion_response("ok")

        director = HttpDirector(make_client(handler))
        director.generate("p", SamplingParams(temperature=0.0, top_p=1.0, top_k=0, seed=0))
        assert "top_k" not in seen["payload"]
