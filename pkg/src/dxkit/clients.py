"""HTTP client for chat-completions-compatible endpoints.

One client class serves both roles in the stack: the director backend and
the judge/assistant model backends.  Auth tokens are only ever read from
the environment, never from config files.
"""

from __future__ import annotations

import os
from typing import Any

import httpx

from .errors import ClientUnavailable

DEFAULT_API_KEY_ENV = "DXKIT_API_KEY"


class ChatCompletionsClient:
    """Minimal synchronous client for POST {base_url}/chat/completions."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        top_p: float = 1.0,
        top_k: int | None = None,
        seed: int | None = None,
        max_tokens: int | None = None,
    ) -> str:
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "top_p": top_p,
        }
        if top_k:
            payload["top_k"] = top_k
        if seed is not None:
            payload["seed"] = seed
        if max_tokens is not None:
            payload["max_tokens"] = max_tokens
        try:
            resp = self._http.post("/chat/completions", json=payload, headers=self._headers())
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except httpx.HTTPError as exc:
            raise ClientUnavailable(f"{self.base_url}: {exc}") from exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ClientUnavailable(f"{self.base_url}: malformed completion response") from exc

    def close(self) -> None:
        self._http.close()
