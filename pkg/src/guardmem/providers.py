"""External model providers over plain HTTP (JSON in, JSON out).

The endpoint and an optional bearer token come from the environment:

``GUARDMEM_ENDPOINT``
    Base URL.  Guard calls go to ``{endpoint}/guard`` and induction calls to
    ``{endpoint}/induce``.  Both receive ``{"prompt": ...}`` and must answer
    ``{"text": ...}`` holding the raw model output.
``GUARDMEM_API_KEY``
    Sent as ``Authorization: Bearer <key>`` when set.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

from guardmem.guardrail import (GuardResponse, ProviderUnavailableError, base_prompt,
                                parse_guard_response)

ENDPOINT_ENV = "GUARDMEM_ENDPOINT"
API_KEY_ENV = "GUARDMEM_API_KEY"


@dataclass
class HttpClient:
    endpoint: str
    api_key: str | None = None
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5

    @classmethod
    def from_env(cls, env=None) -> "HttpClient":
        env = os.environ if env is None else env
        endpoint = env.get(ENDPOINT_ENV)
        if not endpoint:
            raise ProviderUnavailableError(f"{ENDPOINT_ENV} is not set")
        return cls(endpoint.rstrip("/"), env.get(API_KEY_ENV) or None)

    def complete(self, route: str, prompt: str) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(f"{self.endpoint}/{route}", body, headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return str(payload["text"])
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code < 500:
                    break  # client errors will not improve on retry
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last = exc
            except (ValueError, KeyError) as exc:
                last = exc
                break
            if attempt < self.retries:
                time.sleep(self.backoff * 2 ** attempt)
        raise ProviderUnavailableError(f"{route} request to {self.endpoint} failed: {last}")


class HttpGuardModel:
    def __init__(self, client: HttpClient):
        self.client = client

    def decide(self, scenario: str, prompt: str | None = None) -> GuardResponse:
        text = self.client.complete("guard", prompt if prompt is not None else base_prompt(scenario))
        return parse_guard_response(text)


class HttpInducer:
    def __init__(self, client: HttpClient):
        self.client = client

    def induce(self, prompt: str) -> str:
        return self.client.complete("induce", prompt)
