"""Single choke point for model calls.

Every LLM request flows through Gateway.complete, which answers it from a
mimic rule, a recorded response, or a provider (live HTTP or the
deterministic mock). Token counts for locally produced answers use one
normative rule: split on whitespace, count the fragments.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .errors import ProviderError, ReplayMissError, SchemaError
from .values import canonical_json

MODE_LIVE = "live"
MODE_RECORD = "record"
MODE_REPLAY = "replay"
MODE_MIMIC_FIRST = "mimic-first"
MODE_MOCK = "mock"

MODES = (MODE_LIVE, MODE_RECORD, MODE_REPLAY, MODE_MIMIC_FIRST, MODE_MOCK)

API_KEY_ENV = "AADK_API_KEY"


def count_tokens(text: str) -> int:
    """The normative token count: number of whitespace-separated fragments."""
    return len(text.split())


def message_tokens(messages: List[dict]) -> int:
    return sum(count_tokens(m.get("content", "")) for m in messages)


def fingerprint(request: dict) -> str:
    """Stable across runs and platforms; the replay store key.

    The seed is excluded so a reseeded mock still replays its recordings.
    """
    params = {k: v for k, v in request.get("params", {}).items() if k != "seed"}
    body = {
        "model": request.get("model", ""),
        "messages": request.get("messages", []),
        "params": params,
    }
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


# --- mimic rules ---------------------------------------------------------------

@dataclass
class MimicRule:
    id: str
    response: str
    node_pattern: Optional[str] = None
    contains: Optional[str] = None
    call_index: Optional[object] = None  # int or [lo, hi]
    enabled: bool = True

    def matches(self, request: dict) -> bool:
        if not self.enabled:
            return False
        origin = request.get("origin", {})
        if self.node_pattern is not None:
            if not fnmatch.fnmatchcase(origin.get("node", ""), self.node_pattern):
                return False
        if self.contains is not None:
            last_user = ""
            for message in request.get("messages", []):
                if message.get("role") == "user":
                    last_user = message.get("content", "")
            if self.contains not in last_user:
                return False
        if self.call_index is not None:
            index = origin.get("call_index", -1)
            if isinstance(self.call_index, list):
                lo, hi = self.call_index
                if not (lo <= index <= hi):
                    return False
            elif index != self.call_index:
                return False
        return True

    def to_obj(self) -> dict:
        match: dict = {}
        if self.node_pattern is not None:
            match["node_pattern"] = self.node_pattern
        if self.contains is not None:
            match["contains"] = self.contains
        if self.call_index is not None:
            match["call_index"] = self.call_index
        return {"id": self.id, "match": match, "response": self.response, "enabled": self.enabled}

    @classmethod
    def from_obj(cls, obj: dict) -> "MimicRule":
        if not isinstance(obj, dict) or "id" not in obj or "response" not in obj:
            raise SchemaError("mimic rule needs 'id' and 'response'")
        match = obj.get("match", {})
        return cls(
            id=obj["id"],
            response=obj["response"],
            node_pattern=match.get("node_pattern"),
            contains=match.get("contains"),
            call_index=match.get("call_index"),
            enabled=obj.get("enabled", True),
        )


def load_mimic_profile(path) -> List[MimicRule]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise SchemaError("mimic profile must be a JSON array of rules")
    return [MimicRule.from_obj(obj) for obj in data]


def save_mimic_profile(rules: List[MimicRule], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([r.to_obj() for r in rules], fh, indent=2, ensure_ascii=False)
        fh.write("\n")


# --- record store ----------------------------------------------------------------

class RecordStore:
    """Recorded responses keyed by request fingerprint, persisted as NDJSON."""

    def __init__(self, path=None):
        self.path = path
        self._records: Dict[str, dict] = {}
        if path is not None and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    self._records[obj["fingerprint"]] = obj["response"]

    def get(self, key: str) -> Optional[dict]:
        return self._records.get(key)

    def put(self, key: str, request: dict, response: dict) -> None:
        self._records[key] = response
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(
                    {"fingerprint": key, "request": request, "response": response},
                    ensure_ascii=False, sort_keys=True,
                ) + "\n")

    def __len__(self) -> int:
        return len(self._records)


# --- providers --------------------------------------------------------------------

class MockProvider:
    """Deterministic stand-in for a live model: same request, same answer."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, request: dict) -> dict:
        messages = request.get("messages", [])
        digest = hashlib.sha256(
            f"{self.seed}:{canonical_json(messages)}".encode("utf-8")
        ).hexdigest()[:8]
        last_user = ""
        for message in messages:
            if message.get("role") == "user":
                last_user = message.get("content", "")
        echo = " ".join(last_user.split()[-8:])
        content = f"mock({digest})" + (f" {echo}" if echo else "")
        return {
            "content": content,
            "usage": {
                "prompt_tokens": message_tokens(messages),
                "completion_tokens": count_tokens(content),
            },
        }


class HttpProvider:
    """Minimal chat-completions client: POST {model, messages, temperature,
    max_tokens}; reads choices[0].message.content and usage."""

    def __init__(self, base_url: str, api_key_env: str = API_KEY_ENV, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: dict) -> dict:
        params = request.get("params", {})
        body = {
            "model": request.get("model", ""),
            "messages": request.get("messages", []),
        }
        if "temperature" in params:
            body["temperature"] = params["temperature"]
        if "max_tokens" in params:
            body["max_tokens"] = params["max_tokens"]
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        req = urllib.request.Request(
            f"{self.base_url}/chat/completions",
            data=json.dumps(body).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            raise ProviderError(exc.code, exc.read().decode("utf-8", "replace"))
        except (urllib.error.URLError, TimeoutError, ValueError) as exc:
            raise ProviderError(0, str(exc))
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProviderError(0, f"malformed completion payload: {json.dumps(payload)[:200]}")
        usage = payload.get("usage", {})
        return {
            "content": content,
            "usage": {
                "prompt_tokens": int(usage.get("prompt_tokens", message_tokens(request.get("messages", [])))),
                "completion_tokens": int(usage.get("completion_tokens", count_tokens(content))),
            },
        }


# --- gateway ----------------------------------------------------------------------

SOURCE_LIVE = "live"
SOURCE_MOCK = "mock"


def _is_local_source(source: str) -> bool:
    return source.startswith("mimic:") or source.startswith("replay:")


class Gateway:
    """Thread-safe request router shared by all sessions of a service."""

    def __init__(self, provider=None, mode: str = MODE_MOCK, rules: Optional[List[MimicRule]] = None,
                 store: Optional[RecordStore] = None):
        if mode not in MODES:
            raise SchemaError(f"unknown gateway mode {mode!r}")
        self.provider = provider if provider is not None else MockProvider()
        self.mode = mode
        self.rules: List[MimicRule] = list(rules or ())
        self.store = store if store is not None else RecordStore()
        self.live_traffic = 0  # provider invocations; hermeticity checks assert 0
        self._lock = threading.Lock()

    # rule management (driven by the debugger's set_mimic_rule command)
    def set_rule(self, rule: MimicRule) -> None:
        with self._lock:
            self.rules = [r for r in self.rules if r.id != rule.id] + [rule]

    def clear_rules(self) -> None:
        with self._lock:
            self.rules = []

    def complete(self, request: dict, mode: Optional[str] = None) -> Tuple[dict, dict]:
        """Answer a request; returns (response, usage-accounting delta)."""
        mode = mode or self.mode
        with self._lock:
            if mode == MODE_MIMIC_FIRST:
                for rule in self.rules:
                    if rule.matches(request):
                        return self._local_response(request, rule.response, f"mimic:{rule.id}")
                key = fingerprint(request)
                stored = self.store.get(key)
                if stored is not None:
                    return self._local_response(request, stored["content"], f"replay:{key[:12]}")
                return self._provider_response(request)
            if mode == MODE_REPLAY:
                key = fingerprint(request)
                stored = self.store.get(key)
                if stored is None:
                    raise ReplayMissError(key)
                return self._local_response(request, stored["content"], f"replay:{key[:12]}")
            if mode == MODE_RECORD:
                response, accounting = self._provider_response(request)
                self.store.put(fingerprint(request), request, response)
                return response, accounting
            return self._provider_response(request)

    def _provider_response(self, request: dict) -> Tuple[dict, dict]:
        raw = self.provider.complete(request)
        self.live_traffic += 1
        source = SOURCE_MOCK if isinstance(self.provider, MockProvider) else SOURCE_LIVE
        response = {"content": raw["content"], "usage": dict(raw["usage"]), "source": source}
        usage = response["usage"]
        accounting = {
            "live_calls": 1,
            "mimic_calls": 0,
            "prompt_tokens": usage["prompt_tokens"],
            "completion_tokens": usage["completion_tokens"],
            "saved_tokens": 0,
        }
        return response, accounting

    def _local_response(self, request: dict, content: str, source: str) -> Tuple[dict, dict]:
        usage = {
            "prompt_tokens": message_tokens(request.get("messages", [])),
            "completion_tokens": count_tokens(content),
        }
        response = {"content": content, "usage": usage, "source": source}
        accounting = {
            "live_calls": 0,
            "mimic_calls": 1,
            "prompt_tokens": usage["prompt_tokens"],
            "completion_tokens": usage["completion_tokens"],
            "saved_tokens": usage["prompt_tokens"] + usage["completion_tokens"],
        }
        return response, accounting


def usage_totals(session) -> dict:
    """Per-session usage with derived savings; counters only ever grow."""
    return dict(session.usage)


# --- trace-based savings (the `mimic savings` computation) --------------------------

def trace_usage(log: dict) -> dict:
    """Aggregate the LlmCall events of one exported trace."""
    totals = {
        "live_calls": 0, "mimic_calls": 0,
        "prompt_tokens": 0, "completion_tokens": 0,
        "live_tokens": 0, "saved_tokens": 0,
    }
    for event in log.get("events", []):
        if event.get("kind") != "LlmCall":
            continue
        data = event.get("data", {})
        usage = data.get("usage", {})
        tokens = usage.get("prompt_tokens", 0) + usage.get("completion_tokens", 0)
        totals["prompt_tokens"] += usage.get("prompt_tokens", 0)
        totals["completion_tokens"] += usage.get("completion_tokens", 0)
        if _is_local_source(data.get("source", "")):
            totals["mimic_calls"] += 1
            totals["saved_tokens"] += tokens
        else:
            totals["live_calls"] += 1
            totals["live_tokens"] += tokens
    return totals


def savings(baseline: List[dict], treatment: List[dict]) -> dict:
    """Reduction ratios of live cost between two groups of trace logs."""
    def a_sum(logs, key):
        return sum(trace_usage(log)[key] for log in logs)

    base_tokens = a_sum(baseline, "live_tokens")
    base_calls = a_sum(baseline, "live_calls")
    treat_tokens = a_sum(treatment, "live_tokens")
    treat_calls = a_sum(treatment, "live_calls")
    return {
        "baseline_live_tokens": base_tokens,
        "baseline_live_calls": base_calls,
        "treatment_live_tokens": treat_tokens,
        "treatment_live_calls": treat_calls,
        "token_reduction": 1.0 - (treat_tokens / base_tokens) if base_tokens else 0.0,
        "call_reduction": 1.0 - (treat_calls / base_calls) if base_calls else 0.0,
    }
