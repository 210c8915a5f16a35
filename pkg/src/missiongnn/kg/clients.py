"""LLM and ConceptNet service clients.

Every client is a plain object with one method: ``chat(messages) -> str`` for
language models and ``related(term) -> set[str]`` for ConceptNet. The file,
scripted and synthetic backends are deterministic and used by tests and the
synthetic preset; the HTTP backends talk to real services.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
from collections import defaultdict
from pathlib import Path

import numpy as np

from .graph import normalize_label

RELATED_TO = "/r/RelatedTo"


class ServiceUnavailable(RuntimeError):
    pass


class MalformedResponse(ValueError):
    pass


_SENTENCE_PUNCT = re.compile(r"[.!?;:]")


def parse_word_list(reply: str) -> list[str]:
    """Parse a comma-separated LLM reply into normalized, de-duplicated labels."""
    if reply is None:
        raise MalformedResponse("empty reply")
    lines = [ln for ln in reply.strip().splitlines() if ln.strip()]
    if not lines:
        raise MalformedResponse("empty reply")
    tokens = [t for t in lines[0].split(",")]
    if len(tokens) == 1 and _SENTENCE_PUNCT.search(tokens[0].rstrip(".")):
        raise MalformedResponse(f"not a comma-separated list: {lines[0][:80]!r}")
    if len(tokens) == 1 and len(tokens[0].split()) > 4:
        raise MalformedResponse(f"not a comma-separated list: {lines[0][:80]!r}")
    out: list[str] = []
    seen = set()
    for t in tokens:
        word = normalize_label(t.strip().strip("\"'[]()").rstrip("."))
        if not word or word in seen:
            continue
        seen.add(word)
        out.append(word)
    if not out:
        raise MalformedResponse("no words in reply")
    return out


# --------------------------------------------------------------------------- LLM


class HttpLlmClient:
    """Chat-completion client for OpenAI-compatible endpoints.

    Endpoint, model and key default to ``MGNN_LLM_ENDPOINT``, ``MGNN_LLM_MODEL``
    and ``MGNN_LLM_API_KEY``.
    """

    def __init__(self, endpoint=None, model=None, api_key=None, timeout=60.0, temperature=0.0):
        self.endpoint = endpoint or os.environ.get(
            "MGNN_LLM_ENDPOINT", "https://api.openai.com/v1/chat/completions"
        )
        self.model = model or os.environ.get("MGNN_LLM_MODEL", "gpt-4")
        self.api_key = api_key or os.environ.get("MGNN_LLM_API_KEY", "")
        self.timeout = timeout
        self.temperature = temperature
        self._local = threading.local()

    def _session(self):
        import requests

        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    def chat(self, messages: list[dict]) -> str:
        import requests

        payload = {"model": self.model, "messages": messages, "temperature": self.temperature}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._session().post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise ServiceUnavailable(f"LLM request failed: {exc}") from exc


class ScriptedLlm:
    """Replays a fixed list of replies in call order."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls: list[list[dict]] = []

    def chat(self, messages):
        self.calls.append([dict(m) for m in messages])
        if len(self.calls) > len(self.replies):
            raise ServiceUnavailable("scripted LLM ran out of replies")
        return self.replies[len(self.calls) - 1]


_SYLLABLES = (
    "ka ri to mu sel van dor pel ni ga lo fen tar bi so ru mek zan "
    "hol tri ve qua lin dus mor ce pa xo wen"
).split()


def _digest_int(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _list_after(prefix: str, text: str) -> list[str]:
    for line in text.splitlines():
        if line.startswith(prefix):
            body = line[len(prefix):].strip()
            return [normalize_label(w) for w in body.split(",") if w.strip()]
    return []


def _field(prefix: str, text: str) -> str:
    for line in text.splitlines():
        if line.startswith(prefix):
            return line[len(prefix):].strip()
    return ""


class SyntheticLlm:
    """Deterministic, prompt-aware stand-in for a chat model.

    Reads which persona is being asked from the system prompt and answers with
    pseudo-words derived from a seeded hash. ``dup_rate`` and ``bad_parent_rate``
    inject the two error classes the repair loop must handle; ``fix_prob`` is
    the chance that a correction prompt actually fixes them.
    """

    def __init__(self, seed=0, dup_rate=0.0, bad_parent_rate=0.0, fix_prob=1.0, malformed_rate=0.0):
        self.seed = seed
        self.dup_rate = dup_rate
        self.bad_parent_rate = bad_parent_rate
        self.fix_prob = fix_prob
        self.malformed_rate = malformed_rate

    def _rng(self, *parts):
        return np.random.default_rng(_digest_int(self.seed, *parts))

    def _word(self, rng) -> str:
        n = int(rng.integers(2, 4))
        return "".join(rng.choice(_SYLLABLES, size=n))

    def chat(self, messages):
        system = messages[0]["content"]
        first_user = messages[1]["content"]
        n_corrections = sum(1 for m in messages[2:] if m["role"] == "user")
        last = messages[-1]["content"]
        key = (system[-200:], first_user, n_corrections)
        rng = self._rng("chat", *key)

        if self.malformed_rate and n_corrections == 0 and rng.random() < self.malformed_rate:
            return "I think the most important words would be these ones."

        fixing = n_corrections > 0 and rng.random() < self.fix_prob
        if "Select maximum" in system:
            return self._edges(system, first_user, last, rng, n_corrections, fixing)
        count_match = re.search(r"Observe (\d+) important words|must be (\d+)\.", system)
        count = int(next(g for g in count_match.groups() if g)) if count_match else 20
        subject = _field("Subject:", first_user)
        previous = _list_after("Comma-separated list:", first_user)
        suggested = _list_after("Suggested keywords:", first_user)
        seen = set(previous)
        words = []
        if n_corrections == 0:
            for w in suggested:
                if len(words) >= count // 2:
                    break
                if w not in seen:
                    seen.add(w)
                    words.append(w)
        i = 0
        while len(words) < count:
            w = self._word(self._rng("word", subject, tuple(previous[:3]), n_corrections, i))
            i += 1
            if w not in seen:
                seen.add(w)
                words.append(w)
        inject = previous and not fixing and rng.random() < self.dup_rate
        if n_corrections > 0 and not fixing:
            inject = bool(previous)
        if inject:
            words[int(rng.integers(len(words)))] = previous[int(rng.integers(len(previous)))]
        return ", ".join(words)

    def _edges(self, system, first_user, last, rng, n_corrections, fixing):
        k = int(re.search(r"Select maximum (\d+)", system).group(1))
        previous = _list_after("Comma-separated list:", first_user)
        n_pick = int(rng.integers(1, min(k, len(previous)) + 1))
        picks = list(rng.choice(len(previous), size=n_pick, replace=False))
        chosen = [previous[j] for j in sorted(picks)]
        bad = not fixing and rng.random() < self.bad_parent_rate
        if n_corrections > 0 and not fixing:
            bad = True
        if bad:
            chosen[int(rng.integers(len(chosen)))] = self._word(rng) + " thing"
        return ", ".join(chosen)


# --------------------------------------------------------------------- ConceptNet


class FileConceptNet:
    """ConceptNet backed by a ``term<TAB>related`` edge list (one relation type)."""

    def __init__(self, source=None, relation=RELATED_TO, pairs=None):
        self.relation = relation
        self._table: dict[str, set[str]] = defaultdict(set)
        if source is not None:
            for line in Path(source).read_text(encoding="utf-8").splitlines():
                if not line.strip() or line.startswith("#"):
                    continue
                a, b = line.split("\t")[:2]
                self._table[normalize_label(a)].add(normalize_label(b))
        for a, b in pairs or ():
            self._table[normalize_label(a)].add(normalize_label(b))

    def related(self, term: str) -> set[str]:
        return set(self._table.get(normalize_label(term), ()))

    def save(self, path) -> None:
        lines = [f"{a}\t{b}" for a in sorted(self._table) for b in sorted(self._table[a])]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class HttpConceptNet:
    """Queries the public ConceptNet REST API for one relation type."""

    def __init__(self, base_url="https://api.conceptnet.io", relation=RELATED_TO, lang="en",
                 limit=50, timeout=30.0):
        self.base_url = base_url.rstrip("/")
        self.relation = relation
        self.lang = lang
        self.limit = limit
        self.timeout = timeout

    def _concept(self, term):
        return f"/c/{self.lang}/{normalize_label(term).replace(' ', '_')}"

    def related(self, term: str) -> set[str]:
        import requests

        node = self._concept(term)
        params = {"node": node, "rel": self.relation, "limit": self.limit}
        try:
            resp = requests.get(f"{self.base_url}/query", params=params, timeout=self.timeout)
            resp.raise_for_status()
            edges = resp.json().get("edges", [])
        except (requests.RequestException, ValueError) as exc:
            raise ServiceUnavailable(f"ConceptNet request failed: {exc}") from exc
        out = set()
        for e in edges:
            for end in (e.get("start", {}), e.get("end", {})):
                if end.get("language", self.lang) != self.lang or end.get("@id") == node:
                    continue
                label = end.get("label")
                if label:
                    out.add(normalize_label(label))
        return out
