"""Phase 2: prompt construction, LLM calls, verdict parsing, majority voting."""
from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol

from .models import Prediction, Verdict, VerdictLabel, majority_label

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.1
DEFAULT_RUNS = 3

NO_CONTEXT_SENTENCE = "No external context is provided; rely on your own knowledge."

# Default template: task description, context block, inference rules biased
# against favoring the asker, and output instructions requiring the decision
# as the final single word. Users can replace it with their own template file.
DEFAULT_SYSTEM_TEXT = """\
You are an assistant for fact checking and misinformation detection.
Analyze the input statement, which is a news headline, and determine whether \
it is truth or fake news based on the context below and your knowledge.

Context retrieved from the Internet:
{CONTEXT}

Rules for your analysis:
- You do not need to prove the statement is truth; instead, look for \
contradictions or factual mistakes that would make it fake news.
- Respond "False" if you find any contradiction that opposes the statement.
- Respond "False" if you find any factual mistake that is unlikely to be true.
- Respond "False" if any key context in the statement, such as a number, \
quantity, person, or location, is inconsistent with the context above, even \
if the statement is otherwise partially true.
- Respond "True" if you believe the statement reflects the truth rather than \
fake news that could mislead readers.
- Always respond "True" when you cannot find evidence or a clue that the \
statement is fake news.
- Never respond "False" merely because you are not confident or the statement \
omits details present in the context.

Output instructions:
Begin with your analysis and justification, then give your decision at the \
end. Your output must end with the decision as a single word, "True" or \
"False", with nothing after it.
"""

DEFAULT_USER_TEXT = "The input statement is: {CLAIM}"

SECTION_SYSTEM = "---SYSTEM---"
SECTION_USER = "---USER---"


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    user_text: str

    def __post_init__(self):
        if "{CONTEXT}" not in self.system_text:
            raise TemplateError("system text must contain the {CONTEXT} placeholder")
        if self.user_text.count("{CLAIM}") != 1:
            raise TemplateError("user text must contain {CLAIM} exactly once")


def default_template() -> PromptTemplate:
    return PromptTemplate(system_text=DEFAULT_SYSTEM_TEXT, user_text=DEFAULT_USER_TEXT)


def load_template(path: str | Path) -> PromptTemplate:
    """Parse a template file with ---SYSTEM--- / ---USER--- section markers."""
    text = Path(path).read_text(encoding="utf-8")
    if SECTION_SYSTEM not in text or SECTION_USER not in text:
        raise TemplateError(f"{path}: missing {SECTION_SYSTEM} or {SECTION_USER} marker")
    _, rest = text.split(SECTION_SYSTEM, 1)
    system_text, user_text = rest.split(SECTION_USER, 1)
    return PromptTemplate(system_text=system_text.strip() + "\n", user_text=user_text.strip())


def build_prompt(claim: str, context: str, template: Optional[PromptTemplate] = None) -> tuple[str, str]:
    if not claim.strip():
        raise ValueError("claim must be non-empty")
    template = template or default_template()
    context_block = context if context else NO_CONTEXT_SENTENCE
    system_text = template.system_text.replace("{CONTEXT}", context_block)
    user_text = template.user_text.replace("{CLAIM}", claim)
    return system_text, user_text


_TRAILING_JUNK = " \t\r\n.,!?:;\"'*`"
_FINAL_TOKEN_RE = re.compile(r"([A-Za-z]+)[^A-Za-z]*$")


def final_token(raw: str) -> Optional[str]:
    """The final maximal alphabetic token after stripping trailing punctuation."""
    stripped = raw.rstrip(_TRAILING_JUNK)
    match = _FINAL_TOKEN_RE.search(stripped)
    return match.group(1) if match else None


def parse_verdict(raw: str) -> Verdict:
    """Parse the trailing one-word decision; anything else is non-conclusive."""
    stripped = raw.rstrip(_TRAILING_JUNK)
    match = _FINAL_TOKEN_RE.search(stripped)
    if match:
        token = match.group(1).lower()
        if token in ("true", "false"):
            label = VerdictLabel.TRUE if token == "true" else VerdictLabel.FALSE
            explanation = stripped[:match.start(1)].rstrip(_TRAILING_JUNK)
            return Verdict(label=label, explanation=explanation, raw=raw)
    return Verdict(label=VerdictLabel.NON_CONCLUSIVE, explanation=raw, raw=raw)


def prompt_digest(system_text: str, user_text: str) -> str:
    payload = system_text + "\x1e" + user_text
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LLMProvider(Protocol):
    def complete(self, system_text: str, user_text: str, temperature: float) -> str:
        ...


class LLMTransportError(Exception):
    """Transient transport failure; retried once before surfacing."""


class ScriptError(Exception):
    pass


class ScriptedLLMProvider:
    """Replays responses from a transcript keyed by prompt digest.

    Each key maps to a response sequence consumed in order (run 1, 2, 3, ...);
    an unmatched digest or an exhausted sequence is an error.
    """

    def __init__(self, transcript: str | Path | Dict[str, List[str]]):
        if isinstance(transcript, (str, Path)):
            with open(transcript, encoding="utf-8") as fh:
                self._table: Dict[str, List[str]] = json.load(fh)
        else:
            self._table = {k: list(v) for k, v in transcript.items()}
        self._cursor: Dict[str, int] = {}
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, system_text: str, user_text: str, temperature: float) -> str:
        digest = prompt_digest(system_text, user_text)
        with self._lock:
            self.calls += 1
            if digest not in self._table:
                raise ScriptError(f"no scripted response for prompt digest {digest}")
            i = self._cursor.get(digest, 0)
            responses = self._table[digest]
            if i >= len(responses):
                raise ScriptError(f"scripted responses exhausted for digest {digest}")
            self._cursor[digest] = i + 1
            return responses[i]


class HttpLLMProvider:
    """Live chat-completion client: POST {model, messages, temperature, stream:false}."""

    def __init__(self, api_url: str, model: str, api_key: Optional[str] = None, timeout: float = 120.0):
        self.api_url = api_url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.calls = 0

    def complete(self, system_text: str, user_text: str, temperature: float) -> str:
        import httpx

        self.calls += 1
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": temperature,
            "stream": False,
        }
        try:
            resp = httpx.post(self.api_url, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise LLMTransportError(str(exc)) from exc
        data = resp.json()
        if "choices" in data:
            return data["choices"][0]["message"]["content"]
        if "message" in data:
            return data["message"]["content"]
        raise LLMTransportError("unrecognized completion response shape")


def run_single(claim: str, context: str, template: Optional[PromptTemplate],
               provider: LLMProvider, temperature: float = DEFAULT_TEMPERATURE) -> Verdict:
    """One inference run; transport errors are retried once. Refusals are not retried."""
    system_text, user_text = build_prompt(claim, context, template)
    try:
        raw = provider.complete(system_text, user_text, temperature)
    except LLMTransportError as exc:
        log.warning("transport error, retrying once: %s", exc)
        raw = provider.complete(system_text, user_text, temperature)
    return parse_verdict(raw)


def run_majority(claim: str, context: str, template: Optional[PromptTemplate],
                 provider: LLMProvider, temperature: float = DEFAULT_TEMPERATURE,
                 runs: int = DEFAULT_RUNS) -> Prediction:
    """Repeat the inference and record the majority label (non-conclusive counts as a vote)."""
    verdicts = tuple(
        run_single(claim, context, template, provider, temperature) for _ in range(runs)
    )
    return Prediction(runs=verdicts, majority=majority_label([v.label for v in verdicts]))
