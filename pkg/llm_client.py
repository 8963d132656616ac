import ast
import copy
import math
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal

import pandas as pd
import requests

from errors import AuthError, ContextOverflow, LlmError, LlmTimeout, RateLimited, UnknownModel
from token_meter import count_tokens
from utils import append_csv, get_logger, make_session

log = get_logger("llm_client")


# ================= CONFIG =================

DEFAULT_BASE_URL = "https://api.openai.com/v1"

# (connect, read) seconds; long prompts make the read side slow
REQUEST_TIMEOUT = (10, 600)

# Retries on network errors, 429 and 5xx only (never on a clean 4xx reject).
MAX_RETRIES = 4
BACKOFF_BASE = 2.0      # seconds, doubled per attempt

TOP_LOGPROBS = 20
PER_MILLION = Decimal(1_000_000)

LEDGER_COLUMNS = ["timestamp", "model", "case", "method", "prompt_tokens", "completion_tokens", "cost_usd"]

CONTEXT_MARKERS = ("context_length_exceeded", "maximum context length", "too many tokens")


# ================= TYPES =================

@dataclass(frozen=True)
class ChatRequest:
    model: str
    system: str
    user: str
    temperature: float = 1.0
    max_output_tokens: int = 4096
    want_token_probs: bool = False

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be > 0")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    token_probs: tuple | None = None
    retries: int = 0


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = DEFAULT_BASE_URL
    api_key: str | None = None
    tokens_per_minute: int | None = None
    max_retries: int = MAX_RETRIES
    backoff_base: float = BACKOFF_BASE
    timeout: tuple = REQUEST_TIMEOUT


@dataclass(frozen=True)
class UsageRecord:
    model: str
    case: str
    method: str
    prompt_tokens: int
    completion_tokens: int
    cost_usd: Decimal
    timestamp: str = ""


# ================= COSTS =================

@dataclass(frozen=True)
class CostTable:
    """model -> (input USD per token, output USD per token)."""
    rates: dict = field(default_factory=dict)

    def __post_init__(self):
        for model, (rate_in, rate_out) in self.rates.items():
            if rate_in < 0 or rate_out < 0:
                raise ValueError(f"negative rate for {model}")

    @classmethod
    def from_config(cls, section):
        """
        [costs.<model>] tables with input_per_1m / output_per_1m in USD.
        Values go through str() so 2.5 stays exactly 2.5.
        """
        rates = {}
        for model, row in (section or {}).items():
            rates[model] = (
                Decimal(str(row["input_per_1m"])) / PER_MILLION,
                Decimal(str(row["output_per_1m"])) / PER_MILLION,
            )
        return cls(rates)


def estimate_cost(prompt_tokens, completion_tokens, model, table):
    if model not in table.rates:
        raise UnknownModel(f"no cost rates configured for {model!r}")
    rate_in, rate_out = table.rates[model]
    return prompt_tokens * rate_in + completion_tokens * rate_out


class UsageLedger:
    """
    Append-only usage log. Costs are Decimals end to end so the total of the
    rows equals the report total exactly.
    """

    def __init__(self, path=None):
        self.path = path
        self._records = []
        self._lock = threading.Lock()

    def append(self, record):
        with self._lock:
            self._records.append(record)
            if self.path:
                row = {
                    "timestamp": record.timestamp,
                    "model": record.model,
                    "case": record.case,
                    "method": record.method,
                    "prompt_tokens": record.prompt_tokens,
                    "completion_tokens": record.completion_tokens,
                    "cost_usd": str(record.cost_usd),
                }
                append_csv(self.path, row, LEDGER_COLUMNS)

    def records(self):
        with self._lock:
            return tuple(self._records)

    def total(self):
        return sum((r.cost_usd for r in self.records()), Decimal(0))

    def summary(self):
        return summarize(self.records())

    @classmethod
    def load(cls, path):
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        ledger = cls()
        for row in df.to_dict("records"):
            ledger._records.append(UsageRecord(
                model=row["model"],
                case=row["case"],
                method=row["method"],
                prompt_tokens=int(row["prompt_tokens"]),
                completion_tokens=int(row["completion_tokens"]),
                cost_usd=Decimal(row["cost_usd"]),
                timestamp=row["timestamp"],
            ))
        return ledger


def summarize(records):
    """Token and cost sums per (model, case, method); cost rounded to cents here only."""
    columns = ["model", "case", "method", "requests", "prompt_tokens", "completion_tokens", "cost_usd"]
    groups = {}
    for r in records:
        g = groups.setdefault((r.model, r.case, r.method), [0, 0, 0, Decimal(0)])
        g[0] += 1
        g[1] += r.prompt_tokens
        g[2] += r.completion_tokens
        g[3] += r.cost_usd

    rows = [
        {
            "model": model, "case": case, "method": method,
            "requests": n, "prompt_tokens": p, "completion_tokens": c,
            "cost_usd": f"{cost.quantize(Decimal('0.01'))}",
        }
        for (model, case, method), (n, p, c, cost) in sorted(groups.items())
    ]
    return pd.DataFrame(rows, columns=columns)


# ================= RATE LIMIT =================

class TokenBudget:
    """
    Sliding one-minute token budget. acquire() blocks until the request fits;
    callers are serialized on the lock while they wait.
    """

    WINDOW = 60.0

    def __init__(self, tokens_per_minute, clock=time.monotonic, sleep=time.sleep):
        if tokens_per_minute <= 0:
            raise ValueError("tokens_per_minute must be > 0")
        self.tokens_per_minute = tokens_per_minute
        self.clock = clock
        self.sleep = sleep
        self._spent = deque()
        self._lock = threading.Lock()

    def _used(self, now):
        while self._spent and now - self._spent[0][0] >= self.WINDOW:
            self._spent.popleft()
        return sum(n for _, n in self._spent)

    def acquire(self, tokens):
        with self._lock:
            if tokens > self.tokens_per_minute:
                log.warning(f"request of {tokens} tokens exceeds the {self.tokens_per_minute}/min budget")
            while True:
                now = self.clock()
                used = self._used(now)
                if not self._spent or used + tokens <= self.tokens_per_minute:
                    self._spent.append((now, tokens))
                    return
                wait = self._spent[0][0] + self.WINDOW - now
                log.info(f"token budget: {used}/{self.tokens_per_minute} used, waiting {wait:.1f}s")
                self.sleep(max(wait, 0.0))


# ================= TRANSPORTS =================

class HttpTransport:
    def __init__(self, session=None):
        self.session = session or make_session()

    def send(self, url, payload, headers, timeout):
        resp = self.session.post(url, json=payload, headers=headers, timeout=timeout)
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return resp.status_code, body


class MockTransport:
    """
    Deterministic provider for tests.

    reply      : canned text, or responder(payload) -> text
    failures   : statuses returned on the first calls, in order
                 ("timeout" / "network" raise the matching requests error)
    token_probs: [(token, probability), ...] reported for the first answer position
    """

    def __init__(self, reply="", responder=None, failures=(), token_probs=None):
        self.reply = reply
        self.responder = responder
        self.failures = list(failures)
        self.token_probs = token_probs
        self.calls = []
        self._lock = threading.Lock()

    def send(self, url, payload, headers, timeout):
        with self._lock:
            self.calls.append({"url": url, "payload": copy.deepcopy(payload)})
            failure = self.failures.pop(0) if self.failures else None

        if failure == "timeout":
            raise requests.exceptions.Timeout("mock timeout")
        if failure == "network":
            raise requests.exceptions.ConnectionError("mock connection error")
        if failure is not None:
            status, message = (failure if isinstance(failure, tuple) else (failure, f"mock status {failure}"))
            return status, {"error": {"message": message, "code": message}}

        text = self.responder(payload) if self.responder else self.reply
        prompt = "".join(m["content"] for m in payload["messages"])
        choice = {"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}

        if payload.get("logprobs") and self.token_probs:
            top = [
                {"token": tok, "logprob": math.log(p) if p > 0 else float("-inf")}
                for tok, p in self.token_probs
            ]
            choice["logprobs"] = {"content": [{"token": top[0]["token"], "logprob": top[0]["logprob"], "top_logprobs": top}]}

        return 200, {
            "choices": [choice],
            "usage": {"prompt_tokens": count_tokens(prompt), "completion_tokens": count_tokens(text)},
        }

    @property
    def call_count(self):
        return len(self.calls)


# ================= CLIENT =================

def _error_text(body):
    if isinstance(body, dict):
        err = body.get("error", body)
        if isinstance(err, dict):
            return " ".join(str(err.get(k, "")) for k in ("code", "message")).strip()
        return str(err)
    return str(body)[:200]


class LlmClient:
    """
    OpenAI-compatible chat-completions client.

    complete(req, case, method) -> ChatResponse
    Raises AuthError, ContextOverflow, RateLimited, LlmTimeout or LlmError.
    """

    def __init__(self, config=None, transport=None, ledger=None, costs=None, sleep=time.sleep, budget=None):
        self.config = config or ProviderConfig()
        self.transport = transport or HttpTransport()
        self.ledger = ledger
        self.costs = costs
        self.sleep = sleep

        if budget is None and self.config.tokens_per_minute:
            budget = TokenBudget(self.config.tokens_per_minute, sleep=sleep)
        self.budget = budget

        if not self.config.api_key and isinstance(self.transport, HttpTransport):
            log.warning("LlmClient: API key missing in env")

    # ================= REQUEST =================

    def _payload(self, req):
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})

        payload = {
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        if req.want_token_probs:
            payload["logprobs"] = True
            payload["top_logprobs"] = TOP_LOGPROBS
        return payload

    def _headers(self):
        if not self.config.api_key:
            return {}
        return {"Authorization": f"Bearer {self.config.api_key}"}

    def _post(self, payload):
        """Selective retry. Returns (body, retries) or raises."""
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_err = None
        last_kind = None

        for attempt in range(self.config.max_retries + 1):
            if attempt:
                wait = self.config.backoff_base * 2 ** (attempt - 1)
                log.warning(f"retry {attempt}/{self.config.max_retries} in {wait:.1f}s ({last_err})")
                self.sleep(wait)

            try:
                status, body = self.transport.send(url, payload, self._headers(), self.config.timeout)
            except requests.exceptions.Timeout as e:
                last_err, last_kind = f"timeout: {e}", "timeout"
                continue
            except requests.exceptions.RequestException as e:
                last_err, last_kind = f"network: {e}", "network"
                continue

            if status == 200 and isinstance(body, dict):
                return body, attempt

            text = _error_text(body)
            if status in (401, 403):
                raise AuthError(f"http {status}: {text}")
            if status in (400, 413) and any(m in text.lower() for m in CONTEXT_MARKERS):
                raise ContextOverflow(f"provider rejected prompt size: {text}")
            if status == 429:
                last_err, last_kind = f"rate_limited {text}", "rate"
                continue
            if 500 <= status < 600 or status == 200:
                last_err, last_kind = f"http {status}: {text}", "server"
                continue

            # Clean rejection: don't retry.
            raise LlmError(f"http {status}: {text}")

        if last_kind == "rate":
            raise RateLimited(f"still rate limited after {self.config.max_retries} retries")
        if last_kind == "timeout":
            raise LlmTimeout(f"timed out after {self.config.max_retries} retries")
        raise LlmError(last_err or "max_retries_exhausted")

    # ================= COMPLETE =================

    def complete(self, req, case="", method=""):
        payload = self._payload(req)

        if self.budget is not None:
            self.budget.acquire(count_tokens(req.system) + count_tokens(req.user) + req.max_output_tokens)

        t0 = time.time()
        body, retries = self._post(payload)
        elapsed_ms = (time.time() - t0) * 1000

        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise LlmError(f"malformed completion body: {str(body)[:200]}")

        usage = body.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", 0))
        completion_tokens = int(usage.get("completion_tokens", 0))

        token_probs = None
        if req.want_token_probs:
            token_probs = _first_position_probs(choice)

        log.debug(f"{req.model}: {prompt_tokens}+{completion_tokens} tokens, {retries} retries, {elapsed_ms:.0f}ms")

        if self.ledger is not None:
            self.ledger.append(UsageRecord(
                model=req.model,
                case=case,
                method=method,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                cost_usd=self._cost(prompt_tokens, completion_tokens, req.model),
                timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"),
            ))

        return ChatResponse(text, prompt_tokens, completion_tokens, token_probs, retries)

    def _cost(self, prompt_tokens, completion_tokens, model):
        if self.costs is None:
            return Decimal(0)
        try:
            return estimate_cost(prompt_tokens, completion_tokens, model, self.costs)
        except UnknownModel:
            log.warning(f"no cost rates for {model}, recording 0")
            return Decimal(0)


def _first_position_probs(choice):
    logprobs = choice.get("logprobs") or {}
    content = logprobs.get("content") or []
    if not content:
        return None
    first = content[0]
    top = first.get("top_logprobs") or [{"token": first.get("token"), "logprob": first.get("logprob")}]
    return tuple((t["token"], math.exp(t["logprob"])) for t in top if t.get("logprob") is not None)


# ================= REPLIES =================

FENCE_RE = re.compile(r"^```[^\n]*\n(.*?)^```[ \t]*$", re.DOTALL | re.MULTILINE)
CODE_LIKE_RE = re.compile(
    r"^\s*(?:import\s|from\s+\S+\s+import\s|def\s|async\s|class\s|#|@|"
    r"(?:if|elif|else|for|while|with|try|except|finally|return|raise|assert|pass|del|global|nonlocal)\b|"
    r"[rRbBuUfF]{0,2}(?:\"|')|"
    r"[A-Za-z_][\w.]*\s*\(|"
    r"[A-Za-z_][\w.]*(?:\[[^\]]*\])?(?:\s*,\s*[A-Za-z_][\w.]*)*\s*[-+*/]?=(?!=))"
)
PROSE_RE = re.compile(r"^[A-Z][A-Za-z' ,]*[.!?:]?$")


def _parses(source):
    try:
        ast.parse(source)
    except (SyntaxError, ValueError):
        return False
    return True


def _without_trailing_prose(lines, start):
    end = len(lines)
    while end > start + 1 and (not lines[end - 1].strip() or PROSE_RE.match(lines[end - 1])):
        end -= 1
    return "\n".join(lines[start:end])


def sanitize_code_reply(text):
    """
    Strip chat framing from a reply that should be a code file.

    The longest fenced block wins. Without fences, a reply that already parses
    is kept whole; otherwise the first code-like line from which the rest
    parses starts the file.
    """
    blocks = FENCE_RE.findall(text)
    if blocks:
        best = max(blocks, key=lambda b: len(b.splitlines()))
        return best.strip("\n")

    body = text.strip("\n")
    if _parses(body):
        return body

    lines = body.splitlines()
    starts = [i for i, line in enumerate(lines) if CODE_LIKE_RE.match(line)]
    if not starts:
        return text.strip()

    for start in starts:
        chunk = _without_trailing_prose(lines, start)
        if _parses(chunk):
            return chunk

    log.warning("reply does not parse as Python, keeping it from the first code-like line")
    return _without_trailing_prose(lines, starts[0])
