import math
import random
import threading
from decimal import Decimal

import pytest

from errors import AuthError, ContextOverflow, LlmError, LlmTimeout, RateLimited, UnknownModel
from llm_client import (
    ChatRequest,
    CostTable,
    LlmClient,
    MockTransport,
    ProviderConfig,
    TokenBudget,
    UsageLedger,
    UsageRecord,
    estimate_cost,
    sanitize_code_reply,
)

GPT4O = CostTable.from_config({"gpt-4o": {"input_per_1m": 2.5, "output_per_1m": 10.0}})


def request(**kw):
    return ChatRequest(model=kw.pop("model", "gpt-4o"), system=kw.pop("system", ""), user=kw.pop("user", "migrate"), **kw)


# ================= COMPLETE =================

def test_mock_reply(make_client):
    transport = MockTransport(reply="x=1")
    resp = make_client(transport).complete(request())
    assert resp.text == "x=1"
    assert resp.retries == 0
    assert resp.prompt_tokens == 2      # "migrate" is 7 bytes
    assert resp.completion_tokens == 1
    assert transport.call_count == 1


def test_payload_shape(make_client):
    transport = MockTransport(reply="ok")
    make_client(transport).complete(request(system="sys", temperature=0.0, max_output_tokens=10))
    call = transport.calls[0]
    assert call["url"] == "https://llm.test/v1/chat/completions"
    payload = call["payload"]
    assert payload["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "migrate"}]
    assert payload["temperature"] == 0.0
    assert payload["max_tokens"] == 10
    assert "logprobs" not in payload


def test_empty_system_message_is_omitted(make_client):
    transport = MockTransport(reply="ok")
    make_client(transport).complete(request())
    assert [m["role"] for m in transport.calls[0]["payload"]["messages"]] == ["user"]


def test_server_errors_are_retried(make_client):
    waits = []
    transport = MockTransport(reply="x=1", failures=[500, 503])
    client = make_client(transport)
    client.sleep = waits.append
    resp = client.complete(request())
    assert resp.text == "x=1"
    assert resp.retries == 2
    assert transport.call_count == 3
    assert waits == [2.0, 4.0]


def test_network_errors_are_retried(make_client):
    transport = MockTransport(reply="ok", failures=["network"])
    assert make_client(transport).complete(request()).retries == 1


def test_rate_limit_exhausted(make_client):
    transport = MockTransport(reply="ok", failures=[429, 429, 429])
    with pytest.raises(RateLimited):
        make_client(transport).complete(request())
    assert transport.call_count == 3


def test_timeouts_exhausted(make_client):
    transport = MockTransport(reply="ok", failures=["timeout"] * 3)
    with pytest.raises(LlmTimeout):
        make_client(transport).complete(request())


def test_auth_error_is_not_retried(make_client):
    transport = MockTransport(reply="ok", failures=[401])
    with pytest.raises(AuthError):
        make_client(transport).complete(request())
    assert transport.call_count == 1


def test_context_overflow_from_provider(make_client):
    transport = MockTransport(reply="ok", failures=[(400, "context_length_exceeded")])
    with pytest.raises(ContextOverflow):
        make_client(transport).complete(request())
    assert transport.call_count == 1


def test_other_client_errors_are_not_retried(make_client):
    transport = MockTransport(reply="ok", failures=[422])
    with pytest.raises(LlmError) as exc:
        make_client(transport).complete(request())
    assert type(exc.value) is LlmError
    assert transport.call_count == 1


def test_request_validation():
    with pytest.raises(ValueError):
        request(temperature=-0.1)
    with pytest.raises(ValueError):
        request(max_output_tokens=0)


def test_token_probs(make_client):
    transport = MockTransport(reply="3", token_probs=[("3", 0.75), ("2", 0.25)])
    resp = make_client(transport).complete(request(want_token_probs=True))
    assert transport.calls[0]["payload"]["logprobs"] is True
    assert [t for t, _ in resp.token_probs] == ["3", "2"]
    assert math.isclose(resp.token_probs[0][1], 0.75)
    assert math.isclose(resp.token_probs[1][1], 0.25)


def test_token_probs_absent_when_not_requested(make_client):
    transport = MockTransport(reply="3", token_probs=[("3", 1.0)])
    assert make_client(transport).complete(request()).token_probs is None


# ================= COSTS =================

def test_cost_of_a_large_run():
    cost = estimate_cost(33650, 32741, "gpt-4o", GPT4O)
    assert abs(float(cost) - 0.41) <= 0.005
    assert cost.quantize(Decimal("0.01")) == Decimal("0.41")


def test_cost_edges():
    assert estimate_cost(0, 0, "gpt-4o", GPT4O) == 0
    assert estimate_cost(1_000_000, 0, "gpt-4o", GPT4O) == Decimal("2.5")
    with pytest.raises(UnknownModel):
        estimate_cost(1, 1, "unknown-model", GPT4O)


def test_ledger_records_cost_per_request(make_client, tmp_path):
    ledger = UsageLedger(str(tmp_path / "usage.csv"))
    client = make_client(MockTransport(reply="x" * 40), ledger=ledger, costs=GPT4O)
    client.complete(request(user="y" * 400), case="pandas", method="with_diff")

    (record,) = ledger.records()
    assert (record.case, record.method, record.prompt_tokens, record.completion_tokens) == ("pandas", "with_diff", 100, 10)
    assert record.cost_usd == Decimal("0.00035")

    reloaded = UsageLedger.load(str(tmp_path / "usage.csv"))
    assert reloaded.records()[0].cost_usd == Decimal("0.00035")


def test_unknown_model_costs_zero_in_ledger(make_client, caplog):
    ledger = UsageLedger()
    make_client(MockTransport(reply="ok"), ledger=ledger, costs=GPT4O).complete(request(model="mystery"))
    assert ledger.total() == 0
    assert "no cost rates" in caplog.text


def test_ledger_total_is_exact(tmp_path):
    rng = random.Random(7)
    ledger = UsageLedger(str(tmp_path / "usage.csv"))
    expected = Decimal(0)
    for i in range(100):
        p, c = rng.randint(0, 50_000), rng.randint(0, 50_000)
        cost = estimate_cost(p, c, "gpt-4o", GPT4O)
        expected += cost
        ledger.append(UsageRecord("gpt-4o", f"case{i % 3}", "with_diff", p, c, cost, "t"))

    assert ledger.total() == expected
    reloaded = UsageLedger.load(str(tmp_path / "usage.csv"))
    assert reloaded.total() == expected
    summary = ledger.summary()
    assert summary["requests"].sum() == 100
    assert summary["prompt_tokens"].sum() == sum(r.prompt_tokens for r in ledger.records())


def test_ledger_under_threads():
    ledger = UsageLedger()

    def worker():
        for _ in range(200):
            ledger.append(UsageRecord("m", "c", "x", 1, 1, Decimal("0.001")))

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(ledger.records()) == 1600
    assert ledger.total() == Decimal("1.600")


def test_summary_rounds_only_for_display():
    ledger = UsageLedger()
    cost = estimate_cost(33650, 32741, "gpt-4o", GPT4O)
    ledger.append(UsageRecord("gpt-4o", "briefgen", "with_code", 33650, 32741, cost))
    row = ledger.summary().iloc[0]
    assert row["cost_usd"] == "0.41"
    assert ledger.total() == cost


# ================= RATE LIMIT =================

class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.slept = []

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.slept.append(seconds)
        self.now += seconds


def test_token_budget_waits_for_the_window():
    clock = FakeClock()
    budget = TokenBudget(1000, clock=clock, sleep=clock.sleep)
    budget.acquire(600)
    clock.now = 10.0
    budget.acquire(300)
    assert clock.slept == []

    budget.acquire(500)
    assert clock.slept == [50.0]
    assert clock.now == 60.0


def test_oversized_request_still_goes_through_alone():
    clock = FakeClock()
    budget = TokenBudget(100, clock=clock, sleep=clock.sleep)
    budget.acquire(500)
    assert clock.slept == []


def test_client_uses_budget(make_client):
    clock = FakeClock()
    budget = TokenBudget(10_000, clock=clock, sleep=clock.sleep)
    client = make_client(MockTransport(reply="ok"), budget=budget)
    client.complete(request(max_output_tokens=6000))
    client.complete(request(max_output_tokens=6000))
    assert clock.slept == [60.0]


# ================= REPLIES =================

@pytest.mark.parametrize("reply, expected", [
    ("```python\nx = 1\n```", "x = 1"),
    ("Sure! Here it is:\n```python\nimport pandas as pd\ndf = pd.DataFrame()\n```\nLet me know.", "import pandas as pd\ndf = pd.DataFrame()"),
    ("```\na\n```\ntext\n```python\nb = 1\nc = 2\n```", "b = 1\nc = 2"),
    ("Here is the refactored code:\n\nimport os\nprint(os.getcwd())\n\nHope this helps.", "import os\nprint(os.getcwd())"),
    ("def f():\n    return 1\n", "def f():\n    return 1"),
])
def test_sanitize_code_reply(reply, expected):
    assert sanitize_code_reply(reply) == expected


@pytest.mark.parametrize("reply", [
    '"""Module doc."""\nimport os\n\nx = 1\n',
    'print("hello")\nx = 1\n',
    "sys.path.insert(0, 'lib')\nimport core\n",
    "if __name__ == '__main__':\n    main()\n",
    "try:\n    import ujson as json\nexcept ImportError:\n    import json\n",
    "with open('f') as fh:\n    data = fh.read()\n",
])
def test_unfenced_source_is_kept_whole(reply):
    assert sanitize_code_reply(reply) == reply.rstrip("\n")


def test_preamble_before_docstring_is_dropped():
    reply = 'Here is the updated file:\n\n"""Helpers."""\nprint("hi")\n\nLet me know if anything else is needed.'
    assert sanitize_code_reply(reply) == '"""Helpers."""\nprint("hi")'


def test_fence_inside_the_code_does_not_end_the_block():
    code = (
        "def f(s):\n"
        '    """Render a snippet.\n'
        "\n"
        "    ```python\n"
        "    f('x')\n"
        "    ```\n"
        '    """\n'
        "    return s\n"
        "\n"
        "\n"
        "y = 2\n"
        "z = 3\n"
    )
    reply = f"Updated:\n```python\n{code}```\nThat's all."
    assert sanitize_code_reply(reply) == code.rstrip("\n")
