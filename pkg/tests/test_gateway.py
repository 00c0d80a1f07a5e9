import json
import threading

import httpx
import pytest

from gamebug.gateway import (
    ChatRequest,
    Gateway,
    GatewayError,
    HttpBackend,
    ReplayMiss,
    ScriptExhausted,
    TokenBucket,
    TransportError,
)


def _request(text="hello", **kw):
    return ChatRequest("gpt-4", (("system", "be brief"), ("user", text)), **kw)


def _ok(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}, "finish_reason": "stop"}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}})


def _refusing_transport():
    def handler(request):
        raise AssertionError(f"unexpected network call to {request.url}")

    return httpx.MockTransport(handler)


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.lock = threading.RLock()

    def __call__(self):
        with self.lock:
            return self.now

    def sleep(self, seconds):
        with self.lock:
            self.now += seconds


def test_script_order_and_provenance():
    gw = Gateway.scripted(["one", "two", "three"])
    got = [gw.complete(_request(str(i))) for i in range(3)]
    assert [r.text for r in got] == ["one", "two", "three"]
    assert {r.provenance for r in got} == {"scripted"}
    with pytest.raises(ScriptExhausted):
        gw.complete(_request())


def test_record_then_replay(tmp_path):
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        return _ok("recorded answer")

    backend = HttpBackend("http://llm.test/v1", "k", transport=httpx.MockTransport(handler))
    rec = Gateway("record", backend=backend, store=tmp_path)
    first = rec.complete(_request())
    assert first.provenance == "live" and len(calls) == 1
    assert calls[0]["temperature"] == 0.0
    assert (tmp_path / f"{_request().digest}.json").exists()

    replay = Gateway("replay", store=tmp_path)
    again = replay.complete(_request())
    assert again.text == first.text
    assert again.provenance == "cached"
    assert len(calls) == 1


def test_replay_miss_names_digest(tmp_path):
    backend = HttpBackend("http://llm.test/v1", transport=httpx.MockTransport(lambda r: _ok("x")))
    Gateway("record", backend=backend, store=tmp_path).complete(_request("hello"))
    mutated = _request("hellp")
    with pytest.raises(ReplayMiss) as info:
        Gateway("replay", store=tmp_path).complete(mutated)
    assert mutated.digest in str(info.value)
    assert info.value.digest == mutated.digest


def test_replay_and_script_make_no_network_calls(tmp_path):
    backend = HttpBackend("http://llm.test/v1", transport=_refusing_transport())
    req = _request()
    (tmp_path / f"{req.digest}.json").write_text(
        json.dumps({"request": req.to_dict(), "response": {"text": "cached"}}), encoding="utf-8"
    )
    assert Gateway("replay", backend=backend, store=tmp_path).complete(req).text == "cached"
    assert Gateway("script", backend=backend, script=["s"]).complete(req).text == "s"


def test_digest_sensitivity():
    base = _request()
    assert base.digest == _request().digest
    variants = [
        _request("hello!"),
        _request(temperature=0.5),
        _request(max_tokens=10),
        ChatRequest("gpt-4o", base.messages),
        ChatRequest("gpt-4", (("user", "be brief"), ("user", "hello"))),
    ]
    assert len({v.digest for v in variants} | {base.digest}) == len(variants) + 1


def test_mode_validation(tmp_path):
    with pytest.raises(ValueError):
        Gateway("bogus")
    with pytest.raises(ValueError):
        Gateway("live")
    with pytest.raises(ValueError):
        Gateway("replay")
    with pytest.raises(ValueError):
        ChatRequest("m", (("robot", "x"),))


def test_from_env(monkeypatch, tmp_path):
    monkeypatch.delenv("GAMEBUG_BASE_URL", raising=False)
    with pytest.raises(ValueError, match="GAMEBUG_BASE_URL"):
        Gateway.from_env("live")
    monkeypatch.setenv("GAMEBUG_MODEL", "local-model")
    gw = Gateway.from_env("replay", store=tmp_path)
    assert gw.request([("user", "x")]).model == "local-model"


def test_backoff_retries_then_succeeds():
    statuses = iter([429, 503, 200])
    delays = []

    def handler(request):
        code = next(statuses)
        return _ok("fine") if code == 200 else httpx.Response(code, text="busy")

    backend = HttpBackend("http://llm.test", transport=httpx.MockTransport(handler), backoff=0.5, sleep=delays.append)
    resp = backend.send(_request())
    assert resp.text == "fine"
    assert resp.usage == {"prompt_tokens": 3, "completion_tokens": 1}
    assert delays == [0.5, 1.0]


def test_no_retry_after_wellformed_response():
    count = []

    def handler(request):
        count.append(1)
        return httpx.Response(400, text="bad request")

    backend = HttpBackend("http://llm.test", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(TransportError, match="HTTP 400"):
        backend.send(_request())
    assert len(count) == 1


def test_gives_up_after_max_attempts():
    def handler(request):
        raise httpx.ConnectError("down")

    backend = HttpBackend("http://llm.test", transport=httpx.MockTransport(handler), max_attempts=3, sleep=lambda s: None)
    with pytest.raises(TransportError, match="after 3 attempts"):
        backend.send(_request())


def test_truncated_completion_is_an_error():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": "par"}, "finish_reason": "length"}]})

    backend = HttpBackend("http://llm.test", transport=httpx.MockTransport(handler))
    with pytest.raises(GatewayError, match="max output length"):
        backend.send(_request())


def test_bucket_two_per_minute():
    clock = FakeClock()
    bucket = TokenBucket(2, clock=clock, sleep=clock.sleep)
    assert bucket.try_acquire() == 0
    assert bucket.try_acquire() == 0
    wait = bucket.try_acquire()
    assert wait == pytest.approx(30.0)
    clock.sleep(29.0)
    assert bucket.try_acquire() > 0
    clock.sleep(1.0)
    assert bucket.try_acquire() == 0


def test_bucket_blocking_acquire_waits_for_refill():
    clock = FakeClock()
    bucket = TokenBucket(2, clock=clock, sleep=clock.sleep)
    for _ in range(3):
        bucket.acquire()
    assert clock.now == pytest.approx(30.0)


def test_unlimited_bucket():
    bucket = TokenBucket(None, sleep=lambda s: pytest.fail("should not sleep"))
    for _ in range(1000):
        bucket.acquire()


def test_bucket_concurrent_stress():
    clock = FakeClock()
    admitted = []

    class Watched(TokenBucket):
        def try_acquire(self, cost=1.0):
            # hold the clock lock so the admission time is exact
            with clock.lock:
                wait = super().try_acquire(cost)
                if wait == 0:
                    admitted.append(clock.now)
                return wait

    rate, capacity = 6, 3
    bucket = Watched(rate, capacity, clock=clock, sleep=lambda s: clock.sleep(min(s, 0.5)))

    def worker():
        for _ in range(10):
            bucket.acquire()

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(admitted) == 80
    admitted.sort()
    for i, start in enumerate(admitted):
        for width in (1.0, 10.0, 60.0):
            inside = sum(1 for t in admitted[i:] if t < start + width)
            assert inside <= capacity + rate * width / 60.0 + 1e-9


def test_concurrent_script_calls_hand_out_each_reply_once():
    gw = Gateway.scripted([str(i) for i in range(200)])
    got = []
    lock = threading.Lock()

    def worker():
        for _ in range(25):
            text = gw.complete(_request()).text
            with lock:
                got.append(text)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(got, key=int) == [str(i) for i in range(200)]
    assert gw.calls == 200
