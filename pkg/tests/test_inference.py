import json
import os
import signal
import subprocess
import sys
import textwrap
import time

import pytest

from conftest import GOLDEN, PNG_1PX, fast_endpoint, make_items
from supportscope import ValidationError
from supportscope.datasets import McqItem
from supportscope.inference import (
    GREEDY,
    SAMPLED,
    PromptTemplate,
    SamplingPlan,
    load_responses,
    render_prompt,
    request_seed,
    run_plan,
)
from supportscope.mock_server import ScriptedModelSpec


@pytest.fixture
def golden_item(tmp_path):
    img = tmp_path / "x.png"
    img.write_bytes(PNG_1PX)
    return McqItem("golden-1", "derma", str(img), "What is shown?", [("A", "benign"), ("B", "malignant")],
                   "B", "visible light photography", None)


def test_two_option_render(golden_item):
    body = render_prompt(golden_item, PromptTemplate(embed_item_marker=False))
    image, text = body["messages"][0]["content"]
    assert image["type"] == "image_url"
    assert image["image_url"]["url"].startswith("data:image/png;base64,")
    assert "A. benign\nB. malignant" in text["text"]
    assert "<answer>" in text["text"]


def test_render_matches_golden(golden_item):
    body = render_prompt(golden_item, model="mock-vlm")
    expected = json.loads((GOLDEN / "render_prompt.json").read_text())
    assert body == expected


def test_template_missing_placeholder():
    with pytest.raises(ValidationError, match=r"\{options\}"):
        PromptTemplate("{question} pick one")


def test_unsupported_image(tmp_path):
    item = McqItem("i", "t", str(tmp_path / "x.bmp"), "q", [("A", "a"), ("B", "b")], "A", None, None)
    (tmp_path / "x.bmp").write_bytes(b"BM")
    with pytest.raises(ValidationError, match="unsupported image"):
        render_prompt(item)


def test_greedy_plan_forces_k1_and_t0():
    plan = SamplingPlan(mode=GREEDY, k=16, temperature=0.7)
    assert (plan.k, plan.temperature) == (1, 0.0)
    with pytest.raises(ValidationError):
        SamplingPlan(mode=SAMPLED, temperature=0.0)


def test_request_seed_formula():
    plan = SamplingPlan(k=4, seed_base=100)
    seeds = [request_seed(plan, "x", s) for s in range(4)]
    assert seeds == list(range(seeds[0], seeds[0] + 4))
    assert request_seed(plan, "y", 0) != seeds[0]


def test_sampled_run_writes_k_per_item(tmp_path, mock_server):
    items = make_items(tmp_path, 3)
    server = mock_server(ScriptedModelSpec.for_items(items, p=0.5))
    server.record_log = True
    out = tmp_path / "run.jsonl"
    summary = run_plan(items, fast_endpoint(server.url), SamplingPlan(k=4), out)
    assert summary.completed == 12 and summary.failed == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 12
    recs = load_responses(out)
    assert sorted((r.item_id, r.sample_index) for r in recs) == [(it.item_id, s) for it in items for s in range(4)]
    bodies = [b for _, b, _, _ in server.log]
    assert all(b["temperature"] == 0.7 and b["top_p"] == 0.9 and b["n"] == 1 for b in bodies)
    assert len({b["seed"] for b in bodies}) == 12


def test_greedy_run_sends_temperature_zero(tmp_path, mock_server):
    items = make_items(tmp_path, 3)
    server = mock_server(ScriptedModelSpec.for_items(items))
    server.record_log = True
    run_plan(items, fast_endpoint(server.url), SamplingPlan.greedy(), tmp_path / "g.jsonl")
    bodies = [b for _, b, _, _ in server.log]
    assert len(bodies) == 3
    assert all(b["temperature"] == 0 and "top_p" not in b for b in bodies)
    assert {r.mode for r in load_responses(tmp_path / "g.jsonl")} == {GREEDY}


def test_refuses_to_mix_modes(tmp_path, mock_server):
    items = make_items(tmp_path, 2)
    server = mock_server(ScriptedModelSpec.for_items(items))
    out = tmp_path / "r.jsonl"
    run_plan(items, fast_endpoint(server.url), SamplingPlan.greedy(), out)
    with pytest.raises(ValidationError, match="refusing to mix"):
        run_plan(items, fast_endpoint(server.url), SamplingPlan(k=2), out)


class Interrupt(Exception):
    pass


def test_resume_after_in_process_interrupt(tmp_path, mock_server):
    items = make_items(tmp_path, 5)
    server = mock_server(ScriptedModelSpec.for_items(items))
    out = tmp_path / "run.jsonl"
    seen = []

    def stop_after_7(rec):
        seen.append(rec)
        if len(seen) == 7:
            raise Interrupt

    with pytest.raises(Interrupt):
        run_plan(items, fast_endpoint(server.url, max_concurrency=2), SamplingPlan(k=4), out, on_record=stop_after_7)
    first = len(load_responses(out))
    assert 7 <= first < 20
    server.reset_stats()
    before = server.request_count
    summary = run_plan(items, fast_endpoint(server.url), SamplingPlan(k=4), out)
    assert summary.skipped_existing == first
    assert server.request_count - before == 20 - first
    recs = load_responses(out)
    assert len(recs) == 20
    assert len(out.read_text().splitlines()) == 20


def test_resume_after_killed_process(tmp_path, mock_server):
    items = make_items(tmp_path, 10)
    server = mock_server(ScriptedModelSpec.for_items(items, latency_s=0.02))
    items_path = tmp_path / "items.jsonl"
    items_path.write_text("".join(json.dumps(it.to_dict()) + "\n" for it in items))
    out = tmp_path / "run.jsonl"
    script = textwrap.dedent(f"""
        from supportscope.datasets import load_items
        from supportscope.inference import EndpointConfig, SamplingPlan, run_plan
        ep = EndpointConfig(base_url={server.url!r}, model_name="m", max_concurrency=2, backoff_base=0.001)
        run_plan(load_items({str(items_path)!r}), ep, SamplingPlan(k=8), {str(out)!r})
    """)
    proc = subprocess.Popen([sys.executable, "-c", script])
    deadline = time.monotonic() + 30
    while time.monotonic() < deadline:
        if out.exists() and len(out.read_bytes().splitlines()) >= 10:
            break
        time.sleep(0.01)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
    # simulate a write cut mid-line
    with open(out, "a") as fh:
        fh.write('{"item_id": "toy-00')
    partial = len(load_responses(out))
    assert 10 <= partial < 80

    summary = run_plan(items, fast_endpoint(server.url), SamplingPlan(k=8), out)
    assert summary.skipped_existing == partial
    recs = load_responses(out)
    assert len(recs) == 80
    assert all(r.endpoint_error is None for r in recs)
    assert len({(r.item_id, r.sample_index) for r in recs}) == 80


def test_retries_absorb_server_errors(tmp_path, mock_server):
    items = make_items(tmp_path, 50)
    server = mock_server(ScriptedModelSpec.for_items(items, error_rate=0.3, rng_seed=7))
    summary = run_plan(items, fast_endpoint(server.url, max_retries=5), SamplingPlan(k=4), tmp_path / "r.jsonl")
    assert summary.failure_fraction < 0.01
    assert summary.retries > 0


def test_failures_recorded_and_retried_on_request(tmp_path, mock_server):
    items = make_items(tmp_path, 2)
    server = mock_server(ScriptedModelSpec.for_items(items, error_rate=1.0))
    out = tmp_path / "r.jsonl"
    summary = run_plan(items, fast_endpoint(server.url, max_retries=0), SamplingPlan(k=2), out)
    assert summary.failed == 4
    assert all("500" in r.endpoint_error for r in load_responses(out))
    server.spec = ScriptedModelSpec.for_items(items)
    assert run_plan(items, fast_endpoint(server.url), SamplingPlan(k=2), out).skipped_existing == 4
    summary = run_plan(items, fast_endpoint(server.url), SamplingPlan(k=2), out, retry_failed=True)
    assert summary.completed == 4
    assert all(r.endpoint_error is None for r in load_responses(out))


def test_concurrency_bound(tmp_path, mock_server):
    items = make_items(tmp_path, 20)
    server = mock_server(ScriptedModelSpec.for_items(items, latency_s=0.03))
    run_plan(items, fast_endpoint(server.url, max_concurrency=3), SamplingPlan(k=2), tmp_path / "r.jsonl")
    assert 1 <= server.high_water <= 3
    server.reset_stats()
    run_plan(items, fast_endpoint(server.url, max_concurrency=8), SamplingPlan(k=2), tmp_path / "r2.jsonl")
    assert 3 < server.high_water <= 8


def test_api_key_sent_as_bearer(tmp_path):
    from supportscope.inference import ChatClient
    import httpx

    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    client = ChatClient(fast_endpoint("http://unused", api_key="sk-test"))
    client._http = httpx.Client(transport=httpx.MockTransport(handler), headers=client._http.headers)
    assert client.complete({"messages": []}).text == "ok"
    assert seen["auth"] == "Bearer sk-test"
