from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from conftest import node, report_graph, report_scenario

from agentdag.audit import system_audit
from agentdag.config import RunConfig
from agentdag.errors import AuthMissing, ContractViolation, ScenarioError, Transport, UnmatchedRequest
from agentdag.graph import AgentGraph
from agentdag.harness import FAULT_SIGNATURES, MockExecutor, Scenario, ScriptedExecutor, mock_invoke
from agentdag.harness.http import EndpointConfig, HttpExecutor
from agentdag.harness.metrics import Metrics
from agentdag.harness.simulate import evolve, load_records, long_run, simulate, write_run
from agentdag.orchestrator import execute
from agentdag.protocol import AgentOutput, parse_request, render_request
from agentdag.records import dumps_tree

SECRET = "sk-test-0123456789abcdef"


def test_scripted_decomposition_lists_subtasks():
    out = mock_invoke(report_scenario(), render_request("decompose", task="quarterly report", task_id="T"))
    assert json.loads(out.output) == [
        {"task": "collect sales figures", "writes": ["data/sales.csv"]},
        "draft the summary",
    ]


def test_unmatched_request():
    with pytest.raises(UnmatchedRequest):
        mock_invoke(report_scenario(), render_request("execute", task="bake bread", task_id="T"))


def test_malformed_fault_triggers_retry_path(ws):
    scen = report_scenario(**{"collect sales": {"fault": "malformed", "fault_attempts": 1}})
    with pytest.raises(ContractViolation):
        mock_invoke(scen, render_request("execute", task="collect sales figures", task_id="T", attempt=1))
    result = execute("write the quarterly report", report_graph(), ScriptedExecutor(scen), ws=ws)
    assert result.succeeded
    verdicts = [a.verdict for a in result.root.children[0].attempts]
    assert verdicts == ["failed", "accepted"]
    assert result.root.children[0].attempts[0].output.error_information.startswith(FAULT_SIGNATURES["malformed"])


def test_scenario_rejects_unknown_fault_and_keys():
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"entries": [{"match": "x", "fault": "explode"}]})
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"entries": [{"match": "x", "atoms": {}}]})


def test_scenario_yaml_round_trip(tmp_path):
    scen = report_scenario()
    scen.save(tmp_path / "s.yaml")
    assert Scenario.load(tmp_path / "s.yaml").to_dict() == scen.to_dict()


def test_mock_executor_is_deterministic(ws):
    a = execute("write the quarterly report", report_graph(), MockExecutor(), ws=ws)
    b = execute("write the quarterly report", report_graph(), MockExecutor(), ws=ws.subspace("again"))
    assert a.succeeded and dumps_tree(a.root) == dumps_tree(b.root)


# -- HTTP executor -------------------------------------------------------------


class Stub:
    """Chat-completion stub; ``answer(request_json) -> content`` decides each reply."""

    def __init__(self, answer):
        self.answer = answer
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append(body)
                stub.headers.append(dict(self.headers))
                content = stub.answer(body)
                if isinstance(content, int):
                    self.send_response(content)
                    self.end_headers()
                    return
                data = json.dumps({"choices": [{"message": {"content": content}}], "usage": {"total_tokens": 7}})
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(data.encode())

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def ok(text: str) -> str:
    return json.dumps({"status": "success", "output": text, "error_information": ""})


@pytest.fixture
def secret(monkeypatch):
    monkeypatch.setenv("AGENTDAG_TEST_KEY", SECRET)
    return SECRET


def http(stub: Stub) -> HttpExecutor:
    return HttpExecutor(EndpointConfig(stub.url, "stub-model", key_env="AGENTDAG_TEST_KEY", timeout=5))


def test_http_valid_json(secret):
    with Stub(lambda body: ok("hello")) as stub:
        ex = http(stub)
        out = ex.invoke("be brief", None, "say hello")
    assert out == AgentOutput.success("hello")
    assert stub.requests[0]["messages"] == [
        {"role": "system", "content": "be brief"},
        {"role": "user", "content": "say hello"},
    ]
    assert stub.headers[0]["Authorization"] == f"Bearer {secret}"
    assert ex.tokens_used == 7


def test_http_prose_around_json(secret):
    with Stub(lambda body: "Sure! Here it is:\n" + ok("wrapped") + "\nHope that helps.") as stub:
        out = http(stub).invoke("", None, "x")
    assert out.output == "wrapped" and len(stub.requests) == 1


def test_http_reasks_once_then_gives_up(secret):
    replies = iter(["no json here", ok("second time lucky")])
    with Stub(lambda body: next(replies)) as stub:
        out = http(stub).invoke("", None, "x")
    assert out.output == "second time lucky"
    assert len(stub.requests) == 2
    assert "could not be parsed" in stub.requests[1]["messages"][-1]["content"]
    with Stub(lambda body: "still prose") as stub:
        with pytest.raises(ContractViolation):
            http(stub).invoke("", None, "x")
    assert len(stub.requests) == 2


def test_http_missing_credential_before_network(monkeypatch):
    monkeypatch.delenv("AGENTDAG_TEST_KEY", raising=False)
    with Stub(lambda body: ok("never")) as stub:
        with pytest.raises(AuthMissing):
            http(stub).invoke("", None, "x")
    assert stub.requests == []


def test_http_error_status_is_transport(secret):
    with Stub(lambda body: 503) as stub:
        with pytest.raises(Transport) as err:
            http(stub).invoke("", None, "x")
    assert SECRET not in str(err.value)


def _agent_answer(body: dict) -> str:
    user = body["messages"][-1]["content"]
    req = parse_request(user[user.index("REQUEST JSON:"):])
    action = req["action"]
    if action == "execute":
        return ok("wrote the file\n<<<file out/notes.md\n# Notes\n>>>")
    if action == "validate":
        return ok("0.9")
    return ok("looks right")


def test_http_end_to_end_keeps_credential_out_of_artifacts(secret, tmp_path, caplog):
    g = AgentGraph()
    g.add_agent(node("notes", "functional", ["notes", "write"]))
    caplog.set_level(logging.DEBUG)
    with Stub(_agent_answer) as stub:
        ex = http(stub)
        result = execute("write notes", g, ex, RunConfig(dump_context=True), ws=None)
        run = tmp_path / "run"
        write_run(run, [result.root], Metrics.from_records([result.root]), system_audit(result.root),
                  history=result.history, cfg=RunConfig())
    assert result.succeeded, result.root.error_information
    assert result.workspace.get("out/notes.md") == b"# Notes"
    assert [a for a, _ in result.root.output.refs()] == ["out/notes.md"]
    assert secret not in repr(ex)
    assert secret not in caplog.text
    for root in (run, result.workspace.root):
        for path in root.rglob("*"):
            if path.is_file():
                assert secret.encode() not in path.read_bytes(), path


# -- simulation ----------------------------------------------------------------


def test_simulate_one_clean_round(tmp_path):
    res = simulate(RunConfig(), report_graph(), report_scenario(), rounds=1, run_dir=tmp_path / "sim")
    assert res.succeeded
    assert res.metrics.rejects == 0 and res.metrics.runs == 1
    for name in ("records.json", "records.jsonl", "metrics.json", "audit.yaml", "history.jsonl", "graph.yaml"):
        assert (tmp_path / "sim" / name).exists()
    assert load_records(tmp_path / "sim")[0].task.id == "R0.T0"
    assert res.metrics.bounded


def test_metrics_from_rejecting_run(ws):
    scen = report_scenario(**{"collect sales": {"fault": "wrong_name", "fault_attempts": 1}})
    res = execute("write the quarterly report", report_graph(), ScriptedExecutor(scen), ws=ws)
    m = Metrics.from_records([res.root])
    assert m.rejects == 1 and m.retries == 1 and m.tasks == 3 and m.attempts == 4
    assert m.history_sizes == sorted(m.history_sizes)


def test_long_run_bounded_short():
    cfg = RunConfig(token_budget=2000)
    lr = long_run(cfg, steps=200)
    assert max(lr.context_sizes) <= 2000
    assert all(e <= cfg.tau for e in lr.env_sizes)
    assert lr.history_sizes[-1] > 2000 and lr.compressions > 0


def test_parallel_four_siblings_faster():
    entries = [{"match": "four things", "decompose": [f"job {i}" for i in range(4)]}]
    entries += [{"match": f"job {i}", "atom": {"delay": 0.1}} for i in range(4)]
    scen = Scenario.from_dict(
        {"tasks": ["four things"], "defaults": {"judge": "success", "merge": "concat"}, "entries": entries}
    )
    g = AgentGraph()
    g.add_agent(node("p", "planner", ["four", "things"]))
    g.add_agent(node("w", "functional", ["job"]), root=False)
    g.connect("p", "w")
    serial = simulate(RunConfig(max_parallel=1), g, scen).metrics.wall_time
    parallel = simulate(RunConfig(max_parallel=4), g, scen).metrics.wall_time
    assert serial / parallel > 2


def test_evolve_writes_lineage_and_dataset(tmp_path):
    scen = report_scenario()
    scen.tasks = ["write the quarterly report"]
    scen.backends = [
        {"id": "steady", "entries": []},
        {"id": "flaky", "entries": [{"match": "collect sales", "fault": "malformed", "atom": {}}]},
    ]
    res = evolve(RunConfig(min_observations=1, alpha=0.5), report_graph(), scen, rounds=2, run_dir=tmp_path / "evo")
    evo = tmp_path / "evo" / "evolution"
    assert res.main.delta_ids() == ["steady:R0.T0", "steady:R1.T0"]
    assert res.pruned == ["flaky"]
    assert (evo / "lineage-0.json").exists() and (evo / "graph-1.yaml").exists()
    assert len((evo / "dataset.jsonl").read_text().splitlines()) == 2
