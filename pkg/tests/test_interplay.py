from __future__ import annotations

import json

import httpx
import pytest

from helpers import CallListAgent, fixture_world
from toolenv.client import (
    ChatCompletionsClient,
    EndpointConfig,
    Message,
    ModelClientError,
    message_from_wire,
    message_to_wire,
    tool_to_wire,
)
from toolenv.interplay import (
    EpisodeLimits,
    Trajectory,
    chunk_intent,
    make_replay_agent,
    make_scripted_user,
    run_episode,
    run_episodes,
    user_view,
)
from toolenv.runtime import ToolCall, digest


@pytest.fixture(scope="module")
def world():
    bundles, tasks = fixture_world()
    task = next(t for t in tasks if len(t.golden_actions) >= 3)
    return bundles, tasks, task, bundles[task.domain_id]


def test_replay_episode_reaches_golden_state(world):
    _, _, task, bundle = world
    traj = run_episode(task, bundle, make_replay_agent(task), make_scripted_user(task, 2))
    assert traj.terminal_reason == "user_done"
    assert traj.final_digest == task.golden_digest
    assert traj.tool_call_count == len(task.golden_actions)
    assert [c.tool_name for c in traj.tool_calls()] == [a.tool_name for a in task.golden_actions]
    assert traj.messages[0].role == "system"
    # every call is answered by exactly one tool message with the same id
    ids = [c.call_id for c in traj.tool_calls()]
    answers = [m.tool_call_id for m in traj.messages if m.role == "tool"]
    assert ids == answers and len(set(ids)) == len(ids)


def test_trajectory_record_round_trip(world):
    _, _, task, bundle = world
    traj = run_episode(task, bundle, make_replay_agent(task), make_scripted_user(task, 3))
    assert Trajectory.from_record(json.loads(json.dumps(traj.to_record()))) == traj


def test_tool_call_cap(world):
    _, _, task, bundle = world
    calls = [a.to_call() for a in task.golden_actions] * 10
    traj = run_episode(task, bundle, CallListAgent(calls), make_scripted_user(task), EpisodeLimits(max_tool_calls=4))
    assert traj.terminal_reason == "turn_cap"
    assert traj.tool_call_count == 4


def test_turn_cap_with_chatty_user(world):
    _, _, task, bundle = world

    class Chatty:
        def complete(self, messages, tools):
            return Message("assistant", "tell me more")

    traj = run_episode(task, bundle, CallListAgent([]), Chatty(), EpisodeLimits(max_turns=3))
    assert traj.terminal_reason == "turn_cap"
    assert sum(m.role == "user" for m in traj.messages) == 3


def test_agent_stop_and_client_failure(world):
    _, _, task, bundle = world

    class Silent:
        def complete(self, messages, tools):
            return Message("assistant", "")

    class Down:
        def complete(self, messages, tools):
            raise ModelClientError("endpoint unreachable")

    stop = run_episode(task, bundle, Silent(), make_scripted_user(task))
    assert stop.terminal_reason == "agent_stop"
    down = run_episode(task, bundle, Down(), make_scripted_user(task))
    assert down.terminal_reason == "client_failure"
    assert down.final_digest == digest(task.seed_state)


def test_tool_errors_are_shown_to_the_agent(world):
    _, _, task, bundle = world
    traj = run_episode(task, bundle, CallListAgent([ToolCall("no_such_tool", {})]), make_scripted_user(task))
    tool_msgs = [m for m in traj.messages if m.role == "tool"]
    assert "unknown_tool" in tool_msgs[0].content
    assert traj.final_digest == digest(task.seed_state)


def test_user_view_hides_tool_traffic(world):
    _, _, task, bundle = world
    traj = run_episode(task, bundle, make_replay_agent(task), make_scripted_user(task, 2))
    view = user_view(traj.messages, task, EpisodeLimits())
    assert view[0].role == "system" and task.intent_text in view[0].content
    assert all(m.role != "tool" and not m.tool_calls for m in view)


def test_chunk_intent_partitions_clauses(world):
    _, _, task, _ = world
    for k in (1, 2, 3, 10):
        parts = chunk_intent(task.intent_text, k)
        assert " ".join(parts) == task.intent_text
        assert len(parts) == min(k, len(task.golden_actions))


def test_parallel_runs_keep_job_order(world):
    bundles, tasks, _, _ = world
    jobs = [(t, bundles[t.domain_id], 0) for t in tasks[:12]]
    serial = run_episodes(jobs, make_replay_agent, make_scripted_user)
    parallel = run_episodes(jobs, make_replay_agent, make_scripted_user, parallel=4)
    assert serial == parallel


# --- HTTP client -------------------------------------------------------------


def completion(message):
    return {"choices": [{"message": message}]}


def test_wire_format_round_trip(world):
    _, _, task, bundle = world
    call = task.golden_actions[0].to_call("call_0")
    msg = Message("assistant", "", (call,))
    wire = message_to_wire(msg)
    assert json.loads(wire["tool_calls"][0]["function"]["arguments"]) == dict(call.arguments)
    assert message_from_wire(completion(wire)) == msg
    spec = tool_to_wire(bundle.tools[0])
    assert spec["function"]["parameters"]["required"] == bundle.tools[0].required_names


def test_unparseable_arguments_are_kept():
    msg = message_from_wire(completion({"role": "assistant", "content": None, "tool_calls": [
        {"id": "c1", "type": "function", "function": {"name": "get_x", "arguments": "{not json"}}
    ]}))
    assert msg.tool_calls[0].arguments == {"__unparsed__": "{not json"}


def test_client_retries_then_succeeds(world):
    _, _, _, bundle = world
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        if len(seen) < 3:
            return httpx.Response(503 if len(seen) == 1 else 429)
        return httpx.Response(200, json=completion({"role": "assistant", "content": "hello"}))

    sleeps = []
    client = ChatCompletionsClient(EndpointConfig(base_url="http://model/v1", max_retries=3), httpx.MockTransport(handler), sleeps.append)
    reply = client.complete([Message("user", "hi")], bundle.tools)
    assert reply == Message("assistant", "hello")
    assert sleeps == [1.0, 2.0]
    assert seen[0]["messages"] == [{"role": "user", "content": "hi"}]
    assert len(seen[0]["tools"]) == len(bundle.tools)


def test_client_gives_up(world):
    client = ChatCompletionsClient(
        EndpointConfig(max_retries=2), httpx.MockTransport(lambda r: httpx.Response(500)), lambda s: None
    )
    with pytest.raises(ModelClientError):
        client.complete([Message("user", "hi")], [])


def test_client_does_not_retry_client_errors():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    client = ChatCompletionsClient(EndpointConfig(max_retries=5), httpx.MockTransport(handler), lambda s: None)
    with pytest.raises(ModelClientError):
        client.complete([Message("user", "hi")], [])
    assert len(calls) == 1


def test_endpoint_config_from_env(monkeypatch):
    monkeypatch.setenv("TOOLENV_BASE_URL", "http://example.invalid/v1")
    monkeypatch.setenv("TOOLENV_MODEL", "m1")
    cfg = EndpointConfig.from_env(timeout=5.0, model=None)
    assert (cfg.base_url, cfg.model, cfg.timeout) == ("http://example.invalid/v1", "m1", 5.0)


def test_message_validation():
    with pytest.raises(ValueError):
        Message("robot", "x")
    with pytest.raises(ValueError):
        Message("user", "x", (ToolCall("a", {}),))
    with pytest.raises(ValueError):
        Message("assistant", "x", tool_call_id="c1")
