"""Drives the plugin over raw stdin/stdout pipes, exactly as an engine would."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from evocell.compiler import compile_network
from evocell.genome import BlockKind, Genome, LayerGene, to_doc


def small_network():
    genome = Genome((LayerGene(BlockKind.INVR, 8, 8, 1, 1),), stem_out=8)
    net = compile_network(genome, head_widths=(), num_classes=2, input_size=(32, 32))
    return to_doc(genome), net.to_doc()


class PluginProc:
    def __init__(self, config_path):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "ref_trainer", str(config_path)],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
            text=True, bufsize=1,
        )

    def send(self, doc):
        self.proc.stdin.write(json.dumps(doc) + "\n")
        self.proc.stdin.flush()

    def recv(self):
        line = self.proc.stdout.readline()
        assert line, "plugin closed its output"
        return json.loads(line)

    def close(self):
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()


@pytest.fixture
def plugin(plugin_config_path):
    proc = PluginProc(plugin_config_path)
    proc.send({"type": "hello", "protocol": 1})
    hello = proc.recv()
    assert hello == {"type": "hello", "protocol": 1, "name": "ref-trainer"}
    yield proc
    proc.close()


def eval_request(request_id, budget=None):
    genome_doc, network_doc = small_network()
    return {
        "type": "eval",
        "id": request_id,
        "genome": genome_doc,
        "network": network_doc,
        "budget": budget or {"epochs": 1, "time_s": 60, "max_params": 10**9},
    }


def test_two_requests_get_matching_ids(plugin):
    plugin.send(eval_request(1))
    first = plugin.recv()
    plugin.send(eval_request(2))
    second = plugin.recv()
    assert first["type"] == "result" and first["id"] == 1
    assert second["type"] == "result" and second["id"] == 2
    assert 0.0 <= first["accuracy"] <= 1.0
    assert first["accuracy"] == second["accuracy"]  # same request, same seed


def test_unknown_primitive_answered_in_protocol_and_plugin_survives(plugin):
    request = eval_request(7)
    request["network"]["primitives"][0]["op"] = "fft"
    plugin.send(request)
    error = plugin.recv()
    assert error["type"] == "error" and error["id"] == 7
    assert "fft" in error["message"]
    plugin.send(eval_request(8))
    assert plugin.recv()["id"] == 8  # still serving


def test_over_budget_params_scored_zero_with_note(plugin):
    plugin.send(eval_request(3, budget={"epochs": 1, "time_s": 60, "max_params": 10}))
    result = plugin.recv()
    assert result["type"] == "result" and result["id"] == 3
    assert result["accuracy"] == 0.0
    assert "exceeds budget" in result["notes"]


def test_shutdown_exits_cleanly(plugin_config_path):
    proc = PluginProc(plugin_config_path)
    proc.send({"type": "hello", "protocol": 1})
    proc.recv()
    proc.send({"type": "shutdown"})
    assert proc.proc.wait(timeout=30) == 0


def test_unknown_request_fields_ignored(plugin):
    request = eval_request(9)
    request["future_field"] = {"x": 1}
    plugin.send(request)
    assert plugin.recv()["id"] == 9
