"""Evaluator plugin: newline-delimited JSON over stdin/stdout.

Handshake, then one result (or in-protocol error) per eval request. The
process never exits on a bad request; unknown fields in requests are ignored.
"""

from __future__ import annotations

import json
import sys

from .config import PluginConfig
from .dataset import load_split
from .model_builder import UnsupportedPrimitive, build_model, trainable_params
from .trainer import train_and_score

PROTOCOL_VERSION = 1


def _send(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc) + "\n")
    sys.stdout.flush()


def _handle_eval(msg: dict, cfg: PluginConfig, data) -> dict:
    request_id = msg["id"]
    network = msg["network"]
    budget = msg.get("budget", {})
    max_params = int(budget.get("max_params", 10**12))
    epochs = int(budget.get("epochs", 1))
    time_limit = float(budget.get("time_s", 60.0))

    declared = int(network.get("param_count", 0))
    if declared > max_params:
        return {"type": "result", "id": request_id, "accuracy": 0.0,
                "params": declared, "notes": f"param_count {declared} exceeds budget {max_params}"}

    built = trainable_params(build_model(network))
    if built != declared:
        return {"type": "error", "id": request_id,
                "message": f"built {built} trainable params, description declares {declared}"}
    accuracy = train_and_score(network, data, cfg, epochs=epochs, time_limit=time_limit)
    return {"type": "result", "id": request_id, "accuracy": accuracy,
            "params": built, "notes": f"trained {epochs} epoch(s)"}


def serve(cfg: PluginConfig) -> int:
    data = None
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            _send({"type": "error", "id": None, "message": "malformed request line"})
            continue
        kind = msg.get("type")
        if kind == "hello":
            _send({"type": "hello", "protocol": PROTOCOL_VERSION, "name": "ref-trainer"})
        elif kind == "eval":
            try:
                if data is None:
                    data = load_split(cfg)  # lazy: handshake stays instant
                _send(_handle_eval(msg, cfg, data))
            except UnsupportedPrimitive as exc:
                _send({"type": "error", "id": msg.get("id"), "message": str(exc)})
            except Exception as exc:  # noqa: BLE001 - plugin must stay alive
                _send({"type": "error", "id": msg.get("id"),
                       "message": f"{type(exc).__name__}: {exc}"})
        elif kind == "shutdown":
            return 0
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: ref-trainer <config.json>", file=sys.stderr)
        return 1
    return serve(PluginConfig.load(argv[0]))


if __name__ == "__main__":
    sys.exit(main())
