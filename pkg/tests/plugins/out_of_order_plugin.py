"""Mock plugin that answers requests two at a time, in reverse arrival order."""
import json
import sys


def send(doc):
    print(json.dumps(doc), flush=True)


pending = []
for line in sys.stdin:
    msg = json.loads(line)
    if msg["type"] == "hello":
        send({"type": "hello", "protocol": 1, "name": "out-of-order"})
    elif msg["type"] == "eval":
        pending.append(msg)
        if len(pending) == 2:
            for queued in reversed(pending):
                send({
                    "type": "result",
                    "id": queued["id"],
                    "accuracy": 0.1 * queued["id"],
                    "params": queued["network"]["param_count"],
                    "notes": "",
                })
            pending.clear()
    elif msg["type"] == "shutdown":
        break
