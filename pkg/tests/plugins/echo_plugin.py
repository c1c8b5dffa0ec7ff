"""Well-behaved mock plugin: answers every eval with a fixed accuracy."""
import json
import sys

ACCURACY = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5


def send(doc):
    print(json.dumps(doc), flush=True)


for line in sys.stdin:
    msg = json.loads(line)
    if msg["type"] == "hello":
        send({"type": "hello", "protocol": 1, "name": "echo"})
    elif msg["type"] == "eval":
        send({
            "type": "result",
            "id": msg["id"],
            "accuracy": ACCURACY,
            "params": msg["network"]["param_count"],
            "notes": "echo",
        })
    elif msg["type"] == "shutdown":
        break
