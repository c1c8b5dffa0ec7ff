"""Mock plugin answering every eval with an in-protocol error; stays alive throughout."""
import json
import sys


def send(doc):
    print(json.dumps(doc), flush=True)


for line in sys.stdin:
    msg = json.loads(line)
    if msg["type"] == "hello":
        send({"type": "hello", "protocol": 1, "name": "error"})
    elif msg["type"] == "eval":
        send({"type": "error", "id": msg["id"], "message": "synthetic failure"})
    elif msg["type"] == "shutdown":
        break
