"""Fitness evaluation: deterministic surrogate landscape, external plugin protocol, result cache.

The surrogate is a desk-scale stand-in for CNN training: it rewards
occurrences of a planted adjacent block pair, penalizes distance from a target
depth, and adds small per-genome noise seeded by the genome digest so repeat
scoring is bit-identical. Real training happens in external plugin processes
speaking newline-delimited JSON over stdin/stdout. A digest-keyed cache (with
an append-only on-disk journal) makes duplicate evaluations free and lets
resumed runs skip completed work; failed evaluations score 0 and are not
journaled so a resume can retry them.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .compiler import NetworkDescription
from .control import SetKey, genome_sets, set_key_from_name, set_key_name
from .errors import BackendTimeout, BackendUnavailable, ProtocolError
from .genome import BlockKind, Genome, canonical_digest, to_doc

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
TIMEOUT_GRACE_S = 30.0


@dataclass(frozen=True)
class SurrogateSpec:
    planted_pair: SetKey = (BlockKind.INVR, BlockKind.INVR)
    target_depth: int = 7
    base: float = 0.3
    pair_weight: float = 0.5
    depth_penalty: float = 0.02
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.base + self.pair_weight > 1.0 + 1e-12:
            raise ValueError("base + pair_weight must be <= 1 so the upper clamp is reachable")

    def to_doc(self) -> dict:
        return {
            "planted_pair": set_key_name(self.planted_pair),
            "target_depth": self.target_depth,
            "base": self.base,
            "pair_weight": self.pair_weight,
            "depth_penalty": self.depth_penalty,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SurrogateSpec":
        doc = dict(doc)
        doc["planted_pair"] = set_key_from_name(doc["planted_pair"])
        return cls(**doc)


@dataclass(frozen=True)
class EvalBudget:
    epochs: int = 1
    time_limit: float = 60.0
    max_params: int = 50_000_000

    def __post_init__(self):
        if self.epochs < 1 or self.time_limit <= 0 or self.max_params < 1:
            raise ValueError("budget fields must be positive")

    def to_doc(self) -> dict:
        return {"epochs": self.epochs, "time_s": self.time_limit, "max_params": self.max_params}

    @classmethod
    def from_doc(cls, doc: dict) -> "EvalBudget":
        return cls(epochs=doc["epochs"], time_limit=doc["time_s"], max_params=doc["max_params"])


@dataclass
class EvalResult:
    digest: str
    accuracy: float
    params: int
    source: str  # surrogate | external | cache
    wall_time: float = 0.0
    note: str = ""
    ok: bool = True

    def to_doc(self) -> dict:
        return {
            "digest": self.digest,
            "accuracy": self.accuracy,
            "params": self.params,
            "source": self.source,
            "wall_time": self.wall_time,
            "note": self.note,
            "ok": self.ok,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EvalResult":
        return cls(**doc)


def surrogate_accuracy(genome: Genome, spec: SurrogateSpec) -> float:
    """Deterministic synthetic fitness of a genome under the planted-pair landscape."""
    n = len(genome)
    pair_count = sum(1 for key in genome_sets(genome) if key == spec.planted_pair)
    raw = (
        spec.base
        + spec.pair_weight * pair_count / max(1, n - 1)
        - spec.depth_penalty * abs(n - spec.target_depth)
    )
    if spec.noise_sigma > 0:
        noise_rng = random.Random(f"{spec.seed}:{canonical_digest(genome)}")
        raw += noise_rng.gauss(0.0, spec.noise_sigma)
    return min(1.0, max(0.0, raw))


class EvalCache:
    """Digest-keyed result store with an optional append-only JSONL journal.

    Reads are lock-free on the underlying dict; writes (and journal appends)
    are serialized.
    """

    def __init__(self, journal_path: str | Path | None = None):
        self._results: dict[str, EvalResult] = {}
        self._lock = threading.Lock()
        self.journal_path = Path(journal_path) if journal_path else None
        if self.journal_path and self.journal_path.exists():
            self._load_journal()

    def _load_journal(self):
        with open(self.journal_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                result = EvalResult.from_doc(json.loads(line))
                self._results[result.digest] = result

    def get(self, digest: str) -> EvalResult | None:
        return self._results.get(digest)

    def put(self, result: EvalResult) -> None:
        with self._lock:
            self._results[result.digest] = result
            if self.journal_path:
                with open(self.journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(result.to_doc(), sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._results)


class SurrogateBackend:
    """Pure in-process backend over the surrogate landscape.

    wall_time is reported as 0.0 so surrogate result lists are byte-identical
    across runs and parallelism levels.
    """

    name = "surrogate"

    def __init__(self, spec: SurrogateSpec, describe: Callable[[Genome], NetworkDescription]):
        self.spec = spec
        self.describe = describe

    def evaluate(self, genome: Genome, budget: EvalBudget) -> EvalResult:
        net = self.describe(genome)
        return EvalResult(
            digest=canonical_digest(genome),
            accuracy=surrogate_accuracy(genome, self.spec),
            params=net.param_count,
            source=self.name,
        )

    def close(self):
        pass


class PluginClient:
    """One plugin process plus a reader thread matching result lines to request ids."""

    def __init__(self, command: Sequence[str], hello_timeout: float = 10.0):
        self.command = list(command)
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendUnavailable(f"could not start plugin {self.command!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._responses: dict[int, dict] = {}
        self._failure: Exception | None = None
        self._line_no = 0
        self.name = "plugin"
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._handshake(hello_timeout)

    def _read_loop(self):
        try:
            for line in self.proc.stdout:
                self._line_no += 1
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    self._fail(ProtocolError(f"malformed plugin line {self._line_no}: {exc}"))
                    return
                if not isinstance(doc, dict) or "type" not in doc:
                    self._fail(ProtocolError(f"plugin line {self._line_no} is not a typed document"))
                    return
                with self._cond:
                    if doc["type"] == "hello":
                        self._responses[-1] = doc
                    elif "id" in doc:
                        self._responses[int(doc["id"])] = doc
                    self._cond.notify_all()
        except ValueError:
            pass  # stream closed mid-read during shutdown
        finally:
            self._fail(BackendUnavailable("plugin process closed its output"))

    def _fail(self, exc: Exception):
        with self._cond:
            if self._failure is None:
                self._failure = exc
            self._cond.notify_all()

    def _send(self, doc: dict):
        try:
            self.proc.stdin.write(json.dumps(doc) + "\n")
            self.proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise BackendUnavailable(f"plugin stdin closed: {exc}") from exc

    def _wait_for(self, key: int, timeout: float) -> dict:
        deadline = time.monotonic() + timeout
        with self._cond:
            while key not in self._responses:
                if self._failure is not None:
                    raise self._failure
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError()
                self._cond.wait(remaining)
            return self._responses.pop(key)

    def _handshake(self, timeout: float):
        self._send({"type": "hello", "protocol": PROTOCOL_VERSION})
        try:
            doc = self._wait_for(-1, timeout)
        except TimeoutError:
            self.kill()
            raise BackendUnavailable("plugin did not answer the hello handshake")
        if doc.get("protocol") != PROTOCOL_VERSION:
            self.kill()
            raise ProtocolError(f"plugin speaks protocol {doc.get('protocol')}, expected {PROTOCOL_VERSION}")
        self.name = str(doc.get("name", "plugin"))

    def roundtrip(self, request_id: int, genome_doc: dict, network_doc: dict,
                  budget: EvalBudget, digest: str, grace_s: float = TIMEOUT_GRACE_S) -> dict:
        """One eval request and its matching response; raises on timeout or protocol failure."""
        self._send({
            "type": "eval",
            "id": request_id,
            "genome": genome_doc,
            "network": network_doc,
            "budget": budget.to_doc(),
        })
        try:
            return self._wait_for(request_id, budget.time_limit + grace_s)
        except TimeoutError:
            raise BackendTimeout(digest) from None

    def shutdown(self):
        try:
            self._send({"type": "shutdown"})
            self.proc.wait(timeout=5)
        except Exception:
            self.kill()

    def kill(self):
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None and self._failure is None


class ExternalBackend:
    """Backend that farms evaluations out to plugin processes.

    Holds up to max_processes live plugins; a plugin that times out or breaks
    protocol is killed and replaced on the next request, so one bad evaluation
    never stalls the run.
    """

    name = "external"

    def __init__(self, command: Sequence[str],
                 describe: Callable[[Genome], NetworkDescription],
                 max_processes: int = 1, grace_s: float = TIMEOUT_GRACE_S):
        self.command = list(command)
        self.describe = describe
        self.max_processes = max(1, max_processes)
        self.grace_s = grace_s
        self._idle: queue.Queue[PluginClient] = queue.Queue()
        self._spawned = 0
        self._spawn_lock = threading.Lock()
        self._next_id = 0
        self._id_lock = threading.Lock()

    def _take_id(self) -> int:
        with self._id_lock:
            self._next_id += 1
            return self._next_id

    def _checkout(self) -> PluginClient:
        while True:
            try:
                client = self._idle.get_nowait()
            except queue.Empty:
                pass
            else:
                if client.alive:
                    return client
                client.kill()
                with self._spawn_lock:
                    self._spawned -= 1
                continue
            with self._spawn_lock:
                can_spawn = self._spawned < self.max_processes
                if can_spawn:
                    self._spawned += 1
            if can_spawn:
                try:
                    return PluginClient(self.command)
                except Exception:
                    with self._spawn_lock:
                        self._spawned -= 1
                    raise
            # All slots busy: wait briefly for a checkin, then re-examine.
            try:
                client = self._idle.get(timeout=0.1)
            except queue.Empty:
                continue
            if client.alive:
                return client
            client.kill()
            with self._spawn_lock:
                self._spawned -= 1

    def _checkin(self, client: PluginClient, healthy: bool):
        if healthy and client.alive:
            self._idle.put(client)
        else:
            client.kill()
            with self._spawn_lock:
                self._spawned -= 1

    def evaluate(self, genome: Genome, budget: EvalBudget) -> EvalResult:
        digest = canonical_digest(genome)
        net = self.describe(genome)
        client = self._checkout()
        healthy = True
        started = time.perf_counter()
        try:
            doc = client.roundtrip(self._take_id(), to_doc(genome), net.to_doc(), budget,
                                   digest, grace_s=self.grace_s)
        except (BackendTimeout, ProtocolError, BackendUnavailable):
            healthy = False
            raise
        finally:
            self._checkin(client, healthy)
        wall = time.perf_counter() - started
        if doc.get("type") == "error":
            return EvalResult(digest=digest, accuracy=0.0, params=net.param_count,
                              source=self.name, wall_time=wall,
                              note=str(doc.get("message", "plugin error")), ok=False)
        if doc.get("type") != "result":
            raise ProtocolError(f"unexpected response type {doc.get('type')!r}")
        accuracy = float(doc["accuracy"])
        if not 0.0 <= accuracy <= 1.0:
            raise ProtocolError(f"plugin accuracy {accuracy} outside [0, 1]")
        return EvalResult(
            digest=digest,
            accuracy=accuracy,
            params=int(doc.get("params", net.param_count)),
            source=self.name,
            wall_time=wall,
            note=str(doc.get("notes", "")),
        )

    def close(self):
        while True:
            try:
                client = self._idle.get_nowait()
            except queue.Empty:
                break
            client.shutdown()


def evaluate_batch(genomes: Sequence[Genome], backend, budget: EvalBudget,
                   cache: EvalCache | None = None, parallelism: int = 1) -> list[EvalResult]:
    """Score a batch, preserving input order.

    Cache hits skip the backend; duplicate digests inside the batch are
    evaluated once. Per-genome backend failures (timeout, protocol break,
    dead plugin) are absorbed as accuracy-0 results so the run continues.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    digests = [canonical_digest(g) for g in genomes]

    resolved: dict[str, EvalResult] = {}
    todo: list[tuple[str, Genome]] = []
    queued: set[str] = set()
    for digest, genome in zip(digests, genomes):
        if digest in resolved or digest in queued:
            continue
        cached = cache.get(digest) if cache is not None else None
        if cached is not None:
            hit = EvalResult.from_doc(cached.to_doc())
            hit.source = "cache"
            resolved[digest] = hit
        else:
            todo.append((digest, genome))
            queued.add(digest)

    def score(item: tuple[str, Genome]) -> EvalResult:
        digest, genome = item
        try:
            return backend.evaluate(genome, budget)
        except BackendTimeout as exc:
            logger.warning("evaluation timeout for %s", digest)
            return EvalResult(digest=digest, accuracy=0.0, params=0,
                              source=backend.name, note=f"timeout: {exc}", ok=False)
        except (ProtocolError, BackendUnavailable) as exc:
            logger.warning("evaluation failed for %s: %s", digest, exc)
            return EvalResult(digest=digest, accuracy=0.0, params=0,
                              source=backend.name, note=str(exc), ok=False)

    if todo:
        if parallelism == 1 or len(todo) == 1:
            fresh = [score(item) for item in todo]
        else:
            with ThreadPoolExecutor(max_workers=min(parallelism, len(todo))) as pool:
                fresh = list(pool.map(score, todo))
        for result in fresh:
            resolved[result.digest] = result
            if cache is not None and result.ok:
                cache.put(result)

    return [EvalResult.from_doc(resolved[d].to_doc()) for d in digests]
