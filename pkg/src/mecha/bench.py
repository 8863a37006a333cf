"""Benchmark harness: n concurrent applications streaming fixed-length PDUs.

Both arms share the same device emulator and codec; they differ only in
how the device context is handled. Responses are checked against an
independent software oracle before any timing is reported.
"""

from __future__ import annotations

import csv
import gc
import hashlib
import math
import multiprocessing
import os
import random
import shutil
import statistics
import tempfile
import threading
import time
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .baseline import BaselineHandle
from .broker import Broker
from .client import ClientHandle, split_chunks
from .config import BrokerConfig
from .device import EMULATOR_KEY, Device, LatencyModel
from .protocol import CSN_LEN, HEADER_LEN, OpCode

OP_MIX = (OpCode.LOOPBACK, OpCode.HASH, OpCode.ENCRYPT)
CSV_HEADER = ["mode", "instances", "total_bytes", "pdu_len", "duration_s", "aggregate_bytes", "speedup_pct"]
MODES = ("mecha", "baseline")


class CorrectnessError(RuntimeError):
    """A response did not match the oracle; the run's timing is void."""


@dataclass
class BenchmarkRecord:
    mode: str
    instances: int
    total_bytes: int
    pdu_len: int
    duration_s: float
    aggregate_bytes: int
    speedup_pct: float | None = None

    @property
    def requests(self) -> int:
        return self.instances * math.ceil(self.total_bytes / self.pdu_len)


def speedup_pct(baseline_s: float, mecha_s: float) -> float:
    return 100.0 * (baseline_s - mecha_s) / baseline_s


def oracle_response(opcode: OpCode, payload: bytes) -> bytes:
    if opcode == OpCode.LOOPBACK:
        return payload
    if opcode == OpCode.HASH:
        return hashlib.sha256(payload).digest()
    enc = Cipher(algorithms.AES(EMULATOR_KEY), modes.ECB()).encryptor()
    return enc.update(payload) + enc.finalize()


def workload(instance: int, total_bytes: int, seed: int = 0) -> tuple[OpCode, bytes]:
    """Opcode and payload for one instance; deterministic in (instance, seed)."""
    rng = random.Random(seed * 1_000_003 + instance)
    return OP_MIX[instance % len(OP_MIX)], rng.randbytes(total_bytes)


def _verify(instance: int, opcode: OpCode, chunks: list[bytes], responses: list[bytes]) -> None:
    if len(responses) != len(chunks):
        raise CorrectnessError(f"instance {instance}: {len(responses)} responses for {len(chunks)} requests")
    for i, (req, resp) in enumerate(zip(chunks, responses)):
        if resp != oracle_response(opcode, req):
            raise CorrectnessError(f"instance {instance}: {opcode.name} response {i} differs from oracle")


def _check_args(instances: int, total_bytes: int, pdu_len: int) -> None:
    if instances < 1:
        raise ValueError("instances must be >= 1")
    if total_bytes < 0:
        raise ValueError("total_bytes must be >= 0")
    if instances > 2 and (pdu_len % 16 or total_bytes % 16):
        raise ValueError("ENCRYPT workers need 16-byte aligned total_bytes and pdu_len")


def _run_threads(instances, job):
    barrier = threading.Barrier(instances)
    spans = [None] * instances
    errors = []

    def worker(i):
        try:
            prepared = job.prepare(i)
            barrier.wait()
            start = time.monotonic()
            result = job.run(i, prepared)
            spans[i] = (start, time.monotonic())
            job.check(i, prepared, result)
        except BaseException as exc:  # reported after join
            barrier.abort()
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,), name=f"bench-{i}") for i in range(instances)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for exc in errors:
        if not isinstance(exc, threading.BrokenBarrierError):
            raise exc
    if errors:
        raise errors[0]
    return max(s[1] for s in spans) - min(s[0] for s in spans)


class _MechaJob:
    def __init__(self, socket_path, total_bytes, pdu_len, seed):
        self.socket_path, self.total_bytes, self.pdu_len, self.seed = socket_path, total_bytes, pdu_len, seed

    def prepare(self, i):
        opcode, data = workload(i, self.total_bytes, self.seed)
        chunks = split_chunks(self.total_bytes, self.pdu_len, data)
        return ClientHandle.connect(self.socket_path, f"bench-{i}"), opcode, chunks

    def run(self, i, prepared):
        handle, opcode, chunks = prepared
        try:
            return handle.stream(opcode, chunks)
        finally:
            handle.close()

    def check(self, i, prepared, responses):
        _verify(i, prepared[1], prepared[2], responses)


class _BaselineJob:
    def __init__(self, device, total_bytes, pdu_len, seed):
        self.root = BaselineHandle(device)
        self.total_bytes, self.pdu_len, self.seed = total_bytes, pdu_len, seed

    def prepare(self, i):
        opcode, data = workload(i, self.total_bytes, self.seed)
        return self.root.for_caller(i + 1), opcode, split_chunks(self.total_bytes, self.pdu_len, data)

    def run(self, i, prepared):
        handle, opcode, chunks = prepared
        return [handle.request(opcode, c) for c in chunks]

    def check(self, i, prepared, responses):
        _verify(i, prepared[1], prepared[2], responses)


def _process_worker(socket_path, i, total_bytes, pdu_len, seed, barrier, results):
    try:
        job = _MechaJob(socket_path, total_bytes, pdu_len, seed)
        prepared = job.prepare(i)
        barrier.wait()
        start = time.monotonic()
        responses = job.run(i, prepared)
        end = time.monotonic()
        job.check(i, prepared, responses)
        results.put((i, start, end, None))
    except BaseException as exc:
        barrier.abort()
        results.put((i, 0.0, 0.0, repr(exc)))


def _run_processes(instances, socket_path, total_bytes, pdu_len, seed):
    ctx = multiprocessing.get_context("spawn")
    barrier = ctx.Barrier(instances)
    results = ctx.Queue()
    procs = [ctx.Process(target=_process_worker,
                         args=(socket_path, i, total_bytes, pdu_len, seed, barrier, results))
             for i in range(instances)]
    for p in procs:
        p.start()
    rows = [results.get() for _ in procs]
    for p in procs:
        p.join()
    failures = [r[3] for r in rows if r[3] is not None]
    if failures:
        raise CorrectnessError(f"{len(failures)} worker processes failed: {failures[0]}")
    return max(r[2] for r in rows) - min(r[1] for r in rows)


def run_benchmark(mode: str, instances: int, total_bytes: int = 65536, pdu_payload_len: int = 1024,
                  latency_model: LatencyModel | None = None, processes: bool = False,
                  seed: int = 0, device: Device | None = None) -> BenchmarkRecord:
    """Time ``instances`` concurrent workers each streaming ``total_bytes``.

    Raises CorrectnessError if any response disagrees with the oracle.
    ``device`` may be supplied to inspect its transaction log afterwards.
    """
    _check_args(instances, total_bytes, pdu_payload_len)
    latency = latency_model or LatencyModel()
    device = device if device is not None else Device(latency)
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()  # collector pauses scale with heap size, not with the run
    try:
        duration = _timed_run(mode, instances, total_bytes, pdu_payload_len, latency, processes, seed, device)
    finally:
        if gc_was_enabled:
            gc.enable()
    return BenchmarkRecord(mode, instances, total_bytes, pdu_payload_len, duration, instances * total_bytes)


def _timed_run(mode, instances, total_bytes, pdu_payload_len, latency, processes, seed, device) -> float:
    if mode == "mecha":
        tmp = tempfile.mkdtemp(prefix="mecha-")
        path = os.path.join(tmp, "b.sock")
        broker = Broker(BrokerConfig(socket_path=path, latency_model=latency,
                                     max_clients=max(128, instances)), device).start()
        try:
            if processes:
                duration = _run_processes(instances, path, total_bytes, pdu_payload_len, seed)
            else:
                duration = _run_threads(instances, _MechaJob(path, total_bytes, pdu_payload_len, seed))
        finally:
            broker.shutdown()
            shutil.rmtree(tmp, ignore_errors=True)
    elif mode == "baseline":
        if processes:
            raise ValueError("baseline mode shares an in-process device; --processes applies to mecha only")
        duration = _run_threads(instances, _BaselineJob(device, total_bytes, pdu_payload_len, seed))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return duration


def run_sweep(instance_list, total_bytes: int = 65536, pdu_payload_len: int = 1024,
              latency_model: LatencyModel | None = None, processes: bool = False,
              seed: int = 0) -> list[tuple[BenchmarkRecord, BenchmarkRecord]]:
    """Run both modes at each instance count; returns ``(mecha, baseline)`` pairs with speedup filled in."""
    instance_list = list(instance_list)
    if not instance_list:
        raise ValueError("instance_list must be non-empty")
    if instance_list != sorted(instance_list):
        raise ValueError("instance_list must be ascending")
    pairs = []
    for n in instance_list:
        m = run_benchmark("mecha", n, total_bytes, pdu_payload_len, latency_model, processes, seed)
        b = run_benchmark("baseline", n, total_bytes, pdu_payload_len, latency_model, False, seed)
        m.speedup_pct = b.speedup_pct = speedup_pct(b.duration_s, m.duration_s)
        pairs.append((m, b))
    return pairs


def predict_duration(mode: str, instances: int, total_bytes: int = 65536, pdu_payload_len: int = 1024,
                     latency_model: LatencyModel | None = None) -> float:
    """Device-bound duration implied by the latency model alone (no host overhead)."""
    lat = latency_model or LatencyModel()
    overhead = 2 * (CSN_LEN + HEADER_LEN)
    seconds = 0.0
    requests = 0
    for i in range(instances):
        opcode = OP_MIX[i % len(OP_MIX)]
        for start in range(0, total_bytes, pdu_payload_len):
            n = min(pdu_payload_len, total_bytes - start)
            out = 32 if opcode == OpCode.HASH else n
            seconds += lat.batch_delay_s(n + out + overhead, 1)
            requests += 1
    ctx = (lat.ctx_open_us + lat.ctx_close_us) * 1e-6
    if mode == "baseline":
        return seconds + requests * ctx
    return seconds + lat.ctx_open_us * 1e-6


def linear_r2(xs, ys) -> float:
    return statistics.correlation(xs, ys) ** 2


def emit_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.mode, r.instances, r.total_bytes, r.pdu_len, repr(r.duration_s),
                        r.aggregate_bytes, "" if r.speedup_pct is None else repr(r.speedup_pct)])


def read_csv(path) -> list[BenchmarkRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BenchmarkRecord(row["mode"], int(row["instances"]), int(row["total_bytes"]), int(row["pdu_len"]),
                            float(row["duration_s"]), int(row["aggregate_bytes"]),
                            float(row["speedup_pct"]) if row["speedup_pct"] else None)
            for row in rows]
