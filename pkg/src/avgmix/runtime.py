"""Shard planning and single-round execution, local or over TCP.

A run is: partition N samples into m shards, solve each shard
independently (thread pool or remote workers), then hand the m replies
to a combiner.  Every worker receives exactly one task frame and sends
exactly one reply frame; there are no retries and no further rounds.

Shards of synthetic streams are described by (GenSpec, index range)
recipes so remote workers regenerate their slice locally instead of
receiving the rows; in-memory datasets are shipped inline after a
seeded uniform permutation assigns rows to shards.
"""

from __future__ import annotations

import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import datagen, solvers, wire
from .combine import subsample_without_replacement
from .data import Dataset
from .errors import InvalidArgumentError, ProtocolError, ShardFailureError
from .losses import LossModel
from .rng import TAG_PLAN, TAG_SHARD, derive_seed, make_generator
from .wire import WorkerReply, WorkerTask

STRICT = "strict"
LENIENT = "lenient"

DEFAULT_TIMEOUT = 300.0


@dataclass(frozen=True)
class ShardPlan:
    """Deterministic assignment of N samples to m shards.

    Sizes differ by at most one, remainder to the earliest shards.
    `permutation` maps shard-local contiguous positions to dataset rows
    (used for inline data); recipe tasks slice the generation stream at
    the same offsets directly, since stream samples are already i.i.d.
    """

    N: int
    m: int
    sizes: tuple[int, ...]
    offsets: tuple[int, ...]
    shard_seeds: tuple[int, ...]
    permutation: np.ndarray

    def rows_for_shard(self, i: int) -> np.ndarray:
        start = self.offsets[i]
        return self.permutation[start : start + self.sizes[i]]


def make_shard_plan(N: int, m: int, base_seed: int = 0) -> ShardPlan:
    """Front-loaded even split with a seeded row permutation."""
    if m < 1 or N < 1:
        raise InvalidArgumentError("N and m must be positive")
    if m > N:
        raise InvalidArgumentError(f"cannot split {N} samples over {m} shards")
    base, rem = divmod(N, m)
    sizes = tuple(base + 1 if i < rem else base for i in range(m))
    offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    seeds = []
    salt = 0
    while True:
        seeds = [derive_seed(base_seed, TAG_SHARD, i, salt) for i in range(m)]
        if len(set(seeds)) == m:
            break
        salt += 1  # astronomically unlikely; keeps seeds pairwise distinct
    permutation = make_generator(derive_seed(base_seed, TAG_PLAN)).permutation(N)
    return ShardPlan(
        N=N,
        m=m,
        sizes=sizes,
        offsets=offsets,
        shard_seeds=tuple(seeds),
        permutation=permutation,
    )


@dataclass(frozen=True)
class TaskTemplate:
    """Per-run settings shared by every shard task.

    Provide `dataset` for in-memory data or `recipe` for a synthetic
    stream; `subsample_ratio` switches on the second-level solve.
    """

    model: LossModel
    solver: solvers.SolverConfig
    subsample_ratio: float | None = None
    dataset: Dataset | None = None
    recipe: datagen.GenSpec | None = None

    def __post_init__(self):
        if (self.dataset is None) == (self.recipe is None):
            raise InvalidArgumentError("template needs exactly one of dataset or recipe")


def build_tasks(plan: ShardPlan, template: TaskTemplate) -> list[WorkerTask]:
    if template.dataset is not None and len(template.dataset) != plan.N:
        raise InvalidArgumentError(
            f"plan covers {plan.N} rows but dataset has {len(template.dataset)}"
        )
    tasks = []
    for i in range(plan.m):
        if template.dataset is not None:
            shard = template.dataset.take(plan.rows_for_shard(i))
            tasks.append(
                WorkerTask(
                    model=template.model,
                    solver=template.solver,
                    seed=plan.shard_seeds[i],
                    subsample_ratio=template.subsample_ratio,
                    dataset=shard,
                )
            )
        else:
            tasks.append(
                WorkerTask(
                    model=template.model,
                    solver=template.solver,
                    seed=plan.shard_seeds[i],
                    subsample_ratio=template.subsample_ratio,
                    recipe=template.recipe,
                    range_start=plan.offsets[i],
                    range_len=plan.sizes[i],
                )
            )
    return tasks


def materialize(task: WorkerTask) -> Dataset:
    if task.dataset is not None:
        return task.dataset
    truth = datagen.draw_truth(task.recipe)
    return datagen.gen_range(
        task.recipe, truth, task.range_start, task.range_start + task.range_len
    )


def solve_task(task: WorkerTask) -> WorkerReply:
    """Execute one shard task: primary solve plus optional subsample solve.

    This single code path serves both in-process execution and the
    remote worker, which is what makes loopback runs bit-identical to
    local ones.
    """
    data = materialize(task)
    cfg = solvers.with_seed(task.solver, task.seed)
    est = solvers.solve(task.model, data, cfg)
    theta2 = None
    wall = est.wall_time
    sub = task.subsample_spec()
    if sub is not None and sub.ratio > 0.0:
        sub_data = subsample_without_replacement(data, sub)
        sub_cfg = solvers.with_seed(task.solver, sub.seed)
        sub_est = solvers.solve(task.model, sub_data, sub_cfg)
        theta2 = sub_est.theta
        wall += sub_est.wall_time
    return WorkerReply(
        theta1=est.theta,
        theta2=theta2,
        iterations=est.iterations,
        final_grad_norm=est.final_grad_norm,
        wall_time=wall,
    )


def run_local(
    plan: ShardPlan, template: TaskTemplate, parallelism: int = 1
) -> list[WorkerReply]:
    """Solve all shards in-process; output independent of parallelism."""
    if parallelism < 1:
        raise InvalidArgumentError("parallelism must be positive")
    tasks = build_tasks(plan, template)
    results: list = [None] * plan.m
    failures: list[tuple[int, Exception]] = []

    def run_one(i: int):
        try:
            results[i] = solve_task(tasks[i])
        except Exception as exc:  # aggregate below
            failures.append((i, exc))

    if parallelism == 1 or plan.m == 1:
        for i in range(plan.m):
            run_one(i)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(run_one, range(plan.m)))
    if failures:
        failures.sort(key=lambda f: f[0])
        raise ShardFailureError(
            [i for i, _ in failures], [exc for _, exc in failures]
        )
    return results


# --- remote execution ------------------------------------------------------


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise InvalidArgumentError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


def _default_connect(endpoint: str, timeout: float):
    return socket.create_connection(parse_endpoint(endpoint), timeout=timeout)


class WorkerConnection:
    """One coordinator-side session: handshake, then task/reply pairs."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT, connect_fn=None):
        connect = connect_fn or _default_connect
        self.sock = connect(endpoint, timeout)
        self._handshake()

    def _handshake(self):
        self.sock.sendall(wire.encode_hello())
        ftype, payload = wire.read_frame(self.sock.recv)
        if ftype == wire.FRAME_ERROR:
            code, msg = wire.decode_error(payload)
            raise ProtocolError(code, msg)
        if ftype != wire.FRAME_HELLO:
            raise ProtocolError(wire.ERR_UNEXPECTED, f"expected hello, got type {ftype}")
        version = wire.decode_hello(payload)
        if version != wire.PROTOCOL_VERSION:
            raise ProtocolError(wire.ERR_VERSION, f"worker speaks version {version}")

    def submit(self, task: WorkerTask) -> WorkerReply:
        self.sock.sendall(wire.encode_task(task))
        ftype, payload = wire.read_frame(self.sock.recv)
        if ftype == wire.FRAME_ERROR:
            code, msg = wire.decode_error(payload)
            raise ProtocolError(code, msg)
        if ftype != wire.FRAME_REPLY:
            raise ProtocolError(wire.ERR_UNEXPECTED, f"expected reply, got type {ftype}")
        return wire.decode_reply(payload)

    def close(self, send_shutdown: bool = False):
        try:
            if send_shutdown:
                self.sock.sendall(wire.encode_shutdown())
        finally:
            self.sock.close()


def run_remote(
    plan: ShardPlan,
    template: TaskTemplate,
    endpoints: list[str],
    mode: str = STRICT,
    timeout: float = DEFAULT_TIMEOUT,
    connect_fn=None,
) -> list[WorkerReply | None]:
    """Distribute shards round-robin over endpoints; one frame each way.

    Strict mode raises on any shard failure.  Lenient mode returns None
    for failed shards so the caller can average the survivors; which
    shards failed is visible from the None positions.
    """
    if not endpoints:
        raise InvalidArgumentError("need at least one endpoint")
    if mode not in (STRICT, LENIENT):
        raise InvalidArgumentError(f"unknown failure mode {mode!r}")
    tasks = build_tasks(plan, template)
    assignment: dict[str, list[int]] = {ep: [] for ep in endpoints}
    for i in range(plan.m):
        assignment[endpoints[i % len(endpoints)]].append(i)
    replies: list = [None] * plan.m
    failures: list[tuple[int, Exception]] = []

    def drive(endpoint: str, shard_ids: list[int]):
        conn = None
        for i in shard_ids:
            try:
                if conn is None:
                    conn = WorkerConnection(endpoint, timeout, connect_fn)
                replies[i] = conn.submit(tasks[i])
            except Exception as exc:
                failures.append((i, exc))
                if conn is not None:
                    try:
                        conn.close()
                    except OSError:
                        pass
                conn = None
        if conn is not None:
            conn.close()

    threads = [
        threading.Thread(target=drive, args=(ep, ids))
        for ep, ids in assignment.items()
        if ids
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures and mode == STRICT:
        failures.sort(key=lambda f: f[0])
        raise ShardFailureError([i for i, _ in failures], [e for _, e in failures])
    return replies


# --- worker side -----------------------------------------------------------


class WorkerServer:
    """Serves task frames over TCP until a shutdown frame or .stop()."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(16)
        self.listener.settimeout(0.2)
        self.host, self.port = self.listener.getsockname()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def serve_forever(self):
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = self.listener.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                t = threading.Thread(target=self._session, args=(conn,), daemon=True)
                t.start()
                self._threads.append(t)
        finally:
            self.listener.close()

    def serve_in_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self):
        self._stop.set()

    def _session(self, conn: socket.socket):
        conn.settimeout(DEFAULT_TIMEOUT)
        try:
            while not self._stop.is_set():
                try:
                    ftype, payload = wire.read_frame(conn.recv)
                except EOFError:
                    return
                except ProtocolError as exc:
                    # framing is broken; report and drop the connection
                    self._try_send(conn, wire.encode_error(exc.code, str(exc)))
                    return
                if ftype == wire.FRAME_SHUTDOWN:
                    self._stop.set()
                    return
                if ftype == wire.FRAME_HELLO:
                    try:
                        version = wire.decode_hello(payload)
                    except ProtocolError as exc:
                        self._try_send(conn, wire.encode_error(exc.code, str(exc)))
                        continue
                    if version != wire.PROTOCOL_VERSION:
                        self._try_send(
                            conn,
                            wire.encode_error(
                                wire.ERR_VERSION,
                                f"unsupported protocol version {version}",
                            ),
                        )
                        return
                    self._try_send(conn, wire.encode_hello())
                elif ftype == wire.FRAME_TASK:
                    try:
                        task = wire.decode_task(payload)
                        reply = solve_task(task)
                        self._try_send(conn, wire.encode_reply(reply))
                    except ProtocolError as exc:
                        self._try_send(conn, wire.encode_error(exc.code, str(exc)))
                    except Exception as exc:
                        self._try_send(
                            conn,
                            wire.encode_error(
                                wire.ERR_MALFORMED, f"task failed: {exc}"
                            ),
                        )
                else:
                    self._try_send(
                        conn,
                        wire.encode_error(
                            wire.ERR_UNEXPECTED, f"unexpected frame type {ftype}"
                        ),
                    )
        finally:
            try:
                conn.close()
            except OSError:
                pass

    @staticmethod
    def _try_send(conn: socket.socket, data: bytes):
        try:
            conn.sendall(data)
        except OSError:
            pass


def worker_serve(listen: str):
    """Blocking worker entry point; returns after a shutdown frame."""
    host, port = parse_endpoint(listen)
    server = WorkerServer(host, port)
    server.serve_forever()
    return server
