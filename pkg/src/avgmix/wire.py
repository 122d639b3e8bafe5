"""Binary wire protocol, version 1.

Every message is a frame: 4-byte magic ``AVM1``, a u8 frame type, a u32
payload length, then the payload.  All integers are little-endian; all
floats are IEEE-754 binary64.

Frame types::

    0 hello     u16 protocol_version
    1 task      solver + model header, then recipe or inline samples
    2 reply     u8 has_theta2; u32 d; d*f64 theta1; [d*f64 theta2];
                u32 iterations; f64 final_grad_norm
    3 error     u16 code; u16 message_len; utf-8 message
    4 shutdown  empty

Task payload layout::

    u8  model_kind          0 least_squares, 1 ridge_logistic, 2 pathological_1d
    u32 d
    f64 lam                 ridge weight of the loss
    u8  solver_method       0 closed_form_ls, 1 newton, 2 sgd, 3 two_stage
    f64 grad_tol
    u32 max_iter
    f64 c                   NaN selects the d/(10(d+t)) stepsize schedule
    f64 sgd_lam
    f64 R                   projection radius; NaN means unconstrained
    u8  has_subsample
    f64 r
    u64 seed                task seed (SGD order and subsample derive from it)
    u8  data_mode           0 recipe, 1 inline
    recipe: u8 gen_model; u8 feature_style; u64 truth_seed;
            u64 range_start; u64 range_len
    inline: u64 count; per sample: u32 nnz; nnz * (u32 idx, f64 val); f64 target

Error codes: 1 bad magic, 2 oversized frame, 3 malformed payload,
4 unexpected frame type, 5 protocol version mismatch.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import losses, solvers
from .combine import SubsampleSpec
from .data import DENSIFY_DIM, Dataset
from .datagen import (
    FEATURE_DENSE,
    FEATURE_SPARSE5,
    GenSpec,
    MODEL_BERNOULLI,
    MODEL_CLICK,
    MODEL_CUBIC,
    MODEL_HETEROSKEDASTIC,
    MODEL_NORMAL,
)
from .errors import InvalidArgumentError, ProtocolError

MAGIC = b"AVM1"
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 256 * 1024 * 1024

FRAME_HELLO = 0
FRAME_TASK = 1
FRAME_REPLY = 2
FRAME_ERROR = 3
FRAME_SHUTDOWN = 4

ERR_BAD_MAGIC = 1
ERR_OVERSIZE = 2
ERR_MALFORMED = 3
ERR_UNEXPECTED = 4
ERR_VERSION = 5

_MODEL_IDS = {
    losses.LEAST_SQUARES: 0,
    losses.RIDGE_LOGISTIC: 1,
    losses.PATHOLOGICAL_1D: 2,
}
_MODEL_KINDS = {v: k for k, v in _MODEL_IDS.items()}

_METHOD_IDS = {
    solvers.CLOSED_FORM_LS: 0,
    solvers.NEWTON: 1,
    solvers.SGD: 2,
    solvers.TWO_STAGE: 3,
}
_METHOD_NAMES = {v: k for k, v in _METHOD_IDS.items()}

_GEN_IDS = {
    MODEL_NORMAL: 0,
    MODEL_CUBIC: 1,
    MODEL_HETEROSKEDASTIC: 2,
    MODEL_BERNOULLI: 3,
    MODEL_CLICK: 4,
}
_GEN_NAMES = {v: k for k, v in _GEN_IDS.items()}

_STYLE_IDS = {FEATURE_SPARSE5: 0, FEATURE_DENSE: 1}
_STYLE_NAMES = {v: k for k, v in _STYLE_IDS.items()}


@dataclass
class WorkerTask:
    """One shard's work order: model, solver, optional subsample, data.

    Exactly one of `dataset` (inline rows) and `recipe` (a GenSpec plus a
    stream index range) is set.
    """

    model: losses.LossModel
    solver: solvers.SolverConfig
    seed: int
    subsample_ratio: float | None = None
    dataset: Dataset | None = None
    recipe: GenSpec | None = None
    range_start: int = 0
    range_len: int = 0

    def __post_init__(self):
        if (self.dataset is None) == (self.recipe is None):
            raise InvalidArgumentError("task needs exactly one of dataset or recipe")
        if self.subsample_ratio is not None and not (0.0 <= self.subsample_ratio < 1.0):
            raise InvalidArgumentError("subsample ratio must be in [0, 1)")

    def subsample_spec(self) -> SubsampleSpec | None:
        from .rng import TAG_SUBSAMPLE, derive_seed

        if self.subsample_ratio is None:
            return None
        return SubsampleSpec(
            ratio=self.subsample_ratio, seed=derive_seed(self.seed, TAG_SUBSAMPLE)
        )


@dataclass
class WorkerReply:
    """Shard result as carried on the wire (wall time is local-only)."""

    theta1: np.ndarray
    theta2: np.ndarray | None
    iterations: int
    final_grad_norm: float
    wall_time: float | None = None

    def wire_equal(self, other: "WorkerReply") -> bool:
        """Bitwise equality of every wire-carried field."""
        if self.iterations != other.iterations:
            return False
        if self.final_grad_norm.hex() != other.final_grad_norm.hex():
            return False
        if self.theta1.tobytes() != other.theta1.tobytes():
            return False
        if (self.theta2 is None) != (other.theta2 is None):
            return False
        if self.theta2 is not None and self.theta2.tobytes() != other.theta2.tobytes():
            return False
        return True


# --- frame layer ---------------------------------------------------------


def encode_frame(frame_type: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(ERR_OVERSIZE, f"payload of {len(payload)} bytes exceeds cap")
    return MAGIC + struct.pack("<BI", frame_type, len(payload)) + payload


def read_exact(recv, count: int) -> bytes:
    """Read exactly `count` bytes from recv(k); raise EOFError on close."""
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = recv(remaining)
        if not chunk:
            raise EOFError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(recv) -> tuple[int, bytes]:
    """Read one frame; ProtocolError on bad magic or oversized payload."""
    header = read_exact(recv, 9)
    if header[:4] != MAGIC:
        raise ProtocolError(ERR_BAD_MAGIC, f"bad magic {header[:4]!r}")
    frame_type, length = struct.unpack("<BI", header[4:9])
    if length > MAX_PAYLOAD:
        raise ProtocolError(ERR_OVERSIZE, f"payload of {length} bytes exceeds cap")
    payload = read_exact(recv, length)
    return frame_type, payload


# --- payloads ------------------------------------------------------------


def encode_hello(version: int = PROTOCOL_VERSION) -> bytes:
    return encode_frame(FRAME_HELLO, struct.pack("<H", version))


def decode_hello(payload: bytes) -> int:
    if len(payload) != 2:
        raise ProtocolError(ERR_MALFORMED, "hello payload must be 2 bytes")
    return struct.unpack("<H", payload)[0]


def encode_error(code: int, message: str) -> bytes:
    raw = message.encode("utf-8")[:65535]
    return encode_frame(FRAME_ERROR, struct.pack("<HH", code, len(raw)) + raw)


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 4:
        raise ProtocolError(ERR_MALFORMED, "error payload too short")
    code, length = struct.unpack("<HH", payload[:4])
    if len(payload) != 4 + length:
        raise ProtocolError(ERR_MALFORMED, "error payload length mismatch")
    return code, payload[4:].decode("utf-8", errors="replace")


def encode_shutdown() -> bytes:
    return encode_frame(FRAME_SHUTDOWN, b"")


def _encode_solver(cfg: solvers.SolverConfig, out: bytearray) -> None:
    if cfg.theta0 is not None or cfg.record_iterates:
        raise InvalidArgumentError(
            "solver config with theta0 or iterate recording is not wire-representable"
        )
    if cfg.sgd.stage1_iters is not None:
        raise InvalidArgumentError("explicit stage-1 budgets are not wire-representable")
    if cfg.sgd.schedule == solvers.SCHEDULE_C_OVER_LAMBDA_T:
        c = cfg.sgd.c
    else:
        c = math.nan
    radius = solvers.resolve_radius(cfg.sgd, np.zeros(1))
    wire_radius = math.nan if math.isinf(radius) else radius
    out += struct.pack(
        "<BdIddd",
        _METHOD_IDS[cfg.method],
        cfg.grad_tol,
        cfg.max_iter,
        c,
        cfg.sgd.lam,
        wire_radius,
    )


def _decode_solver(buf: memoryview, offset: int) -> tuple[solvers.SolverConfig, int]:
    method_id, grad_tol, max_iter, c, sgd_lam, radius = struct.unpack_from(
        "<BdIddd", buf, offset
    )
    offset += struct.calcsize("<BdIddd")
    if method_id not in _METHOD_NAMES:
        raise ProtocolError(ERR_MALFORMED, f"unknown solver method id {method_id}")
    if math.isnan(c):
        opts = solvers.SGDOptions(
            c=1.0,
            lam=sgd_lam if sgd_lam > 0 else 1.0,
            radius=math.inf if math.isnan(radius) else radius,
            schedule=solvers.SCHEDULE_D_OVER_10_D_PLUS_T,
        )
    else:
        opts = solvers.SGDOptions(
            c=c,
            lam=sgd_lam,
            radius=math.inf if math.isnan(radius) else radius,
            schedule=solvers.SCHEDULE_C_OVER_LAMBDA_T,
        )
    cfg = solvers.SolverConfig(
        method=_METHOD_NAMES[method_id],
        grad_tol=grad_tol,
        max_iter=max_iter,
        sgd=opts,
    )
    return cfg, offset


def _encode_inline(dataset: Dataset, out: bytearray) -> None:
    out += struct.pack("<Q", len(dataset))
    X, y = dataset.X, dataset.y
    sparse = sp.issparse(X)
    for i in range(len(dataset)):
        if sparse:
            row = X[i].tocoo()
            idx, val = row.col, row.data
        else:
            row = X[i]
            idx = np.flatnonzero(row)
            val = row[idx]
        out += struct.pack("<I", len(idx))
        for j, v in zip(idx, val):
            out += struct.pack("<Id", int(j), float(v))
        out += struct.pack("<d", float(y[i]))


def _decode_inline(buf: memoryview, offset: int, d: int) -> tuple[Dataset, int]:
    (count,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    # every sample takes at least 12 bytes; reject impossible counts up front
    if count > (len(buf) - offset) // 12 + 1:
        raise ProtocolError(ERR_MALFORMED, f"inline count {count} exceeds payload")
    rows, cols, vals, targets = [], [], [], []
    for i in range(count):
        (nnz,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        for _ in range(nnz):
            j, v = struct.unpack_from("<Id", buf, offset)
            offset += 12
            if j >= d:
                raise ProtocolError(ERR_MALFORMED, f"feature index {j} >= d={d}")
            rows.append(i)
            cols.append(j)
            vals.append(v)
        (t,) = struct.unpack_from("<d", buf, offset)
        offset += 8
        targets.append(t)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(count, d), dtype=np.float64)
    return Dataset(X=X, y=np.array(targets), d=d), offset


def encode_task(task: WorkerTask) -> bytes:
    """Task frame bytes; raises if the task is not wire-representable."""
    out = bytearray()
    out += struct.pack(
        "<BId", _MODEL_IDS[task.model.kind], task.model.d, task.model.lam
    )
    _encode_solver(task.solver, out)
    has_sub = task.subsample_ratio is not None
    out += struct.pack(
        "<Bd", int(has_sub), task.subsample_ratio if has_sub else 0.0
    )
    out += struct.pack("<Q", task.seed)
    if task.recipe is not None:
        spec = task.recipe
        if spec.zero_noise:
            raise InvalidArgumentError("zero-noise recipes are not wire-representable")
        if spec.model == MODEL_CLICK and spec.nnz != 5:
            raise InvalidArgumentError(
                "click recipes with nnz != 5 are not wire-representable"
            )
        out += struct.pack(
            "<BBBQQQ",
            0,
            _GEN_IDS[spec.model],
            _STYLE_IDS[spec.feature_style],
            spec.seed,
            task.range_start,
            task.range_len,
        )
    else:
        out += struct.pack("<B", 1)
        _encode_inline(task.dataset, out)
    return encode_frame(FRAME_TASK, bytes(out))


def decode_task(payload: bytes) -> WorkerTask:
    buf = memoryview(payload)
    try:
        kind_id, d, lam = struct.unpack_from("<BId", buf, 0)
        offset = struct.calcsize("<BId")
        if kind_id not in _MODEL_KINDS:
            raise ProtocolError(ERR_MALFORMED, f"unknown model kind id {kind_id}")
        model = losses.LossModel(_MODEL_KINDS[kind_id], d, lam)
        cfg, offset = _decode_solver(buf, offset)
        has_sub, r = struct.unpack_from("<Bd", buf, offset)
        offset += struct.calcsize("<Bd")
        (seed,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        (data_mode,) = struct.unpack_from("<B", buf, offset)
        offset += 1
        if data_mode == 0:
            gen_id, style_id, truth_seed, start, length = struct.unpack_from(
                "<BBQQQ", buf, offset
            )
            offset += struct.calcsize("<BBQQQ")
            if gen_id not in _GEN_NAMES or style_id not in _STYLE_NAMES:
                raise ProtocolError(ERR_MALFORMED, "unknown generator or feature style")
            spec = GenSpec(
                model=_GEN_NAMES[gen_id],
                d=d,
                feature_style=_STYLE_NAMES[style_id],
                seed=truth_seed,
            )
            task = WorkerTask(
                model=model,
                solver=cfg,
                seed=seed,
                subsample_ratio=r if has_sub else None,
                recipe=spec,
                range_start=start,
                range_len=length,
            )
        elif data_mode == 1:
            dataset, offset = _decode_inline(buf, offset, d)
            task = WorkerTask(
                model=model,
                solver=cfg,
                seed=seed,
                subsample_ratio=r if has_sub else None,
                dataset=dataset,
            )
        else:
            raise ProtocolError(ERR_MALFORMED, f"unknown data mode {data_mode}")
        if offset != len(payload):
            raise ProtocolError(ERR_MALFORMED, "trailing bytes in task payload")
        return task
    except ProtocolError:
        raise
    except (struct.error, InvalidArgumentError, ValueError) as exc:
        raise ProtocolError(ERR_MALFORMED, f"cannot decode task: {exc}") from exc


def encode_reply(reply: WorkerReply) -> bytes:
    theta1 = np.asarray(reply.theta1, dtype="<f8")
    out = bytearray()
    out += struct.pack("<BI", int(reply.theta2 is not None), theta1.shape[0])
    out += theta1.tobytes()
    if reply.theta2 is not None:
        out += np.asarray(reply.theta2, dtype="<f8").tobytes()
    out += struct.pack("<Id", reply.iterations, reply.final_grad_norm)
    return encode_frame(FRAME_REPLY, bytes(out))


def decode_reply(payload: bytes) -> WorkerReply:
    try:
        has2, d = struct.unpack_from("<BI", payload, 0)
        offset = 5
        theta1 = np.frombuffer(payload, dtype="<f8", count=d, offset=offset).copy()
        offset += 8 * d
        theta2 = None
        if has2:
            theta2 = np.frombuffer(payload, dtype="<f8", count=d, offset=offset).copy()
            offset += 8 * d
        iterations, grad_norm = struct.unpack_from("<Id", payload, offset)
        offset += struct.calcsize("<Id")
        if offset != len(payload):
            raise ProtocolError(ERR_MALFORMED, "trailing bytes in reply payload")
        return WorkerReply(
            theta1=theta1,
            theta2=theta2,
            iterations=iterations,
            final_grad_norm=grad_norm,
        )
    except (struct.error, ValueError) as exc:
        raise ProtocolError(ERR_MALFORMED, f"cannot decode reply: {exc}") from exc
