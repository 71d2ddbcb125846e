"""Desk-scale student-teacher self-distillation on synthetic vectors.

A two-layer tanh encoder with a linear prototype head is trained to match,
across noisy global views and coordinate-dropout local views, the centered
and sharpened output of a teacher whose weights are an exponential moving
average of the student's. Centering (a running mean subtracted from the
teacher logits) plus the lower teacher temperature is what keeps the
prototype distribution from collapsing; ``collapse_entropy`` measures that
directly.

Everything is deterministic given (config, seed): per-sample noise streams
are derived from (seed, step, sample index).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels

SSL_MAGIC = b"SSL1"


class SslError(Exception):
    """Invalid distillation configuration or diverged state."""


@dataclass(frozen=True)
class SslConfig:
    input_dim: int
    hidden_dim: int
    embed_dim: int
    n_prototypes: int
    tau_student: float = 0.1
    tau_teacher: float = 0.04
    ema_momentum: float = 0.996
    center_momentum: float = 0.9
    n_global_views: int = 2
    n_local_views: int = 4
    local_keep_fraction: float = 0.3
    noise_sd: float = 0.05
    learning_rate: float = 0.1
    seed: int = 0

    def check(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.embed_dim, self.n_prototypes) < 1:
            raise SslError("all dimensions must be >= 1")
        if not self.tau_teacher < self.tau_student:
            raise SslError(
                f"sharpening requires tau_teacher < tau_student "
                f"({self.tau_teacher} vs {self.tau_student})"
            )
        for name in ("ema_momentum", "center_momentum"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SslError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.local_keep_fraction <= 1.0:
            raise SslError("local_keep_fraction must lie in (0, 1]")
        if self.n_global_views < 1:
            raise SslError("need at least one global view")

    @property
    def param_shapes(self):
        return (
            (self.hidden_dim, self.input_dim),
            (self.hidden_dim,),
            (self.embed_dim, self.hidden_dim),
            (self.embed_dim,),
            (self.n_prototypes, self.embed_dim),
        )

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes)


@dataclass(frozen=True)
class SslState:
    student: np.ndarray  # flat parameter vector
    teacher: np.ndarray  # same shape as student
    center: np.ndarray  # (n_prototypes,)
    step: int = 0

    def check(self) -> None:
        if self.student.shape != self.teacher.shape:
            raise SslError("student/teacher parameter shapes differ")
        if not np.all(np.isfinite(self.center)):
            raise SslError("non-finite center")


def unpack_params(flat: np.ndarray, config: SslConfig):
    """Views (W1, b1, W2, b2, P) into the flat parameter vector."""
    out = []
    off = 0
    for shape in config.param_shapes:
        size = int(np.prod(shape))
        out.append(np.ascontiguousarray(flat[off : off + size].reshape(shape)))
        off += size
    return tuple(out)


def pack_params(parts) -> np.ndarray:
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])


def init_state(config: SslConfig) -> SslState:
    """Random student, teacher an exact copy, zero center, step 0."""
    config.check()
    rng = np.random.default_rng(config.seed)
    w1 = rng.standard_normal((config.hidden_dim, config.input_dim)) / math.sqrt(
        config.input_dim
    )
    b1 = np.zeros(config.hidden_dim)
    w2 = rng.standard_normal((config.embed_dim, config.hidden_dim)) / math.sqrt(
        config.hidden_dim
    )
    b2 = np.zeros(config.embed_dim)
    proto = rng.standard_normal((config.n_prototypes, config.embed_dim)) / math.sqrt(
        config.embed_dim
    )
    student = pack_params((w1, b1, w2, b2, proto))
    return SslState(
        student=student,
        teacher=student.copy(),
        center=np.zeros(config.n_prototypes),
        step=0,
    )


def make_views(sample, config: SslConfig, rng: np.random.Generator):
    """Global views (full vector + noise) and local views (coordinate dropout).

    A local view keeps ``ceil(local_keep_fraction * input_dim)`` randomly
    chosen coordinates, zeroes the rest, then adds the same Gaussian noise
    the global views get.
    """
    sample = np.asarray(sample, dtype=np.float64)
    dim = sample.size
    n_keep = math.ceil(config.local_keep_fraction * dim)
    global_views = [
        sample + config.noise_sd * rng.standard_normal(dim)
        for _ in range(config.n_global_views)
    ]
    local_views = []
    for _ in range(config.n_local_views):
        keep = rng.choice(dim, size=n_keep, replace=False)
        masked = np.zeros(dim)
        masked[keep] = sample[keep]
        local_views.append(masked + config.noise_sd * rng.standard_normal(dim))
    return global_views, local_views


def _loss_grad_views(state: SslState, views: np.ndarray, config: SslConfig):
    sw1, sb1, sw2, sb2, sp = unpack_params(state.student, config)
    tw1, tb1, tw2, tb2, tp = unpack_params(state.teacher, config)
    loss, g1, gb1, g2, gb2, gp, t_logits = kernels.dino_loss_grad(
        sw1, sb1, sw2, sb2, sp,
        tw1, tb1, tw2, tb2, tp,
        state.center, views, config.n_global_views,
        config.tau_student, config.tau_teacher,
    )
    if not np.isfinite(loss):
        raise SslError("non-finite distillation loss")
    return loss, pack_params((g1, gb1, g2, gb2, gp)), t_logits


def dino_loss(state: SslState, global_views, local_views, config: SslConfig):
    """Distillation loss and the student-only gradient for one sample.

    Teacher probabilities (centered, sharpened at ``tau_teacher``) are
    constants; the returned gradient is d(loss)/d(student parameters).
    """
    state.check()
    views = np.ascontiguousarray(
        np.vstack(list(global_views) + list(local_views)), dtype=np.float64
    )
    loss, grad, _ = _loss_grad_views(state, views, config)
    return loss, grad


def ema_update(state: SslState, m: float) -> SslState:
    """teacher <- m * teacher + (1 - m) * student, elementwise exact."""
    if not 0.0 <= m <= 1.0:
        raise SslError(f"ema momentum must lie in [0, 1], got {m}")
    return replace(state, teacher=m * state.teacher + (1.0 - m) * state.student)


def center_update(center, teacher_logits_batch, rho: float) -> np.ndarray:
    """center <- rho * center + (1 - rho) * batch mean of teacher logits."""
    if not 0.0 <= rho <= 1.0:
        raise SslError(f"center momentum must lie in [0, 1], got {rho}")
    batch = np.atleast_2d(np.asarray(teacher_logits_batch, dtype=np.float64))
    return rho * np.asarray(center, dtype=np.float64) + (1.0 - rho) * batch.mean(axis=0)


def train_step(state: SslState, batch, config: SslConfig, seed: int | None = None):
    """One full distillation step over a batch of samples.

    Order is fixed: make views, accumulate loss/gradient, student descent
    step, EMA update of the teacher toward the new student, center update
    from this step's teacher global-view logits, step counter + 1.
    """
    config.check()
    state.check()
    batch = [np.asarray(x, dtype=np.float64) for x in batch]
    if not batch:
        raise SslError("empty batch")
    base_seed = config.seed if seed is None else seed
    total_loss = 0.0
    total_grad = np.zeros_like(state.student)
    teacher_logits = []
    for i, sample in enumerate(batch):
        rng = np.random.default_rng([base_seed, state.step, i])
        g_views, l_views = make_views(sample, config, rng)
        views = np.ascontiguousarray(np.vstack(g_views + l_views), dtype=np.float64)
        loss, grad, t_logits = _loss_grad_views(state, views, config)
        total_loss += loss
        total_grad += grad
        teacher_logits.append(t_logits)
    loss = total_loss / len(batch)
    grad = total_grad / len(batch)
    student = state.student - config.learning_rate * grad
    teacher = config.ema_momentum * state.teacher + (1.0 - config.ema_momentum) * student
    center = center_update(
        state.center, np.vstack(teacher_logits), config.center_momentum
    )
    return (
        SslState(student=student, teacher=teacher, center=center, step=state.step + 1),
        loss,
    )


def teacher_probabilities(state: SslState, samples, config: SslConfig) -> np.ndarray:
    """Centered, sharpened teacher distributions for raw (unaugmented) inputs."""
    tw1, tb1, tw2, tb2, tp = unpack_params(state.teacher, config)
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    H = np.tanh(X @ tw1.T + tb1)
    E = H @ tw2.T + tb2
    logits = (E @ tp.T - state.center) / config.tau_teacher
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return P


def collapse_entropy(state: SslState, probe_batch, config: SslConfig) -> float:
    """Shannon entropy (nats) of the mean teacher distribution.

    ln(K) means perfectly spread prototype usage; 0 means total collapse
    onto a single prototype.
    """
    probe_batch = list(probe_batch)
    if not probe_batch:
        raise SslError("empty probe batch")
    p = teacher_probabilities(state, np.vstack(probe_batch), config).mean(axis=0)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def save_checkpoint(state: SslState, config: SslConfig, path) -> None:
    """SSL1 checkpoint: dims + step header, float32 LE parameter payloads."""
    header = SSL_MAGIC + struct.pack(
        "<IIIII",
        config.input_dim,
        config.hidden_dim,
        config.embed_dim,
        config.n_prototypes,
        state.step,
    )
    blob = bytearray(header)
    blob += state.student.astype("<f4").tobytes()
    blob += state.teacher.astype("<f4").tobytes()
    blob += state.center.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[SslState, dict]:
    """Read an SSL1 checkpoint; returns the state and the stored dims."""
    raw = open(path, "rb").read()
    if raw[:4] != SSL_MAGIC:
        raise SslError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    input_dim, hidden_dim, embed_dim, n_proto, step = struct.unpack_from("<IIIII", raw, 4)
    n_params = (
        hidden_dim * input_dim + hidden_dim
        + embed_dim * hidden_dim + embed_dim
        + n_proto * embed_dim
    )
    need = 24 + 4 * (2 * n_params + n_proto)
    if len(raw) != need:
        raise SslError(f"{path}: checkpoint size {len(raw)} != expected {need}")
    off = 24
    student = np.frombuffer(raw, dtype="<f4", count=n_params, offset=off).astype(np.float64)
    off += 4 * n_params
    teacher = np.frombuffer(raw, dtype="<f4", count=n_params, offset=off).astype(np.float64)
    off += 4 * n_params
    center = np.frombuffer(raw, dtype="<f4", count=n_proto, offset=off).astype(np.float64)
    dims = {
        "input_dim": input_dim,
        "hidden_dim": hidden_dim,
        "embed_dim": embed_dim,
        "n_prototypes": n_proto,
    }
    return SslState(student=student, teacher=teacher, center=center, step=step), dims
