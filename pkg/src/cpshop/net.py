"""Two-stage transformer dispatching policy.

Stage 1 encodes each job's interval window (previous, current, upcoming
slots) with a single-head transformer layer over the slots and mean-pools
it into one job embedding. Stage 2 runs a second single-head transformer
layer across the job embeddings, so every job logit can depend on the
whole shop state. A separate head scores the No-Op action from the
mean-pooled job embeddings.

Interval features (f, lb, l, ct) enter through a linear projection; the
lb and l entries are divided by the instance's machine-load bound first
so the network never sees raw time units. Source and sink slots are
replaced by learned tokens. Slot positions get a fixed sinusoidal
encoding; jobs get none, keeping the job axis permutation-equivariant.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from cpshop import autodiff as ad
from cpshop.autodiff import Tensor
from cpshop.env import F_LB, F_LENGTH, Observation, SLOT_REAL, SLOT_SINK, SLOT_SOURCE

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    d_model: int = 8
    d_ff: int = 32
    next_ops: int = 3

    @property
    def slots(self) -> int:
        return 2 + self.next_ops


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _encoder_param_names(prefix: str) -> list[str]:
    names = []
    for w in ("wq", "wk", "wv", "wo", "ff1", "ff2"):
        names += [f"{prefix}.{w}.w", f"{prefix}.{w}.b"]
    for ln in ("ln1", "ln2"):
        names += [f"{prefix}.{ln}.g", f"{prefix}.{ln}.b"]
    return names


def init_params(config: PolicyConfig = PolicyConfig(), seed: int = 0) -> dict[str, Tensor]:
    """Fresh parameter dictionary; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    d, f = config.d_model, config.d_ff
    params: dict[str, np.ndarray] = {
        "proj.w": _linear_init(rng, 4, d),
        "proj.b": np.zeros(d),
        "tok.source": rng.uniform(-0.5, 0.5, size=d),
        "tok.sink": rng.uniform(-0.5, 0.5, size=d),
    }
    for prefix in ("enc1", "enc2"):
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{prefix}.{w}.w"] = _linear_init(rng, d, d)
            params[f"{prefix}.{w}.b"] = np.zeros(d)
        params[f"{prefix}.ff1.w"] = _linear_init(rng, d, f)
        params[f"{prefix}.ff1.b"] = np.zeros(f)
        params[f"{prefix}.ff2.w"] = _linear_init(rng, f, d)
        params[f"{prefix}.ff2.b"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            params[f"{prefix}.{ln}.g"] = np.ones(d)
            params[f"{prefix}.{ln}.b"] = np.zeros(d)
    for head in ("job", "noop"):
        params[f"{head}.h1.w"] = _linear_init(rng, d, f)
        params[f"{head}.h1.b"] = np.zeros(f)
        params[f"{head}.h2.w"] = _linear_init(rng, f, 1)
        params[f"{head}.h2.b"] = np.zeros(1)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def positional_encoding(positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(positions)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (i - i % 2) / d_model)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def _encoder_layer(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """Single-head post-norm transformer layer over the second-to-last axis."""
    d = x.shape[-1]
    q = x @ params[f"{prefix}.wq.w"] + params[f"{prefix}.wq.b"]
    k = x @ params[f"{prefix}.wk.w"] + params[f"{prefix}.wk.b"]
    v = x @ params[f"{prefix}.wv.w"] + params[f"{prefix}.wv.b"]
    scores = (q @ k.swapaxes(-1, -2)) / np.sqrt(d)
    att = ad.softmax(scores, axis=-1)
    heads = (att @ v) @ params[f"{prefix}.wo.w"] + params[f"{prefix}.wo.b"]
    x = ad.layer_norm(x + heads, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    ff = (x @ params[f"{prefix}.ff1.w"] + params[f"{prefix}.ff1.b"]).tanh()
    ff = ff @ params[f"{prefix}.ff2.w"] + params[f"{prefix}.ff2.b"]
    return ad.layer_norm(x + ff, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


def _mlp(params: dict[str, Tensor], head: str, x: Tensor) -> Tensor:
    h = (x @ params[f"{head}.h1.w"] + params[f"{head}.h1.b"]).tanh()
    return h @ params[f"{head}.h2.w"] + params[f"{head}.h2.b"]


@dataclass(frozen=True)
class ObservationBatch:
    """Stacked observations of equal job count."""

    features: np.ndarray  # (B, J, S, 4), lb and l already normalized
    kinds: np.ndarray  # (B, J, S)
    masks: np.ndarray  # (B, J + 1) boolean

    @classmethod
    def from_observations(cls, observations: list[Observation]) -> "ObservationBatch":
        jc = observations[0].job_count
        if any(o.job_count != jc for o in observations):
            raise ValueError("all observations in a batch must share the job count")
        feats = np.stack([o.features for o in observations]).astype(np.float64)
        scales = np.array([max(o.time_scale, 1) for o in observations], dtype=np.float64)
        feats[..., F_LB] /= scales[:, None, None]
        feats[..., F_LENGTH] /= scales[:, None, None]
        kinds = np.stack([o.kinds for o in observations])
        masks = np.stack([o.mask for o in observations])
        return cls(features=feats, kinds=kinds, masks=masks)


def forward_logits(params: dict[str, Tensor], batch: ObservationBatch) -> Tensor:
    """Masked action logits, shape (B, J + 1); masked entries are -inf."""
    b, j, s, _ = batch.features.shape
    x = Tensor(batch.features) @ params["proj.w"] + params["proj.b"]
    real = (batch.kinds == SLOT_REAL)[..., None].astype(np.float64)
    source = (batch.kinds == SLOT_SOURCE)[..., None].astype(np.float64)
    sink = (batch.kinds == SLOT_SINK)[..., None].astype(np.float64)
    x = x * real + params["tok.source"] * source + params["tok.sink"] * sink
    x = x + positional_encoding(s, x.shape[-1])

    x = x.reshape(b * j, s, -1)
    x = _encoder_layer(params, "enc1", x)
    x = x.mean(axis=1).reshape(b, j, -1)
    x = _encoder_layer(params, "enc2", x)

    job_logits = _mlp(params, "job", x).reshape(b, j)
    noop_logit = _mlp(params, "noop", x.mean(axis=1)).reshape(b, 1)
    logits = ad.concat([job_logits, noop_logit], axis=1)
    offset = np.where(batch.masks, 0.0, -np.inf)
    return logits + offset


def action_log_probs(params: dict[str, Tensor], batch: ObservationBatch, actions) -> Tensor:
    """Log probability of each chosen action under the masked policy."""
    logp = ad.log_softmax(forward_logits(params, batch), axis=1)
    rows = np.arange(batch.features.shape[0])
    return logp[rows, np.asarray(actions)]


class NetPolicy:
    """Rollout-facing wrapper: observation in, logit vector out."""

    def __init__(self, params: dict[str, Tensor], config: PolicyConfig = PolicyConfig()):
        self.params = params
        self.config = config

    def logits(self, observation: Observation) -> np.ndarray:
        batch = ObservationBatch.from_observations([observation])
        return forward_logits(self.params, batch).data[0]


# -- optimization --------------------------------------------------------


class Adam:
    """Adam over a named parameter dictionary."""

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(v) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v) for k, v in state["v"].items()}


def forward(params: dict[str, Tensor], observation: Observation) -> np.ndarray:
    """Masked logit vector (length job_count + 1) for one observation."""
    batch = ObservationBatch.from_observations([observation])
    return forward_logits(params, batch).data[0]


def grad(
    params: dict[str, Tensor],
    observation: Observation,
    action: int,
    coefficient: float,
) -> dict[str, np.ndarray]:
    """Gradient of ``coefficient * log pi(action | observation)`` w.r.t.
    every parameter, keyed like the parameter dictionary."""
    for p in params.values():
        p.grad = None
    batch = ObservationBatch.from_observations([observation])
    scalar = (action_log_probs(params, batch, [action]) * coefficient).sum()
    scalar.backward()
    return {
        k: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }


# -- persistence ---------------------------------------------------------
#
# Checkpoint layout: a text header (format tag + version, a config line,
# one "param <name> <dims...>" line per tensor in declared order, then
# "end"), followed by the raw little-endian float64 values of every
# tensor concatenated in that same order.

_MAGIC = "cpshop-policy-checkpoint"


def save_params(params: dict[str, Tensor], path: str | Path,
                config: PolicyConfig = PolicyConfig()) -> None:
    names = list(params)
    header = [f"{_MAGIC} v{CHECKPOINT_VERSION}", f"config {json.dumps(asdict(config))}"]
    for name in names:
        dims = " ".join(str(d) for d in params[name].shape)
        header.append(f"param {name} {dims}".rstrip())
    header.append("end")
    payload = np.concatenate(
        [np.ascontiguousarray(params[n].data, dtype="<f8").ravel() for n in names]
    )
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(payload.tobytes())


def load_params(path: str | Path) -> tuple[dict[str, Tensor], PolicyConfig]:
    raw = Path(path).read_bytes()
    head, _, rest = raw.partition(b"end\n")
    lines = head.decode().splitlines()
    if not lines or not lines[0].startswith(_MAGIC):
        raise ValueError(f"{path}: not a policy checkpoint")
    version = lines[0].split()[-1]
    if version != f"v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = PolicyConfig()
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in lines[1:]:
        fields = line.split()
        if fields[0] == "config":
            config = PolicyConfig(**json.loads(line.split(" ", 1)[1]))
        elif fields[0] == "param":
            shapes.append((fields[1], tuple(int(d) for d in fields[2:])))
        else:
            raise ValueError(f"{path}: unexpected header line {line!r}")
    flat = np.frombuffer(rest, dtype="<f8")
    expected = sum(int(np.prod(s, dtype=np.int64)) if s else 1 for _, s in shapes)
    if flat.size != expected:
        raise ValueError(f"{path}: payload holds {flat.size} values, header declares {expected}")
    params: dict[str, Tensor] = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        params[name] = Tensor(
            flat[offset : offset + size].reshape(shape).copy(), requires_grad=True
        )
        offset += size
    return params, config
