"""Tiny conditional encoder-decoder noise predictor and its checkpoint format."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..phantom import atomic_write_bytes
from ..score import Condition
from . import autodiff as ad

CKPT_MAGIC = b"FPDM"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ArchitectureMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    widths: tuple[int, ...] = (16, 32, 64)
    time_dim: int = 32
    embed_dim: int = 64
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a nonempty sequence of positive ints")
        if self.time_dim < 2 or self.time_dim % 2:
            raise ValueError("time_dim must be an even integer >= 2")

    @property
    def levels(self) -> int:
        return len(self.widths)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        return cls(**json.loads(text))

    def layout(self) -> "ParamLayout":
        lay = ParamLayout()
        e = self.embed_dim
        lay.add("time.w1", (self.time_dim, e), self.time_dim)
        lay.add("time.b1", (e,))
        lay.add("time.w2", (e, e), e)
        lay.add("time.b2", (e,))
        lay.add("label", (len(Condition), e), 1)
        w0 = self.widths[0]
        lay.conv("in", self.in_channels, w0)
        prev = w0
        for i, wd in enumerate(self.widths):
            lay.conv(f"enc{i}.a", prev, wd)
            lay.add(f"enc{i}.emb.w", (e, wd), e)
            lay.add(f"enc{i}.emb.b", (wd,))
            lay.conv(f"enc{i}.b", wd, wd)
            prev = wd
        for i in reversed(range(self.levels - 1)):
            wd = self.widths[i]
            lay.conv(f"dec{i}.a", prev + wd, wd)
            lay.add(f"dec{i}.emb.w", (e, wd), e)
            lay.add(f"dec{i}.emb.b", (wd,))
            lay.conv(f"dec{i}.b", wd, wd)
            prev = wd
        lay.conv("out", prev, self.in_channels, gain=0.1)
        return lay


@dataclass
class ParamLayout:
    offsets: dict[str, int] = field(default_factory=dict)
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)
    fan_in: dict[str, int] = field(default_factory=dict)
    gains: dict[str, float] = field(default_factory=dict)
    size: int = 0

    def add(self, name: str, shape: tuple[int, ...], fan_in: int = 0, gain: float = 1.0) -> None:
        self.offsets[name] = self.size
        self.shapes[name] = tuple(shape)
        self.fan_in[name] = fan_in  # 0 marks a zero-initialized bias
        self.gains[name] = gain
        self.size += int(np.prod(shape))

    def conv(self, name: str, c_in: int, c_out: int, gain: float = 1.0) -> None:
        self.add(name + ".w", (9 * c_in, c_out), 9 * c_in, gain)
        self.add(name + ".b", (c_out,))

    def __getitem__(self, name: str) -> int:
        return self.offsets[name]


def sinusoidal(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = np.asarray(t, dtype=float)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class TinyDenoiser:
    """Conditional epsilon predictor on ``(N, H, W)`` grids.

    Time and label embeddings are summed, passed through SiLU, and projected
    to a per-channel bias at the first convolution of every block. Grid sides
    must be divisible by ``2 ** (levels - 1)``.
    """

    def __init__(self, arch: ArchSpec = ArchSpec(), params: np.ndarray | None = None,
                 dtype=np.float32):
        self.arch = arch
        self.layout = arch.layout()
        if params is None:
            params = np.zeros(self.layout.size, dtype=dtype)
        params = np.asarray(params)
        if params.shape != (self.layout.size,):
            raise ArchitectureMismatch(f"expected {self.layout.size} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def initialize(cls, arch: ArchSpec = ArchSpec(), seed: int = 0, dtype=np.float32) -> "TinyDenoiser":
        rng = np.random.default_rng(seed)
        lay = arch.layout()
        params = np.zeros(lay.size, dtype=np.float64)
        # layout order is fixed, so the draw sequence is too
        for name, off in lay.offsets.items():
            shape, fan = lay.shapes[name], lay.fan_in[name]
            if fan:
                size = int(np.prod(shape))
                params[off:off + size] = rng.standard_normal(size) * lay.gains[name] * np.sqrt(2.0 / fan)
        return cls(arch, params.astype(dtype), dtype)

    @property
    def dtype(self):
        return self.params.dtype

    def copy(self) -> "TinyDenoiser":
        return TinyDenoiser(self.arch, self.params.copy())

    def astype(self, dtype) -> "TinyDenoiser":
        return TinyDenoiser(self.arch, self.params.astype(dtype))

    # graph

    def _graph(self, tape: ad.Tape, x, t, labels) -> ad.Node:
        a, lay = self.arch, self.layout
        dt = self.params.dtype
        n = x.shape[0]
        half = 2 ** (a.levels - 1)
        if x.shape[1] % half or x.shape[2] % half:
            raise ValueError(f"grid {x.shape[1:]} not divisible by {half}")
        temb = tape.node(sinusoidal(t, a.time_dim).astype(dt))
        e = ad.linear(tape, temb, lay["time.w1"], lay["time.b1"], a.time_dim, a.embed_dim)
        e = ad.silu(tape, e)
        e = ad.linear(tape, e, lay["time.w2"], lay["time.b2"], a.embed_dim, a.embed_dim)
        e = ad.add(tape, e, ad.embedding(tape, labels, lay["label"], len(Condition), a.embed_dim))
        e = ad.silu(tape, e)

        def block(h, name, c_in, c_out):
            h = ad.conv3x3(tape, h, lay[name + ".a.w"], lay[name + ".a.b"], c_in, c_out)
            bias = ad.linear(tape, e, lay[name + ".emb.w"], lay[name + ".emb.b"], a.embed_dim, c_out)
            h = ad.silu(tape, ad.add_channel_bias(tape, h, bias))
            h = ad.conv3x3(tape, h, lay[name + ".b.w"], lay[name + ".b.b"], c_out, c_out)
            return ad.silu(tape, h)

        h = tape.node(x.reshape(n, x.shape[1], x.shape[2], a.in_channels).astype(dt))
        h = ad.conv3x3(tape, h, lay["in.w"], lay["in.b"], a.in_channels, a.widths[0])
        skips = []
        prev = a.widths[0]
        for i, wd in enumerate(a.widths):
            if i:
                h = ad.avgpool2(tape, h)
            h = block(h, f"enc{i}", prev, wd)
            skips.append(h)
            prev = wd
        for i in reversed(range(a.levels - 1)):
            wd = a.widths[i]
            h = ad.concat_channels(tape, ad.upsample2(tape, h), skips[i])
            h = block(h, f"dec{i}", prev + wd, wd)
            prev = wd
        return ad.conv3x3(tape, h, lay["out.w"], lay["out.b"], prev, a.in_channels)

    @staticmethod
    def _batch(x_t, t, condition):
        x = np.asarray(x_t)
        single = x.ndim == 2
        if single:
            x = x[None]
        n = x.shape[0]
        ts = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        cs = np.broadcast_to(np.asarray(condition, dtype=np.int64), (n,))
        return x, ts, cs, single

    def forward(self, x_t, t, condition) -> np.ndarray:
        x, ts, cs, single = self._batch(x_t, t, condition)
        out = self._graph(ad.Tape(self.params, None), x, ts, cs).value[..., 0]
        return out[0] if single else out

    def predict(self, x_t, t, condition) -> np.ndarray:
        return self.forward(x_t, t, condition).astype(np.float64)

    def predict_pair(self, x_t, t) -> tuple[np.ndarray, np.ndarray]:
        """Healthy and Null predictions from one stacked forward pass."""
        x = np.asarray(x_t)
        single = x.ndim == 2
        if single:
            x = x[None]
        n = x.shape[0]
        cond = np.r_[np.full(n, int(Condition.HEALTHY)), np.full(n, int(Condition.NULL))]
        out = self.forward(np.concatenate([x, x]), t, cond).astype(np.float64)
        h, null = out[:n], out[n:]
        return (h[0], null[0]) if single else (h, null)

    def loss_and_grad(self, x_t, t, labels, target) -> tuple[float, np.ndarray]:
        """Mean squared noise-prediction error over all elements and its parameter gradient."""
        x, ts, cs, _ = self._batch(x_t, t, labels)
        grads = np.zeros_like(self.params)
        tape = ad.Tape(self.params, grads)
        out = self._graph(tape, x, ts, cs)
        target = np.asarray(target, dtype=self.params.dtype).reshape(out.value.shape)
        diff = out.value - target
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        tape.backward(out, (2.0 / diff.size) * diff)
        return loss, grads


# checkpoints

def save_checkpoint(path, model: TinyDenoiser, ema: TinyDenoiser | None = None) -> None:
    arch = model.arch.to_json().encode()
    parts = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION), struct.pack("<I", len(arch)), arch,
             struct.pack("<Q", model.params.size), model.params.astype("<f4").tobytes()]
    if ema is not None:
        if ema.arch != model.arch:
            raise ArchitectureMismatch("EMA shadow has a different architecture")
        parts += [b"\x01", ema.params.astype("<f4").tobytes()]
    else:
        parts.append(b"\x00")
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path) -> tuple[TinyDenoiser, TinyDenoiser | None]:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<H", take(2))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (alen,) = struct.unpack("<I", take(4))
    try:
        arch = ArchSpec.from_json(take(alen).decode())
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"bad architecture block: {exc}") from exc
    (count,) = struct.unpack("<Q", take(8))
    if count != arch.layout().size:
        raise CheckpointError(f"parameter count {count} does not match architecture")
    model = TinyDenoiser(arch, np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32))
    flag = take(1)
    ema = None
    if flag == b"\x01":
        ema = TinyDenoiser(arch, np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32))
    elif flag != b"\x00":
        raise CheckpointError("bad EMA flag byte")
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return model, ema
