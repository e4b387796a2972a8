"""Conditional score estimator S(x_t, t, y, mu) and checkpoint I/O.

A compact U-Net over (n_mels, T) grids: the three streams are stacked in the
channel dimension, each level halves both axes, and every block receives the
time step through a sinusoidal embedding projected to per-channel scale and
shift. The smooth activation x * tanh(ln(1 + e^x)) is used throughout.

Parameters are initialized from a seeded numpy generator so that training
trajectories replay bit-exactly; torch supplies the array math and
reverse-mode differentiation underneath this module's contracts.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CompatibilityError, ConfigError, DataError, FormatError, ShapeError

CHECKPOINT_MAGIC = b"DMSE"
CHECKPOINT_VERSION = 1

TIME_SCALE = 1000.0  # sinusoidal embedding sees t * TIME_SCALE, t in [0, 1]


@dataclass
class UNetConfig:
    in_channels: int = 3
    depth: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    time_embed_dim: int = 64
    groupnorm_groups: int = 4

    def __post_init__(self) -> None:
        self.channels = tuple(self.channels)
        if self.depth < 1 or len(self.channels) != self.depth:
            raise ConfigError(
                f"channels list length {len(self.channels)} must equal depth {self.depth}"
            )
        if self.in_channels < 1 or self.time_embed_dim < 2:
            raise ConfigError("in_channels must be >= 1 and time_embed_dim >= 2")
        for c in self.channels:
            if c < 1:
                raise ConfigError(f"channel count {c} must be >= 1")
            if c % self.groupnorm_groups:
                raise ConfigError(
                    f"groupnorm_groups={self.groupnorm_groups} must divide channels, got {c}"
                )

    @property
    def divisor(self) -> int:
        return 2 ** (self.depth - 1)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "depth": self.depth,
            "channels": list(self.channels),
            "time_embed_dim": self.time_embed_dim,
            "groupnorm_groups": self.groupnorm_groups,
        }


def desk_config() -> UNetConfig:
    return UNetConfig()


def paper_config() -> UNetConfig:
    """Paper-scale variant: depth 5 with channels 32/64/128/256/256."""
    return UNetConfig(depth=5, channels=(32, 64, 128, 256, 256))


def tiny_config() -> UNetConfig:
    """Smallest configuration used by gradient checks and overfit tests."""
    return UNetConfig(depth=2, channels=(4, 8), time_embed_dim=32, groupnorm_groups=2)


def _time_vector(t, batch: int, dtype, device) -> torch.Tensor:
    """Normalize scalar / numpy / tensor time input to shape (batch,)."""
    if torch.is_tensor(t):
        t = t.to(dtype=dtype, device=device)
        return t.expand(batch) if t.ndim == 0 else t
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 0:
        return torch.full((batch,), float(arr), dtype=dtype, device=device)
    return torch.as_tensor(arr, dtype=dtype, device=device)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos features of t * TIME_SCALE, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0)
        * torch.arange(half, dtype=t.dtype, device=t.device)
        / max(half - 1, 1)
    )
    ang = t[:, None] * TIME_SCALE * freqs[None, :]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class FilmBlock(nn.Module):
    """conv3x3 -> groupnorm -> time scale/shift -> Mish, with residual shortcut."""

    def __init__(self, c_in: int, c_out: int, temb_dim: int, groups: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm = nn.GroupNorm(groups, c_out)
        self.film = nn.Linear(temb_dim, 2 * c_out)
        self.act = nn.Mish()
        self.shortcut = nn.Identity() if c_in == c_out else nn.Conv2d(c_in, c_out, 1)

    def forward(self, h: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        out = self.norm(self.conv(h))
        scale, shift = self.film(emb)[:, :, None, None].chunk(2, dim=1)
        out = self.act(out * (1.0 + scale) + shift)
        return out + self.shortcut(h)


class ScoreNet(nn.Module):
    """U-shaped conditional score estimator over stacked [x_t; y; mu]."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        ch = config.channels
        temb = config.time_embed_dim
        g = config.groupnorm_groups

        self.time_mlp = nn.Sequential(
            nn.Linear(temb, temb), nn.Mish(), nn.Linear(temb, temb)
        )
        self.stem = nn.Conv2d(config.in_channels, ch[0], 3, padding=1)

        self.encoder = nn.ModuleList()
        self.downs = nn.ModuleList()
        c_prev = ch[0]
        for i, c in enumerate(ch):
            self.encoder.append(
                nn.ModuleList([FilmBlock(c_prev, c, temb, g), FilmBlock(c, c, temb, g)])
            )
            if i < config.depth - 1:
                self.downs.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            c_prev = c

        self.bottleneck = FilmBlock(ch[-1], ch[-1], temb, g)

        self.ups = nn.ModuleList()
        self.decoder = nn.ModuleList()
        rev = list(reversed(ch))
        for i in range(config.depth - 1):
            self.ups.append(nn.ConvTranspose2d(rev[i], rev[i + 1], 2, stride=2))
            self.decoder.append(
                nn.ModuleList(
                    [
                        FilmBlock(2 * rev[i + 1], rev[i + 1], temb, g),
                        FilmBlock(rev[i + 1], rev[i + 1], temb, g),
                    ]
                )
            )
        self.head = nn.Conv2d(ch[0], 1, 1)

    def forward(
        self, x_t: torch.Tensor, t, y: torch.Tensor, mu: torch.Tensor
    ) -> torch.Tensor:
        """Score estimate with the shape of x_t; inputs are (B, n_mels, T)."""
        if x_t.shape != y.shape or x_t.shape != mu.shape:
            raise ShapeError(
                f"x_t/y/mu shapes differ: {x_t.shape}, {y.shape}, {mu.shape}"
            )
        if x_t.ndim != 3:
            raise ShapeError(f"expected (B, n_mels, T) input, got shape {tuple(x_t.shape)}")
        batch = x_t.shape[0]
        t = _time_vector(t, batch, x_t.dtype, x_t.device)
        h = torch.stack([x_t, y, mu], dim=1)
        if not torch.isfinite(h).all():
            raise DataError("non-finite values in model input")

        m_in, t_in = h.shape[2], h.shape[3]
        d = self.config.divisor
        pad_m = (-m_in) % d
        pad_t = (-t_in) % d
        if pad_m or pad_t:
            h = F.pad(h, (0, pad_t, 0, pad_m), mode="replicate")

        emb = self.time_mlp(sinusoidal_embedding(t, self.config.time_embed_dim))
        h = self.stem(h)
        skips = []
        for i, blocks in enumerate(self.encoder):
            for block in blocks:
                h = block(h, emb)
            skips.append(h)
            if i < self.config.depth - 1:
                h = self.downs[i](h)
        h = self.bottleneck(h, emb)
        for i, blocks in enumerate(self.decoder):
            h = self.ups[i](h)
            h = torch.cat([h, skips[-2 - i]], dim=1)
            for block in blocks:
                h = block(h, emb)
        out = self.head(h)[:, 0]
        return out[:, :m_in, :t_in]


class ToyDenseScoreNet(nn.Module):
    """Dense variant for vector-valued toys: S(x, t, y) with x, y of dim D."""

    def __init__(self, dim: int = 1, hidden: int = 64, time_embed_dim: int = 16):
        super().__init__()
        self.time_embed_dim = time_embed_dim
        self.net = nn.Sequential(
            nn.Linear(2 * dim + time_embed_dim, hidden),
            nn.Mish(),
            nn.Linear(hidden, hidden),
            nn.Mish(),
            nn.Linear(hidden, dim),
        )

    def forward(self, x: torch.Tensor, t, y: torch.Tensor, mu=None) -> torch.Tensor:
        t = _time_vector(t, x.shape[0], x.dtype, x.device)
        emb = sinusoidal_embedding(t, self.time_embed_dim)
        return self.net(torch.cat([x, y, emb], dim=1))


def init_parameters(model: nn.Module, seed: int) -> None:
    """He-normal kernels, zero biases, unit norms, zero-initialized head.

    Draws come from a seeded numpy generator in module definition order, so
    identical (config, seed) reproduce identical parameters bit-exactly.
    """
    rng = np.random.default_rng(seed)
    head_weights = set()
    if isinstance(model, ScoreNet):
        head_weights = {id(model.head.weight), id(model.head.bias)}
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = module.weight
            if id(w) in head_weights:
                with torch.no_grad():
                    w.zero_()
                    module.bias.zero_()
                continue
            if isinstance(module, nn.Linear):
                fan_in = module.in_features
            elif isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            else:  # ConvTranspose2d: fan_in per output position
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            values = rng.normal(0.0, std, size=tuple(w.shape))
            with torch.no_grad():
                w.copy_(torch.from_numpy(values).to(w.dtype))
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.GroupNorm):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


def build_score_net(config: UNetConfig, seed: int) -> ScoreNet:
    model = ScoreNet(config)
    init_parameters(model, seed)
    return model


def as_score_function(model: ScoreNet):
    """Wrap the network as a numpy score function for the ODE samplers.

    Accepts (n_mels, T) or (B, n_mels, T) float arrays and returns float64
    arrays of the same shape. Evaluation is read-only and gradient-free.
    """
    model.eval()
    dtype = next(model.parameters()).dtype

    def score(x: np.ndarray, t: float, y: np.ndarray, mu: np.ndarray) -> np.ndarray:
        squeeze = np.ndim(x) == 2
        def prep(a):
            tens = torch.from_numpy(np.ascontiguousarray(a)).to(dtype)
            return tens[None] if squeeze else tens
        with torch.no_grad():
            out = model(prep(x), float(t), prep(y), prep(mu))
        arr = out.cpu().numpy().astype(np.float64)
        return arr[0] if squeeze else arr

    return score


# ---------------------------------------------------------------------------
# Checkpoints: magic "DMSE", u32 version, u32 json length, JSON config block,
# u32 tensor count, then per tensor: u16 name length, name, u8 ndim,
# u32 dims..., f32 little-endian data. A CRC32 of everything after the magic
# is appended as the final u32.

def _pack_tensors(tensors: dict[str, torch.Tensor]) -> bytes:
    chunks = []
    for name in sorted(tensors):
        data = tensors[name].detach().cpu().to(torch.float32).numpy()
        name_b = name.encode()
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype("<f4").tobytes())
    return b"".join(chunks)


def _unpack_tensors(buf: bytes, offset: int, count: int, path) -> tuple[dict[str, np.ndarray], int]:
    out = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", buf, offset)
            offset += 2
            name = buf[offset : offset + name_len].decode()
            offset += name_len
            (ndim,) = struct.unpack_from("<B", buf, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, offset)
            offset += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=offset)
            if arr.size != n:
                raise FormatError(f"{path}: truncated tensor data for {name!r}")
            offset += 4 * n
            out[name] = arr.reshape(shape).copy()
        except struct.error as exc:
            raise FormatError(f"{path}: truncated checkpoint: {exc}") from exc
    return out, offset


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    config: UNetConfig,
    meta: dict | None = None,
    adam_state=None,
) -> None:
    header_meta = {
        "model": config.to_dict(),
        "meta": meta or {},
        "adam_step": None if adam_state is None else adam_state.step,
    }
    blob = json.dumps(header_meta, sort_keys=True).encode()
    tensors = {f"param:{k}": v for k, v in model.state_dict().items()}
    if adam_state is not None:
        tensors.update({f"adam.m:{k}": v for k, v in adam_state.m.items()})
        tensors.update({f"adam.v:{k}": v for k, v in adam_state.v.items()})
    body = (
        struct.pack("<II", CHECKPOINT_VERSION, len(blob))
        + blob
        + struct.pack("<I", len(tensors))
        + _pack_tensors(tensors)
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(CHECKPOINT_MAGIC + body + struct.pack("<I", crc))


def load_checkpoint(path: str | Path, expected_config: UNetConfig | None = None):
    """Returns (model, meta, adam_tensors) where adam_tensors may be None."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    body, crc_bytes = raw[4:-4], raw[-4:]
    if len(crc_bytes) != 4 or zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise FormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    try:
        version, blob_len = struct.unpack_from("<II", body, 0)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(body[8 : 8 + blob_len].decode())
        offset = 8 + blob_len
        (count,) = struct.unpack_from("<I", body, offset)
        offset += 4
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header: {exc}") from exc
    tensors, _ = _unpack_tensors(body, offset, count, path)

    config = UNetConfig(**header["model"])
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise CompatibilityError(
            f"{path}: checkpoint config {config.to_dict()} does not match "
            f"expected {expected_config.to_dict()}"
        )
    model = ScoreNet(config)
    state = {}
    adam_m, adam_v = {}, {}
    for name, arr in tensors.items():
        kind, _, pname = name.partition(":")
        tensor = torch.from_numpy(arr)
        if kind == "param":
            state[pname] = tensor
        elif kind == "adam.m":
            adam_m[pname] = tensor
        elif kind == "adam.v":
            adam_v[pname] = tensor
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CompatibilityError(f"{path}: checkpoint missing parameters {sorted(missing)}")
    model.load_state_dict(state)
    adam = None
    if header.get("adam_step") is not None:
        adam = {"step": header["adam_step"], "m": adam_m, "v": adam_v}
    return model, header.get("meta", {}), adam
