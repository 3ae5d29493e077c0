"""EBSR model assembly (head / binary body / upsampling tail) and checkpoints."""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .blocks import BasicBlock, ChannelShiftRescale, EConv, FPBlock, SpatialRescale
from .layers import Conv2d, Layer, depth_to_space, space_to_depth
from .tensor import DimensionError

VARIANTS = ("baseline", "ebsr", "ebsr_sq", "spatial_only", "channel_only", "fp")
SQ_BITS = ((1, 8), (2, 4), (4, 4))
TAILS = ("edsr", "conv")

MAGIC = b"EBSR1"


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class ModelConfig:
    """Network hyper-parameters.

    ``variant`` selects the body layer: ``baseline`` (RSign binary conv +
    skip), ``ebsr`` (full E-Conv), ``ebsr_sq`` (E-Conv with quantized spatial
    predictor, needs ``sq_bits``), the ablations ``spatial_only`` and
    ``channel_only``, or ``fp`` (real-valued residual blocks).

    ``tail="edsr"`` is the pixel-shuffle upsampler with one conv per x2/x3
    stage followed by a C->3 conv; ``tail="conv"`` is a single C->3*s*s conv
    followed by one pixel shuffle.
    """

    blocks: int = 16
    channels: int = 64
    scale: int = 4
    variant: str = "ebsr"
    sq_bits: tuple[int, int] | None = None
    reduction: int = 16
    rho: float = 1.0
    tail: str = "edsr"
    shift_mode: str = "add"
    ste_mode: str = "printed"

    def __post_init__(self):
        if self.sq_bits is not None:
            self.sq_bits = tuple(int(b) for b in self.sq_bits)
        self.validate()

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.channels < 8:
            raise ConfigError("channels must be >= 8")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.variant == "ebsr_sq":
            if self.sq_bits not in SQ_BITS:
                raise ConfigError(f"ebsr_sq needs sq_bits in {SQ_BITS}, got {self.sq_bits}")
        elif self.sq_bits is not None:
            raise ConfigError("sq_bits only applies to the ebsr_sq variant")
        if self.tail not in TAILS:
            raise ConfigError(f"unknown tail {self.tail!r}; choose from {TAILS}")
        if self.reduction < 1:
            raise ConfigError("reduction must be >= 1")
        if self.shift_mode not in ("add", "replace"):
            raise ConfigError(f"unknown shift_mode {self.shift_mode!r}")
        if self.ste_mode not in ("printed", "analytic"):
            raise ConfigError(f"unknown ste_mode {self.ste_mode!r}")

    @classmethod
    def light(cls, scale: int = 4, **kw) -> "ModelConfig":
        return cls(blocks=16, channels=64, scale=scale, **kw)

    @classmethod
    def large(cls, scale: int = 4, **kw) -> "ModelConfig":
        return cls(blocks=32, channels=256, scale=scale, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sq_bits"] = list(self.sq_bits) if self.sq_bits else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @property
    def uses_spatial(self) -> bool:
        return self.variant in ("ebsr", "ebsr_sq", "spatial_only")

    @property
    def uses_channel(self) -> bool:
        return self.variant in ("ebsr", "ebsr_sq", "channel_only")


def upsample_stages(scale: int) -> list[int]:
    if scale == 4:
        return [2, 2]
    if scale in (2, 3):
        return [scale]
    raise ConfigError(f"unsupported scale {scale}")


class Upsampler(Layer):
    def __init__(self, channels: int, scale: int, kind: str = "edsr", rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.scale, self.kind = scale, kind
        self.stages: list[tuple[Conv2d, int]] = []
        if kind == "edsr":
            for i, r in enumerate(upsample_stages(scale)):
                conv = self.add_child(f"up{i}", Conv2d(channels, channels * r * r, 3, rng=rng))
                self.stages.append((conv, r))
            self.final = self.add_child("final", Conv2d(channels, 3, 3, rng=rng))
        elif kind == "conv":
            conv = self.add_child("up0", Conv2d(channels, 3 * scale * scale, 3, rng=rng))
            self.stages.append((conv, scale))
            self.final = None
        else:
            raise ConfigError(f"unknown tail {kind!r}")

    def forward(self, x, train=False):
        for conv, r in self.stages:
            x = depth_to_space(conv.forward(x, train), r)
        if self.final is not None:
            x = self.final.forward(x, train)
        return x

    def backward(self, g):
        if self.final is not None:
            g = self.final.backward(g)
        for conv, r in reversed(self.stages):
            g = conv.backward(space_to_depth(g, r))
        return g


def upsample_tail(features: np.ndarray, scale: int, tail: Upsampler | None = None, rng=None) -> np.ndarray:
    """Run ``features`` through an EDSR upsampling tail (a fresh one unless given)."""
    if tail is None:
        tail = Upsampler(features.shape[1], scale, "edsr", rng)
    elif tail.scale != scale:
        raise ConfigError(f"tail built for x{tail.scale}, asked for x{scale}")
    return tail.forward(features)


class Model(Layer):
    """Head conv -> body blocks (+ global residual) -> upsampling tail."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.calibrated = cfg.variant == "fp"
        rng = np.random.default_rng(seed)
        c = cfg.channels
        self.head = self.add_child("head", Conv2d(3, c, 3, rng=rng))
        self.body: list[Layer] = []
        for i in range(cfg.blocks):
            if cfg.variant == "fp":
                block = FPBlock(c, cfg.rho, rng=rng)
            else:
                block = BasicBlock(c, cfg.rho, spatial=cfg.uses_spatial, channel=cfg.uses_channel,
                                   reduction=cfg.reduction, sq_bits=cfg.sq_bits,
                                   shift_mode=cfg.shift_mode, ste_mode=cfg.ste_mode, rng=rng)
            self.body.append(self.add_child(f"body.{i}", block))
        # real-valued reference keeps the EDSR body-closing conv
        self.body_conv = self.add_child("body_conv", Conv2d(c, c, 3, rng=rng) if cfg.variant == "fp" else None)
        self.tail = self.add_child("tail", Upsampler(c, cfg.scale, cfg.tail, rng))

    @property
    def scale(self) -> int:
        return self.cfg.scale

    def econv_layers(self) -> list[tuple[str, EConv]]:
        return [(n, l) for n, l in self.named_layers() if isinstance(l, EConv)]

    def features(self, x, train=False, kernel="xnor", calibrate=False) -> dict[str, np.ndarray]:
        """Named intermediate activations: head, body.i, tail_in, out (unclamped)."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected (N, 3, H, W) input, got shape {x.shape}")
        feats = {}
        h = self.head.forward(x, train)
        feats["head"] = h
        b = h
        for i, block in enumerate(self.body):
            b = block.forward(b, train, kernel, calibrate)
            feats[f"body.{i}"] = b
        if self.body_conv is not None:
            b = self.body_conv.forward(b, train)
        feats["tail_in"] = b + h
        feats["out"] = self.tail.forward(feats["tail_in"], train)
        return feats

    def forward(self, x, train=False, kernel="xnor", clamp=None):
        """Super-resolve ``x`` (N, 3, H, W) in [0, 1].

        Inference output is clamped to [0, 1] unless ``clamp=False``;
        training output never is.
        """
        out = self.features(x, train, kernel)["out"]
        if clamp is None:
            clamp = not train
        return np.clip(out, 0.0, 1.0) if clamp else out

    __call__ = forward

    def backward(self, g):
        g_tail = self.tail.backward(g)
        g_b = g_tail
        if self.body_conv is not None:
            g_b = self.body_conv.backward(g_b)
        for block in reversed(self.body):
            g_b = block.backward(g_b)
        return self.head.backward(g_tail + g_b, need_input=False)

    def calibrate(self, x) -> None:
        """Data-dependent init of RSign scales and quantizer steps from one batch."""
        self.features(x, train=False, kernel="float", calibrate=True)
        self.calibrated = True

    def constrain(self) -> None:
        for _, layer in self.named_layers():
            if layer is not self:
                layer.constrain()

    def audit(self) -> list[tuple[str, str, str]]:
        """(layer name, kind, precision) for every computing layer."""
        rows = []
        for name, layer in self.named_layers():
            if isinstance(layer, EConv):
                rows.append((name, "binary", "W1A1"))
            elif isinstance(layer, SpatialRescale):
                prec = f"W{layer.bits[0]}A{layer.bits[1]}" if layer.bits else "fp32"
                rows.append((name, "predictor", prec))
            elif isinstance(layer, ChannelShiftRescale):
                rows.append((name, "predictor", "fp32"))
            elif isinstance(layer, Conv2d) and not _inside_predictor(name):
                rows.append((name, "fp", "fp32"))
        return rows

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self._param_slots())
        missing = set(own) - set(state)
        if missing:
            raise ShapeMismatchError(f"checkpoint lacks parameter {sorted(missing)[0]!r}")
        for name, arr in state.items():
            if name not in own:
                raise ShapeMismatchError(f"unexpected parameter {name!r} for this configuration")
            layer, pname = own[name]
            if layer.params[pname].shape != arr.shape:
                raise ShapeMismatchError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {layer.params[pname].shape}")
        for name, arr in state.items():
            layer, pname = own[name]
            layer.params[pname][...] = arr

    def _param_slots(self):
        for lname, layer in self.named_layers():
            for pname in layer.params:
                yield (f"{lname}.{pname}" if lname else pname), (layer, pname)


def _inside_predictor(name: str) -> bool:
    return ".spatial" in name or ".channel" in name


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    return Model(cfg, seed)


# -- checkpoints --------------------------------------------------------------

def _encode(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nb = name.encode()
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _decode(data: bytes):
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC[:4]):
        raise CheckpointError("not an EBSR checkpoint (bad magic)")
    if not data.startswith(MAGIC):
        raise CheckpointError(f"unsupported checkpoint version {data[:len(MAGIC)]!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint checksum mismatch (file corrupt)")
    pos = len(MAGIC)
    try:
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + n])
        pos += n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + ln].decode()
            pos += ln
            (nd,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{nd}I", body, pos)
            pos += 4 * nd
            size = int(np.prod(shape, dtype=np.int64)) * 4
            arrays[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("malformed checkpoint: trailing bytes")
    return meta, arrays


def save_checkpoint(model: Model, path, extra_arrays: dict | None = None, extra_meta: dict | None = None) -> None:
    """Write ``model`` (float32 little-endian parameters) with a CRC32 trailer.

    ``extra_arrays``/``extra_meta`` carry optional training state.
    """
    meta = {"config": model.cfg.to_dict(), "calibrated": bool(model.calibrated)}
    if extra_meta:
        meta["extra"] = extra_meta
    arrays = dict(model.named_parameters())
    for name, arr in (extra_arrays or {}).items():
        arrays[f"extra:{name}"] = arr
    Path(path).write_bytes(_encode(meta, arrays))


def read_checkpoint(path):
    """Return ``(meta, arrays)`` after magic and checksum validation."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return _decode(data)


def load_checkpoint(path, cfg: ModelConfig | None = None) -> Model:
    """Rebuild a model from ``path``; with ``cfg``, load into that configuration."""
    meta, arrays = read_checkpoint(path)
    cfg = cfg or ModelConfig.from_dict(meta["config"])
    model = Model(cfg)
    state = {k: v for k, v in arrays.items() if not k.startswith("extra:")}
    model.load_state_dict(state)
    model.calibrated = bool(meta.get("calibrated", False))
    return model


def extra_state(path):
    """Training-state metadata and arrays stored alongside a model."""
    meta, arrays = read_checkpoint(path)
    extras = {k[len("extra:"):]: v for k, v in arrays.items() if k.startswith("extra:")}
    return meta.get("extra", {}), extras
