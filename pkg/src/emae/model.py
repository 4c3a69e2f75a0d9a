"""Hybrid convolution + transformer model for multichannel signal matrices.

The encoder tokenizes a (C, T) signal matrix with a two-step convolution
front-end (temporal convolution producing filter maps, then a depthwise
convolution that collapses the channel axis), projects each time position to
an embed_dim token, adds learned positional embeddings, and runs a stack of
pre-norm transformer blocks.

For pre-training a decoder maps the token sequence back to a full (C, T)
reconstruction; three variants are supported: a flatten-MLP baseline and
1- or 2-block transformer decoders with a shared per-token patch projection.
For fine-tuning the decoder is dropped and a small regression head predicts
an (x, y) position in millimeters from the mean token state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng
from .errors import (
    CheckpointFormatError,
    ContractError,
    ModeError,
    ShapeError,
    WeightImportError,
)
from .tensor import (
    Tensor,
    conv2d,
    gelu,
    layer_norm,
    matmul,
    reshape,
    softmax,
    tmean,
    transpose,
)

CHECKPOINT_MAGIC = b"EMAE"
CHECKPOINT_VERSION = 1
LN_EPS = 1e-5
INIT_STD = 0.02

DECODER_NAMES = ("mlp", "tb1", "tb2")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the tokenizing front-end and transformer stack."""

    channels: int = 128
    time_len: int = 500
    temporal_kernel: int = 8
    temporal_stride: int = 8
    temporal_filters: int = 8
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.channels < 1 or self.time_len < 1:
            raise ContractError(f"invalid signal dims {self.channels}x{self.time_len}")
        if not (1 <= self.temporal_kernel <= self.time_len):
            raise ContractError(
                f"temporal_kernel {self.temporal_kernel} must be in [1, {self.time_len}]"
            )
        if self.temporal_stride < 1 or self.temporal_filters < 1:
            raise ContractError("temporal stride and filter count must be positive")
        if self.embed_dim < 1 or self.num_layers < 1:
            raise ContractError("embed_dim and num_layers must be positive")
        if self.num_heads < 1 or self.embed_dim % self.num_heads != 0:
            raise ContractError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}"
            )
        if self.mlp_ratio <= 0:
            raise ContractError("mlp_ratio must be positive")

    @property
    def token_count(self) -> int:
        return (self.time_len - self.temporal_kernel) // self.temporal_stride + 1

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)


@dataclass(frozen=True)
class DecoderConfig:
    """Reconstruction decoder: 'mlp' (depth = hidden width) or 'tb' (1-2 blocks)."""

    kind: str
    depth: int

    def __post_init__(self):
        if self.kind == "tb":
            if self.depth not in (1, 2):
                raise ContractError(f"transformer decoder depth must be 1 or 2, got {self.depth}")
        elif self.kind == "mlp":
            if self.depth < 1:
                raise ContractError(f"mlp decoder hidden width must be positive, got {self.depth}")
        else:
            raise ContractError(f"unknown decoder kind {self.kind!r}")

    @property
    def name(self) -> str:
        return "mlp" if self.kind == "mlp" else f"tb{self.depth}"


def decoder_config(name: str, embed_dim: int) -> DecoderConfig:
    """Build a decoder config from its short name (mlp / tb1 / tb2)."""
    if name == "mlp":
        return DecoderConfig(kind="mlp", depth=4 * embed_dim)
    if name in ("tb1", "tb2"):
        return DecoderConfig(kind="tb", depth=int(name[2]))
    raise ContractError(f"unknown decoder {name!r}; expected one of {DECODER_NAMES}")


@dataclass
class ModelBundle:
    """Encoder plus exactly one of {decoder, head}, with the parameter registry.

    mode == 'pretrain' when the decoder is attached, 'finetune' when the
    regression head is. `pretrain_ratio` records the masking ratio a bundle
    was pre-trained with (None for scratch models), for provenance.
    """

    encoder: EncoderConfig
    decoder: DecoderConfig | None
    has_head: bool
    params: dict[str, Tensor]
    pretrain_ratio: float | None = None

    def __post_init__(self):
        if (self.decoder is None) == (not self.has_head):
            raise ContractError("a bundle must have exactly one of decoder or head")

    @property
    def mode(self) -> str:
        return "pretrain" if self.decoder is not None else "finetune"

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())


# ---------------------------------------------------------------------------
# parameter registry construction


def _block_param_spec(prefix: str, d: int, hidden: int):
    yield f"{prefix}.ln1.g", (d,), "ones"
    yield f"{prefix}.ln1.b", (d,), "zeros"
    for w in ("wq", "wk", "wv", "wo"):
        yield f"{prefix}.attn.{w}", (d, d), "normal"
    for b in ("bq", "bk", "bv", "bo"):
        yield f"{prefix}.attn.{b}", (d,), "zeros"
    yield f"{prefix}.ln2.g", (d,), "ones"
    yield f"{prefix}.ln2.b", (d,), "zeros"
    yield f"{prefix}.mlp.w1", (d, hidden), "normal"
    yield f"{prefix}.mlp.b1", (hidden,), "zeros"
    yield f"{prefix}.mlp.w2", (hidden, d), "normal"
    yield f"{prefix}.mlp.b2", (d,), "zeros"


def _parameter_spec(enc: EncoderConfig, dec: DecoderConfig | None, with_head: bool):
    """Yield (name, shape, init kind) in canonical registry order."""
    f1, d, length = enc.temporal_filters, enc.embed_dim, enc.token_count
    yield "enc.conv_t.w", (f1, 1, 1, enc.temporal_kernel), "normal"
    yield "enc.conv_t.b", (f1,), "zeros"
    yield "enc.conv_d.w", (f1, 1, enc.channels, 1), "normal"
    yield "enc.conv_d.b", (f1,), "zeros"
    yield "enc.proj.w", (f1, d), "normal"
    yield "enc.proj.b", (d,), "zeros"
    yield "enc.pos", (length, d), "normal"
    for i in range(enc.num_layers):
        yield from _block_param_spec(f"enc.block{i}", d, enc.mlp_hidden)
    yield "enc.norm.g", (d,), "ones"
    yield "enc.norm.b", (d,), "zeros"

    if dec is not None:
        ct = enc.channels * enc.time_len
        if dec.kind == "mlp":
            yield "dec.fc1.w", (length * d, dec.depth), "normal"
            yield "dec.fc1.b", (dec.depth,), "zeros"
            yield "dec.fc2.w", (dec.depth, ct), "normal"
            yield "dec.fc2.b", (ct,), "zeros"
        else:
            patch = enc.time_len // length
            for i in range(dec.depth):
                yield from _block_param_spec(f"dec.block{i}", d, enc.mlp_hidden)
            yield "dec.norm.g", (d,), "ones"
            yield "dec.norm.b", (d,), "zeros"
            yield "dec.out.w", (d, enc.channels * patch), "normal"
            yield "dec.out.b", (enc.channels * patch,), "zeros"

    if with_head:
        yield "head.w", (d, 2), "normal"
        yield "head.b", (2,), "zeros"


def _validate_decoder_fits(enc: EncoderConfig, dec: DecoderConfig | None) -> None:
    if dec is not None and dec.kind == "tb" and enc.time_len % enc.token_count != 0:
        raise ContractError(
            f"transformer decoder needs time_len divisible by token count, got "
            f"{enc.time_len} and {enc.token_count}; adjust temporal kernel/stride"
        )


def _trunc_normal(gen: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """Normal(0, std) resampled until within 2 std (standard ViT init)."""
    out = gen.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def _build_params(
    enc: EncoderConfig,
    dec: DecoderConfig | None,
    with_head: bool,
    initializer: Callable[[str, tuple[int, ...], str], np.ndarray],
) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for name, shape, kind in _parameter_spec(enc, dec, with_head):
        params[name] = Tensor(initializer(name, shape, kind), requires_grad=True)
    return params


def _seeded_initializer(seed: int, stream: int):
    gen = rng.generator(seed, stream)

    def init(name: str, shape: tuple[int, ...], kind: str) -> np.ndarray:
        if kind == "normal":
            return _trunc_normal(gen, shape, INIT_STD)
        if kind == "ones":
            return np.ones(shape)
        return np.zeros(shape)

    return init


def init_pretrain_model(
    enc: EncoderConfig, dec: DecoderConfig, seed: int = 0, mask_ratio: float | None = None
) -> ModelBundle:
    """Fresh encoder + decoder bundle for MAE pre-training."""
    _validate_decoder_fits(enc, dec)
    params = _build_params(enc, dec, False, _seeded_initializer(seed, rng.STREAM_INIT))
    return ModelBundle(enc, dec, False, params, pretrain_ratio=mask_ratio)


def init_scratch_model(enc: EncoderConfig, seed: int = 0) -> ModelBundle:
    """Fresh encoder + regression head, the no-pretraining baseline."""
    params = _build_params(enc, None, True, _seeded_initializer(seed, rng.STREAM_INIT))
    return ModelBundle(enc, None, True, params)


def to_finetune(bundle: ModelBundle, head_seed: int = 0) -> ModelBundle:
    """Drop the decoder and attach a fresh head; encoder tensors are reused
    unchanged (bitwise) and stay trainable."""
    if bundle.decoder is None:
        raise ModeError("to_finetune requires a pre-training bundle with a decoder")
    head_init = _seeded_initializer(head_seed, rng.STREAM_HEAD_INIT)
    params: dict[str, Tensor] = {}
    for name, shape, kind in _parameter_spec(bundle.encoder, None, True):
        if name.startswith("head."):
            params[name] = Tensor(head_init(name, shape, kind), requires_grad=True)
        else:
            params[name] = bundle.params[name]
    return ModelBundle(
        bundle.encoder, None, True, params, pretrain_ratio=bundle.pretrain_ratio
    )


# ---------------------------------------------------------------------------
# forward passes


def _attention(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    b, length, d = x.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:  # (B, L, d) -> (B, H, L, dh)
        return transpose(reshape(t, (b, length, heads, dh)), (0, 2, 1, 3))

    q = split(matmul(x, p[f"{prefix}.wq"]) + p[f"{prefix}.bq"])
    k = split(matmul(x, p[f"{prefix}.wk"]) + p[f"{prefix}.bk"])
    v = split(matmul(x, p[f"{prefix}.wv"]) + p[f"{prefix}.bv"])
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    ctx = matmul(softmax(scores), v)  # (B, H, L, dh)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, length, d))
    return matmul(ctx, p[f"{prefix}.wo"]) + p[f"{prefix}.bo"]


def _transformer_block(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    h = x + _attention(
        layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"], LN_EPS),
        p,
        f"{prefix}.attn",
        heads,
    )
    m = layer_norm(h, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"], LN_EPS)
    m = matmul(gelu(matmul(m, p[f"{prefix}.mlp.w1"]) + p[f"{prefix}.mlp.b1"]), p[f"{prefix}.mlp.w2"])
    return h + (m + p[f"{prefix}.mlp.b2"])


def encoder_forward(bundle: ModelBundle, x) -> Tensor:
    """(B, C, T) signals -> (B, L, d) token states."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    cfg, p = bundle.encoder, bundle.params
    if x.ndim != 3 or x.shape[1] != cfg.channels or x.shape[2] != cfg.time_len:
        raise ShapeError(
            f"encoder expects (B, {cfg.channels}, {cfg.time_len}) input, got {x.shape}"
        )
    b = x.shape[0]
    h = reshape(x, (b, 1, cfg.channels, cfg.time_len))
    # step 1: temporal convolution -> (B, F1, C, L)
    h = conv2d(h, p["enc.conv_t.w"], stride=(1, cfg.temporal_stride))
    h = h + reshape(p["enc.conv_t.b"], (cfg.temporal_filters, 1, 1))
    # step 2: depthwise convolution collapsing the channel axis -> (B, F1, 1, L)
    h = conv2d(h, p["enc.conv_d.w"], stride=(1, 1), groups=cfg.temporal_filters)
    h = h + reshape(p["enc.conv_d.b"], (cfg.temporal_filters, 1, 1))
    length = cfg.token_count
    tokens = transpose(reshape(h, (b, cfg.temporal_filters, length)), (0, 2, 1))
    tokens = matmul(tokens, p["enc.proj.w"]) + p["enc.proj.b"]  # (B, L, d)
    tokens = tokens + p["enc.pos"]
    for i in range(cfg.num_layers):
        tokens = _transformer_block(tokens, p, f"enc.block{i}", cfg.num_heads)
    return layer_norm(tokens, p["enc.norm.g"], p["enc.norm.b"], LN_EPS)


def decoder_forward(bundle: ModelBundle, latents: Tensor) -> Tensor:
    """(B, L, d) token states -> (B, C, T) reconstruction."""
    if bundle.decoder is None:
        raise ModeError("decoder_forward called on a fine-tuning bundle")
    cfg, dec, p = bundle.encoder, bundle.decoder, bundle.params
    length, d = cfg.token_count, cfg.embed_dim
    if latents.ndim != 3 or latents.shape[1] != length or latents.shape[2] != d:
        raise ShapeError(f"decoder expects (B, {length}, {d}) latents, got {latents.shape}")
    b = latents.shape[0]
    if dec.kind == "mlp":
        h = reshape(latents, (b, length * d))
        h = gelu(matmul(h, p["dec.fc1.w"]) + p["dec.fc1.b"])
        h = matmul(h, p["dec.fc2.w"]) + p["dec.fc2.b"]
        return reshape(h, (b, cfg.channels, cfg.time_len))
    h = latents
    for i in range(dec.depth):
        h = _transformer_block(h, p, f"dec.block{i}", cfg.num_heads)
    h = layer_norm(h, p["dec.norm.g"], p["dec.norm.b"], LN_EPS)
    h = matmul(h, p["dec.out.w"]) + p["dec.out.b"]  # (B, L, C*patch)
    patch = cfg.time_len // length
    h = reshape(h, (b, length, cfg.channels, patch))
    return reshape(transpose(h, (0, 2, 1, 3)), (b, cfg.channels, cfg.time_len))


def head_forward(bundle: ModelBundle, latents: Tensor) -> Tensor:
    """(B, L, d) token states -> (B, 2) predicted gaze position in mm."""
    if not bundle.has_head:
        raise ModeError("head_forward called on a pre-training bundle")
    cfg = bundle.encoder
    if latents.ndim != 3 or latents.shape[2] != cfg.embed_dim:
        raise ShapeError(f"head expects (B, L, {cfg.embed_dim}) latents, got {latents.shape}")
    pooled = tmean(latents, axis=1)  # (B, d)
    return matmul(pooled, bundle.params["head.w"]) + bundle.params["head.b"]


def pretrain_forward(bundle: ModelBundle, x) -> Tensor:
    return decoder_forward(bundle, encoder_forward(bundle, x))


def finetune_forward(bundle: ModelBundle, x) -> Tensor:
    return head_forward(bundle, encoder_forward(bundle, x))


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "EMAE" | version u32 LE | config length u32 LE + UTF-8 key=value
# lines | tensor count u32 LE | per tensor: name length u16 LE + UTF-8 name,
# rank u8, dims u64 LE each, payload float64 LE.


def _config_lines(bundle: ModelBundle) -> str:
    enc, dec = bundle.encoder, bundle.decoder
    lines = [
        f"mode={bundle.mode}",
        f"channels={enc.channels}",
        f"time_len={enc.time_len}",
        f"temporal_kernel={enc.temporal_kernel}",
        f"temporal_stride={enc.temporal_stride}",
        f"temporal_filters={enc.temporal_filters}",
        f"embed_dim={enc.embed_dim}",
        f"num_layers={enc.num_layers}",
        f"num_heads={enc.num_heads}",
        f"mlp_ratio={enc.mlp_ratio!r}",
        f"decoder={'none' if dec is None else dec.kind}",
        f"decoder_depth={0 if dec is None else dec.depth}",
        f"pretrain_ratio={'none' if bundle.pretrain_ratio is None else repr(bundle.pretrain_ratio)}",
    ]
    return "\n".join(lines) + "\n"


def save_checkpoint(bundle: ModelBundle, path) -> None:
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = _config_lines(bundle).encode("utf-8")
    buf += struct.pack("<I", len(cfg))
    buf += cfg
    buf += struct.pack("<I", len(bundle.params))
    for name, t in bundle.params.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb))
        buf += nb
        arr = t.data
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<Q", dim)
        buf += arr.astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    """Cursor over checkpoint bytes that reports the offset of any violation."""

    def __init__(self, blob: bytes, error_cls):
        self.blob = blob
        self.pos = 0
        self.error_cls = error_cls

    def fail(self, message: str, offset: int | None = None):
        raise self.error_cls(self.pos if offset is None else offset, message)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            self.fail(f"truncated: needed {n} bytes, {len(self.blob) - self.pos} remain")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def _parse_config_block(text: str, reader: _Reader) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            reader.fail(f"malformed config line {line!r}")
        key, value = line.split("=", 1)
        cfg[key] = value
    return cfg


def _read_checkpoint_raw(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Parse a checkpoint into (config map, name -> array), validating layout."""
    blob = Path(path).read_bytes()
    r = _Reader(blob, CheckpointFormatError)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        r.fail(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        r.fail(f"unsupported version {version}", offset=4)
    cfg_len = r.u32()
    cfg_off = r.pos
    try:
        cfg_text = r.take(cfg_len).decode("utf-8")
    except UnicodeDecodeError:
        r.fail("config block is not valid UTF-8", offset=cfg_off)
    cfg = _parse_config_block(cfg_text, r)
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        entry_off = r.pos
        name = r.take(r.u16()).decode("utf-8", errors="replace")
        if name in tensors:
            r.fail(f"duplicate tensor name {name!r}", offset=entry_off)
        rank = r.u8()
        dims = tuple(r.u64() for _ in range(rank))
        if any(d < 1 for d in dims):
            r.fail(f"tensor {name!r} has non-positive dimension {dims}", offset=entry_off)
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(n * 8)
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        if not np.all(np.isfinite(arr)):
            r.fail(f"tensor {name!r} contains non-finite values", offset=entry_off)
        tensors[name] = arr
    if r.pos != len(blob):
        r.fail(f"{len(blob) - r.pos} trailing bytes after last tensor")
    return cfg, tensors


def _require(cfg: dict[str, str], key: str, path) -> str:
    if key not in cfg:
        raise CheckpointFormatError(0, f"config block of {path} is missing key {key!r}")
    return cfg[key]


def load_checkpoint(path) -> ModelBundle:
    """Load a bundle; round-trips with save_checkpoint bit-exactly."""
    cfg, tensors = _read_checkpoint_raw(path)
    enc = EncoderConfig(
        channels=int(_require(cfg, "channels", path)),
        time_len=int(_require(cfg, "time_len", path)),
        temporal_kernel=int(_require(cfg, "temporal_kernel", path)),
        temporal_stride=int(_require(cfg, "temporal_stride", path)),
        temporal_filters=int(_require(cfg, "temporal_filters", path)),
        embed_dim=int(_require(cfg, "embed_dim", path)),
        num_layers=int(_require(cfg, "num_layers", path)),
        num_heads=int(_require(cfg, "num_heads", path)),
        mlp_ratio=float(_require(cfg, "mlp_ratio", path)),
    )
    dec_kind = _require(cfg, "decoder", path)
    dec = None if dec_kind == "none" else DecoderConfig(dec_kind, int(cfg["decoder_depth"]))
    mode = _require(cfg, "mode", path)
    ratio_text = cfg.get("pretrain_ratio", "none")
    ratio = None if ratio_text == "none" else float(ratio_text)

    expected = {name: shape for name, shape, _ in _parameter_spec(enc, dec, dec is None)}
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointFormatError(
            0, f"parameter names do not match config (missing {missing}, unexpected {extra})"
        )
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise CheckpointFormatError(
                0, f"tensor {name!r} has shape {tensors[name].shape}, config implies {shape}"
            )
    params = _build_params(enc, dec, dec is None, lambda name, shape, kind: tensors[name])
    bundle = ModelBundle(enc, dec, dec is None, params, pretrain_ratio=ratio)
    if bundle.mode != mode:
        raise CheckpointFormatError(0, f"mode {mode!r} inconsistent with stored parameters")
    return bundle


@dataclass
class WeightImportReport:
    """What an external-weight import did: copied pairs and leftovers."""

    matched: list[tuple[str, str]] = field(default_factory=list)
    unmatched_internal: list[str] = field(default_factory=list)
    missing_external: list[str] = field(default_factory=list)


def import_external_weights(
    bundle: ModelBundle, path, name_map: dict[str, str]
) -> WeightImportReport:
    """Copy tensors from an external checkpoint into `bundle` by name map.

    name_map pairs external tensor names to internal parameter names. Mapped
    tensors are copied where shapes match; a shape conflict on a mapped name
    is an error. Internal parameters not covered keep their current values.
    """
    _, tensors = _read_checkpoint_raw(path)
    report = WeightImportReport()
    touched: set[str] = set()
    for external, internal in name_map.items():
        if external not in tensors:
            report.missing_external.append(external)
            continue
        if internal not in bundle.params:
            report.missing_external.append(external)
            continue
        src = tensors[external]
        dst = bundle.params[internal]
        if src.shape != dst.shape:
            raise WeightImportError(
                f"mapped tensor {external!r} -> {internal!r} has shape {src.shape}, "
                f"expected {dst.shape}"
            )
        np.copyto(dst.data, src)
        touched.add(internal)
        report.matched.append((external, internal))
    report.unmatched_internal = [n for n in bundle.params if n not in touched]
    return report
