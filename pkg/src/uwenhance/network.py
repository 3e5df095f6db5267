"""Four-level shuffle-resampled encoder-decoder restoration network.

Built from channel-attention transformer blocks whose feedforward is a
channel-reordering gated network (CRGFN). Tensors are NCHW inside the
network; Images (HxWx3 numpy) are converted at the boundary by `enhance`.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import AlignmentError, ConfigError, ShapeError
from .imaging import as_image


@dataclass
class NetworkConfig:
    levels: int = 4
    base_channels: int = 16
    blocks_per_level: list = field(default_factory=lambda: [2, 2, 2, 2])
    heads_per_level: list = field(default_factory=lambda: [1, 2, 4, 8])
    crgfn_expansion: float = 2.0
    shuffle_factor: int = 2
    reorder_groups: int = 4
    refinement_blocks: int = 1
    # zero output head makes the untrained network the identity map
    zero_init_head: bool = False

    def __post_init__(self):
        self.blocks_per_level = list(self.blocks_per_level)
        self.heads_per_level = list(self.heads_per_level)
        self.validate()

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level

    def hidden(self, level: int) -> int:
        return int(round(self.crgfn_expansion * self.channels(level)))

    @property
    def downsampling(self) -> int:
        return self.shuffle_factor ** (self.levels - 1)

    def validate(self):
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if self.shuffle_factor != 2:
            raise ConfigError("shuffle_factor is fixed at 2")
        if len(self.blocks_per_level) != self.levels or len(self.heads_per_level) != self.levels:
            raise ConfigError("blocks_per_level and heads_per_level need one entry per level")
        if self.crgfn_expansion <= 1:
            raise ConfigError("crgfn_expansion must exceed 1")
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError("base_channels must be a positive even integer")
        for level in range(self.levels):
            c, heads = self.channels(level), self.heads_per_level[level]
            if heads < 1 or c % heads:
                raise ConfigError(f"{heads} heads do not divide {c} channels at level {level}")
            exact = self.crgfn_expansion * c
            hidden = self.hidden(level)
            if abs(exact - hidden) > 1e-9 or hidden % 2:
                raise ConfigError(f"expansion*channels = {exact} is not an even integer at level {level}")
            if hidden % self.reorder_groups:
                raise ConfigError(f"{self.reorder_groups} groups do not divide {hidden} hidden channels")
            if self.blocks_per_level[level] < 1:
                raise ConfigError("every level needs at least one block")
        if self.base_channels % self.reorder_groups and self.reorder_groups > 1:
            raise ConfigError("base_channels must be divisible by reorder_groups")

    def to_dict(self) -> dict:
        return asdict(self)


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Space-to-channel: ``(B,C,H,W) -> (B, C*r*r, H/r, W/r)``.

    Input ``(c, y, x)`` lands in channel ``c + C * (r * (y % r) + x % r)``
    at position ``(y // r, x // r)``.
    """
    b, c, h, w = x.shape
    if h % r or w % r:
        raise AlignmentError(f"spatial size {h}x{w} not divisible by {r}")
    x = x.reshape(b, c, h // r, r, w // r, r)
    x = x.permute(0, 3, 5, 1, 2, 4)
    return x.reshape(b, r * r * c, h // r, w // r)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    b, c, h, w = x.shape
    if c % (r * r):
        raise AlignmentError(f"{c} channels not divisible by {r * r}")
    x = x.reshape(b, r, r, c // (r * r), h, w)
    x = x.permute(0, 3, 4, 1, 5, 2)
    return x.reshape(b, c // (r * r), h * r, w * r)


def channel_reorder(x: torch.Tensor, groups: int) -> torch.Tensor:
    """Group-transpose shuffle: output channel k reads input ``(k % g) * (C/g) + k // g``."""
    b, c, h, w = x.shape
    if c % groups:
        raise ShapeError(f"{c} channels not divisible into {groups} groups")
    return x.reshape(b, groups, c // groups, h, w).transpose(1, 2).reshape(b, c, h, w)


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis of an NCHW tensor."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = x.var(1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class ChannelAttention(nn.Module):
    """Multi-head transposed attention: heads attend across channels, not pixels."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.temperature = nn.Parameter(torch.ones(num_heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, kernel_size=1)
        self.qkv_dwconv = nn.Conv2d(dim * 3, dim * 3, kernel_size=3, padding=1, groups=dim * 3)
        self.project_out = nn.Conv2d(dim, dim, kernel_size=1)

    def _qkv(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)
        q, k, v = (t.reshape(b, self.num_heads, c // self.num_heads, h * w) for t in (q, k, v))
        return F.normalize(q, dim=-1), F.normalize(k, dim=-1), v

    def attention_weights(self, x):
        """Per-head ``(c/heads) x (c/heads)`` weights; rows sum to one."""
        q, k, _ = self._qkv(x)
        return ((q @ k.transpose(-2, -1)) * self.temperature).softmax(dim=-1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self._qkv(x)
        attn = ((q @ k.transpose(-2, -1)) * self.temperature).softmax(dim=-1)
        out = (attn @ v).reshape(b, c, h, w)
        return self.project_out(out)


class CRGFN(nn.Module):
    """Channel-reordering gated feedforward with its own pre-norm and residual.

    norm -> 1x1 expand to hidden -> group-transpose reorder -> 3x3 depth-wise
    -> split halves -> gelu(first) * second -> 1x1 project -> + input.
    """

    def __init__(self, dim: int, hidden: int, groups: int):
        super().__init__()
        self.groups = groups
        self.norm = LayerNorm2d(dim)
        self.project_in = nn.Conv2d(dim, hidden, kernel_size=1)
        self.dwconv = nn.Conv2d(hidden, hidden, kernel_size=3, padding=1, groups=hidden)
        self.project_out = nn.Conv2d(hidden // 2, dim, kernel_size=1)

    def forward(self, x):
        y = channel_reorder(self.project_in(self.norm(x)), self.groups)
        gate, value = self.dwconv(y).chunk(2, dim=1)
        return x + self.project_out(F.gelu(gate) * value)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, hidden: int, groups: int):
        super().__init__()
        self.norm = LayerNorm2d(dim)
        self.attn = ChannelAttention(dim, num_heads)
        self.ffn = CRGFN(dim, hidden, groups)

    def forward(self, x):
        x = x + self.attn(self.norm(x))
        return self.ffn(x)


class Downsample(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(dim, dim // 2, kernel_size=3, padding=1, bias=False)

    def forward(self, x):
        return pixel_unshuffle(self.conv(x), 2)


class Upsample(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(dim, dim * 2, kernel_size=3, padding=1, bias=False)

    def forward(self, x):
        return pixel_shuffle(self.conv(x), 2)


class UIRNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        cfg = config

        def stage(level, count):
            return nn.Sequential(
                *[
                    TransformerBlock(
                        cfg.channels(level), cfg.heads_per_level[level], cfg.hidden(level), cfg.reorder_groups
                    )
                    for _ in range(count)
                ]
            )

        self.patch_embed = nn.Conv2d(3, cfg.base_channels, kernel_size=3, padding=1)
        self.encoders = nn.ModuleList(stage(l, cfg.blocks_per_level[l]) for l in range(cfg.levels - 1))
        self.downs = nn.ModuleList(Downsample(cfg.channels(l)) for l in range(cfg.levels - 1))
        self.latent = stage(cfg.levels - 1, cfg.blocks_per_level[-1])
        # decoder modules are indexed by level (0 = full resolution)
        self.ups = nn.ModuleList(Upsample(cfg.channels(l + 1)) for l in range(cfg.levels - 1))
        self.reduces = nn.ModuleList(
            nn.Conv2d(2 * cfg.channels(l), cfg.channels(l), kernel_size=1) for l in range(cfg.levels - 1)
        )
        self.decoders = nn.ModuleList(stage(l, cfg.blocks_per_level[l]) for l in range(cfg.levels - 1))
        self.refinement = stage(0, cfg.refinement_blocks)
        self.output = nn.Conv2d(cfg.base_channels, 3, kernel_size=3, padding=1)

    def forward(self, img):
        h, w = img.shape[-2:]
        factor = self.config.downsampling
        if h % factor or w % factor:
            raise AlignmentError(f"input {h}x{w} not divisible by {factor}; pad or crop first")
        x = self.patch_embed(img)
        skips = []
        for encoder, down in zip(self.encoders, self.downs):
            x = encoder(x)
            skips.append(x)
            x = down(x)
        x = self.latent(x)
        for level in reversed(range(self.config.levels - 1)):
            x = self.ups[level](x)
            x = self.reduces[level](torch.cat([x, skips[level]], dim=1))
            x = self.decoders[level](x)
        x = self.refinement(x)
        return torch.clamp(self.output(x) + img, 0.0, 1.0)

    def attention_modules(self):
        return [m for m in self.modules() if isinstance(m, ChannelAttention)]


def _reset_parameters(model: nn.Module, generator: torch.Generator, zero_head: bool):
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels // module.groups * module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=generator)
                if module.bias is not None:
                    module.bias.zero_()
    if zero_head:
        with torch.no_grad():
            model.output.weight.zero_()


def init_network(config: Optional[NetworkConfig] = None, seed: int = 0) -> UIRNet:
    """Build a network with deterministic, seed-derived weights (all trainable)."""
    config = config or NetworkConfig()
    config.validate()
    model = UIRNet(config)
    generator = torch.Generator().manual_seed(int(seed))
    _reset_parameters(model, generator, config.zero_init_head)
    return model


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def parameter_digest(model: nn.Module) -> str:
    """SHA-256 over every parameter and buffer (names, shapes and raw bytes)."""
    h = hashlib.sha256()
    for name, tensor in sorted(_named_tensors(model).items()):
        arr = tensor.detach().cpu().contiguous().numpy()
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _named_tensors(model: nn.Module) -> dict:
    tensors = dict(model.named_parameters())
    tensors.update(model.named_buffers())
    return tensors


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]


def tensor_to_image(tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().cpu().to(torch.float32).numpy()
    return np.ascontiguousarray(arr[0].transpose(1, 2, 0))


@torch.no_grad()
def enhance(model: UIRNet, image: np.ndarray) -> np.ndarray:
    """Run the network on a single Image and return the enhanced Image."""
    image = as_image(image, min_size=8)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = model(image_to_tensor(image).to(dtype))
    model.train(was_training)
    return tensor_to_image(out)


def enhance_padded(model: UIRNet, image: np.ndarray) -> np.ndarray:
    """`enhance` for any size: reflect-pad to the downsampling multiple, then crop back."""
    image = as_image(image)
    h, w = image.shape[:2]
    f = model.config.downsampling
    ph, pw = -h % f, -w % f
    if not ph and not pw:
        return enhance(model, image)
    mode = "reflect" if ph < h and pw < w else "edge"
    padded = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=mode)
    return np.ascontiguousarray(enhance(model, padded)[:h, :w])


@dataclass
class ParameterEntry:
    values: np.ndarray
    trainable: bool


class ParameterStore:
    """Named arrays with a trainable flag each; the serialisable view of a module."""

    def __init__(self, entries: Optional[dict] = None):
        self.entries = dict(entries or {})

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParameterStore":
        entries = {}
        for name, p in module.named_parameters():
            entries[name] = ParameterEntry(p.detach().cpu().numpy().copy(), p.requires_grad)
        for name, b in module.named_buffers():
            entries[name] = ParameterEntry(b.detach().cpu().numpy().copy(), False)
        return cls(entries)

    def apply_to(self, module: nn.Module):
        own = _named_tensors(module)
        if set(own) != set(self.entries):
            missing = sorted(set(own) ^ set(self.entries))
            raise ShapeError(f"parameter names do not match the module: {missing[:5]}")
        with torch.no_grad():
            for name, tensor in own.items():
                entry = self.entries[name]
                if tuple(tensor.shape) != entry.values.shape:
                    raise ShapeError(f"{name}: shape {entry.values.shape} != {tuple(tensor.shape)}")
                tensor.copy_(torch.from_numpy(entry.values))
                if isinstance(tensor, nn.Parameter):
                    tensor.requires_grad_(entry.trainable)
        return module

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.entries):
            arr = np.ascontiguousarray(self.entries[name].values)
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(sorted(self.entries))
