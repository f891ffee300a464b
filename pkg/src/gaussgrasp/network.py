"""Generative grasp network: strided-conv encoder finishing in a deformable
convolution, residual bottleneck, and a transposed-conv decoder whose stages
are fed through global-local feature fusion, with prediction heads at 1/4,
1/2 and full resolution.

Torch supplies tensors and autograd; every layer here is built from its
primitive ops so the whole model runs in float64 for gradient checks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import GraspMaps

_CKPT_MAGIC = b"GGCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 4
    base_channels: int = 32
    num_residual_blocks: int = 5
    num_angle_bins: int = 18
    use_fusion: bool = True
    gfab_reduction: int = 4
    lfeb_depth: int = 3

    def __post_init__(self):
        if self.num_residual_blocks != 5:
            raise ValueError("the bottleneck uses exactly five residual blocks")
        if self.base_channels < self.gfab_reduction:
            raise ValueError("base_channels must be >= gfab_reduction")

    @property
    def head_channels(self) -> int:
        return 1 + self.num_angle_bins + 1

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


class HeadOutput(NamedTuple):
    """One prediction scale; quality and width are squashed to [0, 1],
    angle-class channels are left linear."""

    quality: torch.Tensor
    angle: torch.Tensor
    width: torch.Tensor


def deform_conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    offsets: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 1,
) -> torch.Tensor:
    """Convolution over a per-position displaced sampling grid.

    offsets has 2 channels per kernel tap, (dy, dx) pairs in kernel row-major
    order, on the output grid. Samples are read by bilinear interpolation and
    positions outside the input contribute zero. Differentiable in x, weight
    and offsets.
    """
    b, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise ValueError(f"weight expects {c_in} input channels, got {c}")
    n = kh * kw
    if offsets.shape[1] != 2 * n:
        raise ValueError(f"expected {2 * n} offset channels, got {offsets.shape[1]}")
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if offsets.shape[2:] != (h_out, w_out):
        raise ValueError("offset grid does not match the output grid")

    dtype = x.dtype
    base_y = torch.arange(h_out, dtype=dtype, device=x.device) * stride - padding
    base_x = torch.arange(w_out, dtype=dtype, device=x.device) * stride - padding
    tap_y = torch.arange(kh, dtype=dtype, device=x.device).repeat_interleave(kw)
    tap_x = torch.arange(kw, dtype=dtype, device=x.device).repeat(kh)

    off = offsets.view(b, n, 2, h_out, w_out)
    ys = base_y.view(1, 1, h_out, 1) + tap_y.view(1, n, 1, 1) + off[:, :, 0]
    xs = base_x.view(1, 1, 1, w_out) + tap_x.view(1, n, 1, 1) + off[:, :, 1]

    y0 = ys.floor()
    x0 = xs.floor()
    wy1 = ys - y0
    wx1 = xs - x0

    x_flat = x.reshape(b, c, h * w)
    sampled = torch.zeros(b, c, n, h_out, w_out, dtype=dtype, device=x.device)
    for yy, wy in ((y0, 1.0 - wy1), (y0 + 1.0, wy1)):
        for xx, wx in ((x0, 1.0 - wx1), (x0 + 1.0, wx1)):
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yi = yy.clamp(0, h - 1).long()
            xi = xx.clamp(0, w - 1).long()
            idx = (yi * w + xi).view(b, 1, -1).expand(b, c, -1)
            corner = x_flat.gather(2, idx).view(b, c, n, h_out, w_out)
            sampled = sampled + corner * (wy * wx * valid.to(dtype)).unsqueeze(1)

    out = torch.einsum("bcnhw,ocn->bohw", sampled, weight.reshape(c_out, c_in, n))
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformableConv2d(nn.Module):
    """Deformable 3x3 convolution with its offset predictor.

    The offset branch starts at zero weights and bias, so the layer is an
    exact plain convolution until training moves the sampling grid.
    """

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride=1, padding=padding)
        self.offset_conv = nn.Conv2d(
            in_channels, 2 * kernel_size * kernel_size, kernel_size,
            stride=stride, padding=padding,
        )
        nn.init.zeros_(self.offset_conv.weight)
        nn.init.zeros_(self.offset_conv.bias)

    def forward(self, x):
        offsets = self.offset_conv(x)
        return deform_conv2d(
            x, self.conv.weight, offsets, self.conv.bias,
            stride=self.stride, padding=self.padding,
        )


class GlobalFeatureBlock(nn.Module):
    """Channel attention: a pooled global branch gates a 1x1-conv local
    branch, followed by a fusing 1x1 conv + rectifier."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.weight_conv = nn.Conv2d(channels, channels, 1)
        self.squeeze = nn.Linear(channels, channels // reduction)
        self.excite = nn.Linear(channels // reduction, channels)
        self.local_conv = nn.Conv2d(channels, channels, 1)
        self.fuse_conv = nn.Conv2d(channels, channels, 1)

    def channel_weights(self, x):
        g = F.relu(self.weight_conv(x)).mean(dim=(2, 3))
        return torch.sigmoid(self.excite(F.relu(self.squeeze(g))))

    def forward(self, x, channel_weights=None):
        # channel_weights override is a test hook (alpha forced to ones etc.)
        alpha = self.channel_weights(x) if channel_weights is None else channel_weights
        local = F.relu(self.local_conv(x))
        return F.relu(self.fuse_conv(alpha[:, :, None, None] * local))


class LocalFeatureBlock(nn.Module):
    """Dense refinement: each 3x3 layer sees the input plus every earlier
    layer's output; a 1x1 conv + rectifier restores the channel count."""

    def __init__(self, channels, depth=3):
        super().__init__()
        growth = channels // 2
        self.layers = nn.ModuleList()
        self.dense_inputs = []  # channel count seen by each layer when dense
        acc = channels
        for _ in range(depth):
            self.dense_inputs.append(acc)
            self.layers.append(nn.Conv2d(acc, growth, 3, padding=1))
            acc += growth
        self.fuse_conv = nn.Conv2d(acc, channels, 1)
        self.chain_convs = None  # lazily built non-dense wiring for tests

    def forward(self, x, dense=True):
        if dense:
            feats = [x]
            for layer in self.layers:
                feats.append(F.relu(layer(torch.cat(feats, dim=1))))
            return F.relu(self.fuse_conv(torch.cat(feats, dim=1)))
        # Test hook: same weights, connections severed (each layer sees only
        # its predecessor, zero-padded/truncated to the expected channels).
        out = x
        feats = [x]
        for layer, c_in in zip(self.layers, self.dense_inputs):
            if out.shape[1] < c_in:
                pad = torch.zeros(
                    out.shape[0], c_in - out.shape[1], *out.shape[2:],
                    dtype=out.dtype, device=out.device,
                )
                inp = torch.cat([out, pad], dim=1)
            else:
                inp = out[:, :c_in]
            out = F.relu(layer(inp))
            feats.append(out)
        return F.relu(self.fuse_conv(torch.cat(feats, dim=1)))


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        return F.relu(x + self.bn2(self.conv2(F.relu(self.bn1(self.conv1(x))))))


class _Head(nn.Module):
    # grasp regions cover a few percent of the image; biasing the squashed
    # channels low (but not to the exact base rate, which would re-saturate
    # the sigmoid) keeps useful gradient flowing through them early on
    PRIOR_LOGIT = -1.4

    def __init__(self, in_channels, num_angle_bins):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 2 + num_angle_bins, 3, padding=1)
        self.k = num_angle_bins
        with torch.no_grad():
            self.conv.bias[0] = self.PRIOR_LOGIT
            self.conv.bias[1 + num_angle_bins] = self.PRIOR_LOGIT

    def forward(self, x) -> HeadOutput:
        raw = self.conv(x)
        return HeadOutput(
            quality=torch.sigmoid(raw[:, :1]),
            angle=raw[:, 1 : 1 + self.k],
            width=torch.sigmoid(raw[:, 1 + self.k :]),
        )


class GraspNetwork(nn.Module):
    """Encoder (stem + four stride-2 convs, the last deformable), five
    residual blocks, and a decoder of four transposed-conv stages each
    preceded by global-local fusion; heads at 1/4, 1/2 and full scale.
    Trunk convolutions are batch-normalized; the fusion blocks and heads
    keep their bare conv + rectifier structure."""

    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        b = cfg.base_channels
        widths = [b, b * 2, b * 4, b * 8, b * 8]  # after stem and each downsample

        self.stem = nn.Conv2d(cfg.input_channels, widths[0], 3, padding=1)
        self.stem_bn = nn.BatchNorm2d(widths[0])
        self.down1 = nn.Conv2d(widths[0], widths[1], 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(widths[1], widths[2], 3, stride=2, padding=1)
        self.down3 = nn.Conv2d(widths[2], widths[3], 3, stride=2, padding=1)
        self.down4 = DeformableConv2d(widths[3], widths[4], stride=2)
        self.down_bns = nn.ModuleList(nn.BatchNorm2d(c) for c in widths[1:])

        self.blocks = nn.ModuleList(ResidualBlock(widths[4]) for _ in range(cfg.num_residual_blocks))

        dec_widths = [widths[4], widths[3], widths[2], widths[1], widths[0]]
        self.fusions = nn.ModuleList()
        self.ups = nn.ModuleList()
        self.up_bns = nn.ModuleList()
        for i in range(4):
            if cfg.use_fusion:
                self.fusions.append(
                    nn.Sequential(
                        GlobalFeatureBlock(dec_widths[i], cfg.gfab_reduction),
                        LocalFeatureBlock(dec_widths[i], cfg.lfeb_depth),
                    )
                )
            else:
                self.fusions.append(nn.Identity())
            self.ups.append(nn.ConvTranspose2d(dec_widths[i], dec_widths[i + 1], 4, stride=2, padding=1))
            self.up_bns.append(nn.BatchNorm2d(dec_widths[i + 1]))

        self.heads = nn.ModuleList(
            _Head(dec_widths[i], cfg.num_angle_bins) for i in (2, 3, 4)
        )

    def forward(self, x) -> list[HeadOutput]:
        if x.shape[-1] % 16 or x.shape[-2] % 16:
            raise ValueError("input spatial size must be divisible by 16")
        f = F.relu(self.stem_bn(self.stem(x)))
        for down, bn in zip((self.down1, self.down2, self.down3, self.down4), self.down_bns):
            f = F.relu(bn(down(f)))
        for block in self.blocks:
            f = block(f)

        outputs = []
        for i in range(4):
            f = self.fusions[i](f)
            f = F.relu(self.up_bns[i](self.ups[i](f)))
            if i >= 1:  # decoder scales 1/4, 1/2, 1
                outputs.append(self.heads[i - 1](f))
        return outputs

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def output_to_maps(
    head: HeadOutput, scale: float, batch_index: int = 0
) -> GraspMaps:
    """View one batch element of a head as decodable grasp maps."""
    return GraspMaps(
        quality=head.quality[batch_index, 0].detach().cpu().numpy().astype(float),
        angle=head.angle[batch_index].detach().cpu().numpy().astype(float),
        width=head.width[batch_index, 0].detach().cpu().numpy().astype(float),
        scale=scale,
    )


def save_checkpoint(path, model: GraspNetwork, extra: dict | None = None):
    """Checkpoint container: JSON header (config, config hash, parameter
    manifest, extra metadata), NUL byte, then float32 little-endian blobs in
    manifest order."""
    state = model.state_dict()
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = {
        "format": _CKPT_MAGIC.decode(),
        "version": _CKPT_VERSION,
        "config": asdict(model.cfg),
        "config_hash": model.cfg.hash(),
        "params": manifest,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode())
        f.write(b"\0")
        for item in manifest:
            blob = state[item["name"]].detach().cpu().numpy().astype("<f4")
            f.write(blob.tobytes())


def load_checkpoint(path) -> tuple[GraspNetwork, dict]:
    """Rebuild a model from a checkpoint, validating every parameter shape
    against the stored config."""
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.index(b"\0")
    header = json.loads(raw[:sep])
    if header.get("format") != _CKPT_MAGIC.decode():
        raise ValueError(f"{path}: not a grasp checkpoint")
    cfg = NetworkConfig(**header["config"])
    if header["config_hash"] != cfg.hash():
        raise ValueError(f"{path}: config hash mismatch")
    model = GraspNetwork(cfg)
    expected = model.state_dict()

    offset = sep + 1
    state = {}
    for item in header["params"]:
        name, shape = item["name"], tuple(item["shape"])
        if name not in expected:
            raise ValueError(f"{path}: unknown parameter {name}")
        if tuple(expected[name].shape) != shape:
            raise ValueError(
                f"{path}: shape mismatch for {name}: "
                f"{shape} vs {tuple(expected[name].shape)}"
            )
        count = int(np.prod(shape)) if shape else 1
        blob = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        state[name] = torch.from_numpy(blob.reshape(shape).copy())
    missing = set(expected) - set(state)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    model.load_state_dict(state)
    return model, header["extra"]
