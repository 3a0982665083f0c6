"""Heatmap networks: a shared encoder-decoder architecture for the global
network and the eye/nose/mouth region networks.

The decoder uses bicubic upsampling followed by 3x3 convolutions instead of
transpose convolutions, which keeps the predicted heatmaps smooth. All
networks emit logits at the input resolution; coordinates are extracted
with the spatial softargmax.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .landmarks import MIRROR_INDICES, NUM_LANDMARKS, REGION_GROUPS

# input channels = 3 (RGB) + N_r fused feature channels for region networks
NETWORK_CHANNELS = {
    "global": (3, NUM_LANDMARKS),
    "eye": (3 + 11, 11),
    "nose": (3 + 9, 9),
    "mouth": (3 + 20, 20),
}

# One eye network serves both eye regions: right-eye crops are mirrored
# into left-eye orientation, so the net's channel order is the left region's.
EYE_CANONICAL_ORDER = list(REGION_GROUPS["left_eye_region"])
EYE_MIRROR_ORDER = [int(MIRROR_INDICES[i]) for i in EYE_CANONICAL_ORDER]

REGION_NET_KIND = {
    "left_eye_region": "eye",
    "right_eye_region": "eye",
    "nose": "nose",
    "mouth": "mouth",
}


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.body(x)


class HeatmapNet(nn.Module):
    """ResNet-bottleneck encoder-decoder emitting one logit map per landmark."""

    def __init__(self, in_channels: int, out_channels: int,
                 base_width: int = 64, num_blocks: int = 6):
        super().__init__()
        w = base_width
        self.stem = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, w, kernel_size=7),
            nn.InstanceNorm2d(w),
            nn.ReLU(inplace=True),
        )
        self.down1 = nn.Sequential(
            nn.Conv2d(w, w * 2, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(w * 2),
            nn.ReLU(inplace=True),
        )
        self.down2 = nn.Sequential(
            nn.Conv2d(w * 2, w * 4, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(w * 4),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(*[ResidualBlock(w * 4) for _ in range(num_blocks)])
        self.up1 = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="bicubic", align_corners=False),
            nn.Conv2d(w * 4, w * 2, kernel_size=3, padding=1),
            nn.InstanceNorm2d(w * 2),
            nn.ReLU(inplace=True),
        )
        self.up2 = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="bicubic", align_corners=False),
            nn.Conv2d(w * 2, w, kernel_size=3, padding=1),
            nn.InstanceNorm2d(w),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(w, out_channels, kernel_size=1)

    def forward(self, x):
        x = self.stem(x)
        x = self.down1(x)
        x = self.down2(x)
        x = self.blocks(x)
        x = self.up1(x)
        x = self.up2(x)
        return self.head(x)


def build_global(base_width: int = 64, num_blocks: int = 6) -> HeatmapNet:
    cin, cout = NETWORK_CHANNELS["global"]
    return HeatmapNet(cin, cout, base_width, num_blocks)


def build_region(kind: str, base_width: int = 64, num_blocks: int = 6) -> HeatmapNet:
    if kind not in ("eye", "nose", "mouth"):
        raise ValueError(f"unknown region network kind {kind!r}")
    cin, cout = NETWORK_CHANNELS[kind]
    return HeatmapNet(cin, cout, base_width, num_blocks)


def region_output_indices(kind: str) -> list[int]:
    """Global landmark indices carried by a region network's output channels."""
    if kind == "eye":
        return EYE_CANONICAL_ORDER
    if kind == "nose":
        return list(REGION_GROUPS["nose"])
    if kind == "mouth":
        return list(REGION_GROUPS["mouth"])
    raise ValueError(f"unknown region network kind {kind!r}")


@torch.no_grad()
def init_region_from_global(global_net: HeatmapNet, kind: str) -> HeatmapNet:
    """Build a region network initialized from trained global weights.

    All layers with matching shapes are copied. The first convolution's
    extra input channels (the fused feature maps) start as the mean of the
    RGB filters scaled by 1/N_r; the final projection keeps only the
    region's own output channels.
    """
    width = global_net.head.in_channels
    num_blocks = len(global_net.blocks)
    region = build_region(kind, base_width=width, num_blocks=num_blocks)

    g_state = global_net.state_dict()
    r_state = region.state_dict()
    for key, g_val in g_state.items():
        if key in r_state and r_state[key].shape == g_val.shape:
            r_state[key] = g_val.clone()
    region.load_state_dict(r_state)

    n_r = NETWORK_CHANNELS[kind][1]
    g_first = global_net.stem[1]
    r_first = region.stem[1]
    if r_first.weight.shape[1] != 3 + n_r:
        raise RuntimeError(
            f"{kind}: first-layer channel bookkeeping mismatch "
            f"({r_first.weight.shape[1]} != {3 + n_r})"
        )
    r_first.weight[:, :3] = g_first.weight
    mean_rgb = g_first.weight.mean(dim=1, keepdim=True) / n_r
    r_first.weight[:, 3:] = mean_rgb.expand(-1, n_r, -1, -1)
    r_first.bias.copy_(g_first.bias)

    idx = region_output_indices(kind)
    if region.head.weight.shape[0] != len(idx):
        raise RuntimeError(
            f"{kind}: head channel bookkeeping mismatch "
            f"({region.head.weight.shape[0]} != {len(idx)})"
        )
    region.head.weight.copy_(global_net.head.weight[idx])
    region.head.bias.copy_(global_net.head.bias[idx])
    return region


# ---------------------------------------------------------------------------
# Model bundle
# ---------------------------------------------------------------------------

BUNDLE_FORMAT_VERSION = 1


@dataclass
class BundleConfig:
    base_width: int = 64
    num_blocks: int = 6
    patch_size: int = 256
    hr_size: int = 1024
    temperature: float = 1.0
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "base_width": self.base_width, "num_blocks": self.num_blocks,
            "patch_size": self.patch_size, "hr_size": self.hr_size,
            "temperature": self.temperature, "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BundleConfig":
        return cls(**{k: d[k] for k in
                      ("base_width", "num_blocks", "patch_size", "hr_size",
                       "temperature", "fingerprint") if k in d})


@dataclass
class ModelBundle:
    """The global network plus the three region network types.

    The eye network is shared between the two eye regions (right-eye crops
    are mirrored into the eye net's canonical left orientation), so the
    five logical sub-networks map onto four weight sets.
    """

    global_net: nn.Module
    eye_net: nn.Module
    nose_net: nn.Module
    mouth_net: nn.Module
    config: BundleConfig = field(default_factory=BundleConfig)

    def net_for(self, region_name: str) -> nn.Module:
        kind = REGION_NET_KIND[region_name]
        return {"eye": self.eye_net, "nose": self.nose_net, "mouth": self.mouth_net}[kind]

    def modules(self) -> dict[str, nn.Module]:
        return {"global": self.global_net, "eye": self.eye_net,
                "nose": self.nose_net, "mouth": self.mouth_net}

    def eval_(self) -> "ModelBundle":
        for m in self.modules().values():
            if isinstance(m, nn.Module):
                m.eval()
        return self

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        weights = {}
        for name, module in self.modules().items():
            fname = f"{name}.pt"
            torch.save(module.state_dict(), directory / fname)
            weights[name] = fname
        manifest = {
            "format_version": BUNDLE_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "region_landmarks": {name: len(idx) for name, idx in REGION_GROUPS.items()},
            "networks": {
                "global": weights["global"],
                "left_eye_region": weights["eye"],
                "right_eye_region": weights["eye"],
                "nose": weights["nose"],
                "mouth": weights["mouth"],
            },
        }
        (directory / "bundle.json").write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, directory, map_location="cpu") -> "ModelBundle":
        directory = Path(directory)
        manifest_path = directory / "bundle.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"{directory}: no bundle.json found")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format_version") != BUNDLE_FORMAT_VERSION:
            raise ValueError(f"{directory}: unsupported bundle format "
                             f"{manifest.get('format_version')}")
        config = BundleConfig.from_dict(manifest["config"])
        nets = {}
        for name in ("global", "eye", "nose", "mouth"):
            key = "global" if name == "global" else {
                "eye": "left_eye_region", "nose": "nose", "mouth": "mouth"}[name]
            fname = manifest["networks"][key]
            if name == "global":
                net = build_global(config.base_width, config.num_blocks)
            else:
                net = build_region(name, config.base_width, config.num_blocks)
            state = torch.load(directory / fname, map_location=map_location,
                               weights_only=True)
            net.load_state_dict(state)
            net.eval()
            nets[name] = net
        return cls(nets["global"], nets["eye"], nets["nose"], nets["mouth"], config)


def new_bundle(base_width: int = 64, num_blocks: int = 6, patch_size: int = 256,
               hr_size: int = 1024, temperature: float = 1.0,
               from_global: nn.Module | None = None) -> ModelBundle:
    """Fresh bundle; region nets are copied from ``from_global`` when given."""
    global_net = from_global if from_global is not None else build_global(base_width, num_blocks)
    if from_global is not None:
        regions = {k: init_region_from_global(from_global, k) for k in ("eye", "nose", "mouth")}
    else:
        regions = {k: build_region(k, base_width, num_blocks) for k in ("eye", "nose", "mouth")}
    config = BundleConfig(base_width, num_blocks, patch_size, hr_size, temperature)
    return ModelBundle(global_net, regions["eye"], regions["nose"], regions["mouth"], config)


def config_fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
