"""Weight-shared triple encoder, per-task voting gates and task heads.

Each of the three en-face inputs gets its own first convolutional block; the
rest of the encoder is a single module applied to all three, so weights are
shared by construction. Per-task voting gate modules read the concatenated
first-block activations and produce one gate channel per encoder, which
weights the encoders' multi-scale fused features before they reach the
task head.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import DEFAULT_CELL_SIZE
from .errors import GeometryError, RangeError

TASKS = ("rv", "faz", "rvj")
FUSION_MODES = ("vgm", "max", "min", "avg", "sum")
INPUT_MODES = ("multi_enface", "single_ivc", "triplicate")
TOPOLOGIES = ("resnet50", "reduced")
INIT_SCHEMES = ("random", "xavier", "he")

# CLI spellings
INPUT_MODE_ALIASES = {"multi": "multi_enface", "single": "single_ivc", "triplicate": "triplicate"}


@dataclass
class EncoderConfig:
    topology: str = "resnet50"
    n_ch: int = 64
    input_mode: str = "multi_enface"
    first_layer_init: tuple[str, str, str] | None = None
    gate_hidden: int = 32

    def __post_init__(self):
        self.input_mode = INPUT_MODE_ALIASES.get(self.input_mode, self.input_mode)
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.first_layer_init is None:
            # identical inputs need distinct first blocks to diversify encoders
            self.first_layer_init = (
                ("random", "xavier", "he") if self.input_mode == "triplicate" else ("he", "he", "he")
            )
        self.first_layer_init = tuple(self.first_layer_init)
        if len(self.first_layer_init) != 3 or any(s not in INIT_SCHEMES for s in self.first_layer_init):
            raise ValueError(f"first_layer_init must name three of {INIT_SCHEMES}")

    @property
    def first_channels(self) -> int:
        return 64 if self.topology == "resnet50" else 16


@dataclass
class NetworkOutput:
    rv_prob: torch.Tensor  # [B, H, W]
    faz_prob: torch.Tensor  # [B, H, W]
    rvj_heatmap: torch.Tensor  # [B, H, W]
    rvj_grid: torch.Tensor  # [B, S, S, 4]
    gates: dict[str, torch.Tensor] = field(default_factory=dict)

    def numpy(self, index: int = 0) -> "NetworkOutput":
        """Detach one batch element into numpy arrays."""
        pick = lambda t: t[index].detach().cpu().numpy()
        return NetworkOutput(
            rv_prob=pick(self.rv_prob),
            faz_prob=pick(self.faz_prob),
            rvj_heatmap=pick(self.rvj_heatmap),
            rvj_grid=pick(self.rvj_grid),
            gates={k: pick(v) for k, v in self.gates.items()},
        )


def conv_bn_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def _init_conv(conv: nn.Conv2d, scheme: str) -> None:
    if scheme == "random":
        nn.init.normal_(conv.weight, 0.0, 0.01)
    elif scheme == "xavier":
        nn.init.xavier_uniform_(conv.weight)
    else:
        nn.init.kaiming_normal_(conv.weight, mode="fan_out", nonlinearity="relu")


class FirstBlock(nn.Module):
    """Per-encoder 3x3 stem at full resolution."""

    def __init__(self, out_channels: int, init: str = "he"):
        super().__init__()
        self.conv = nn.Conv2d(1, out_channels, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)
        _init_conv(self.conv, init)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + (x if self.down is None else self.down(x)))


class ReducedTrunk(nn.Module):
    """Four residual stages, widths (16, 32, 64, 128), strides (1, 2, 2, 2)."""

    widths = (16, 32, 64, 128)

    def __init__(self, in_channels: int = 16):
        super().__init__()
        stages, cin = [], in_channels
        for i, w in enumerate(self.widths):
            stages.append(BasicBlock(cin, w, stride=1 if i == 0 else 2))
            cin = w
        self.stages = nn.ModuleList(stages)

    def forward(self, x) -> list[torch.Tensor]:
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


class ResNet50Trunk(nn.Module):
    """ResNet-50 body after the stem: max-pool then layer1..layer4."""

    widths = (256, 512, 1024, 2048)

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        base = resnet50(weights=None)
        self.pool = base.maxpool
        self.stages = nn.ModuleList([base.layer1, base.layer2, base.layer3, base.layer4])

    def forward(self, x) -> list[torch.Tensor]:
        x = self.pool(x)
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


class SharedEncoder(nn.Module):
    """Trunk plus 1x1 projections; stage maps are upsampled and summed into F_i."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.trunk = ReducedTrunk(cfg.first_channels) if cfg.topology == "reduced" else ResNet50Trunk()
        self.proj = nn.ModuleList(nn.Conv2d(w, cfg.n_ch, 1) for w in self.trunk.widths)

    def forward(self, x):
        size = x.shape[-2:]
        fused = None
        for proj, stage in zip(self.proj, self.trunk(x)):
            y = proj(stage)
            if y.shape[-2:] != size:
                y = F.interpolate(y, size=size, mode="bilinear", align_corners=False)
            fused = y if fused is None else fused + y
        return fused


class VotingGate(nn.Module):
    """Conv-BN-ReLU stack ending in a 3-channel sigmoid gate."""

    def __init__(self, in_channels: int, hidden: int = 32, n_inputs: int = 3):
        super().__init__()
        self.body = nn.Sequential(
            conv_bn_relu(in_channels, hidden),
            conv_bn_relu(hidden, hidden),
            conv_bn_relu(hidden, hidden),
        )
        self.out = nn.Conv2d(hidden, n_inputs, 3, padding=1)

    def forward(self, first_layer_outputs: Sequence[torch.Tensor]):
        shapes = {tuple(t.shape) for t in first_layer_outputs}
        if len(shapes) != 1:
            raise GeometryError(f"first-layer maps differ in shape: {sorted(shapes)}")
        x = torch.cat(list(first_layer_outputs), dim=1)
        return torch.sigmoid(self.out(self.body(x)))


def fuse(gate: torch.Tensor | None, features: Sequence[torch.Tensor], mode: str = "vgm") -> torch.Tensor:
    """Combine per-encoder features into one task feature map.

    In ``vgm`` mode gate channel i (``[B, 3, H, W]``) scales every channel of
    ``features[i]`` and the results are summed. The other modes reduce the
    features elementwise and ignore the gate.
    """
    if mode == "vgm":
        if gate is None:
            raise ValueError("vgm fusion needs a gate")
        if gate.shape[1] != len(features):
            raise GeometryError(f"gate has {gate.shape[1]} channels for {len(features)} feature maps")
        out = gate[:, 0:1] * features[0]
        for i in range(1, len(features)):
            out = out + gate[:, i : i + 1] * features[i]
        return out
    stacked = torch.stack(list(features), dim=0)
    if mode == "sum":
        return stacked.sum(0)
    if mode == "avg":
        return stacked.mean(0)
    if mode == "max":
        return stacked.amax(0)
    if mode == "min":
        return stacked.amin(0)
    raise ValueError(f"unknown fusion mode {mode!r}")


class SegmentationHead(nn.Module):
    def __init__(self, n_ch: int):
        super().__init__()
        self.body = nn.Sequential(conv_bn_relu(n_ch, n_ch), conv_bn_relu(n_ch, n_ch))
        self.out = nn.Conv2d(n_ch, 1, 1)

    def forward(self, m):
        return torch.sigmoid(self.out(self.body(m)))[:, 0]


class JunctionHead(nn.Module):
    """Heatmap branch at full resolution plus a strided grid branch."""

    def __init__(self, n_ch: int, cell_size: int = DEFAULT_CELL_SIZE):
        super().__init__()
        n_down = int(round(math.log2(cell_size)))
        if 2**n_down != cell_size:
            raise ValueError("cell_size must be a power of two")
        self.heatmap = SegmentationHead(n_ch)
        self.grid_body = nn.Sequential(*[conv_bn_relu(n_ch, n_ch, stride=2) for _ in range(n_down)])
        self.grid_out = nn.Conv2d(n_ch, 4, 1)

    def forward(self, m):
        heat = self.heatmap(m)
        grid = torch.sigmoid(self.grid_out(self.grid_body(m)))
        return heat, grid.permute(0, 2, 3, 1)


class VAFFNet(nn.Module):
    def __init__(self, cfg: EncoderConfig | None = None, fusion_mode: str = "vgm", cell_size: int = DEFAULT_CELL_SIZE):
        super().__init__()
        cfg = cfg or EncoderConfig()
        if fusion_mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {fusion_mode!r}")
        self.cfg = cfg
        self.fusion_mode = fusion_mode
        self.cell_size = cell_size
        c1 = cfg.first_channels
        self.first_blocks = nn.ModuleList(FirstBlock(c1, init) for init in cfg.first_layer_init)
        self.encoder = SharedEncoder(cfg)
        self.gates = nn.ModuleDict({t: VotingGate(3 * c1, cfg.gate_hidden) for t in TASKS})
        self.rv_head = SegmentationHead(cfg.n_ch)
        self.faz_head = SegmentationHead(cfg.n_ch)
        self.rvj_head = JunctionHead(cfg.n_ch, cell_size)

    def manifest(self) -> dict:
        return {
            "topology": self.cfg.topology,
            "n_ch": self.cfg.n_ch,
            "input_mode": self.cfg.input_mode,
            "first_layer_init": list(self.cfg.first_layer_init),
            "gate_hidden": self.cfg.gate_hidden,
            "fusion_mode": self.fusion_mode,
            "cell_size": self.cell_size,
        }

    def _select_inputs(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise GeometryError(f"expected a [B, 3, H, W] triplet batch, got {tuple(x.shape)}")
        if self.cfg.input_mode == "multi_enface":
            return [x[:, i : i + 1] for i in range(3)]
        ivc = x[:, 0:1]
        return [ivc, ivc, ivc]

    def encode(self, x: torch.Tensor) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        """Return (fused features F_1..F_3, first-block activations)."""
        if x.numel() and (float(x.min()) < 0.0 or float(x.max()) > 1.0):
            raise RangeError("input triplet must be normalized to [0, 1]")
        inputs = self._select_inputs(x)
        first = [blk(inp) for blk, inp in zip(self.first_blocks, inputs)]
        b = x.shape[0]
        # one pass through the shared encoder for all three streams
        fused = self.encoder(torch.cat(first, dim=0))
        return list(fused.split(b, dim=0)), first

    def vgm_forward(self, first_layer_outputs: Sequence[torch.Tensor], task: str) -> torch.Tensor:
        return self.gates[task](first_layer_outputs)

    def forward(self, x: torch.Tensor) -> NetworkOutput:
        features, first = self.encode(x)
        task_maps, gates = {}, {}
        for task in TASKS:
            gate = self.vgm_forward(first, task) if self.fusion_mode == "vgm" else None
            if gate is not None:
                gates[task] = gate
            task_maps[task] = fuse(gate, features, self.fusion_mode)
        heat, grid = self.rvj_head(task_maps["rvj"])
        return NetworkOutput(
            rv_prob=self.rv_head(task_maps["rv"]),
            faz_prob=self.faz_head(task_maps["faz"]),
            rvj_heatmap=heat,
            rvj_grid=grid,
            gates=gates,
        )

    def encoder_parameters(self, index: int) -> dict[str, torch.Tensor]:
        """Named parameters making up encoder ``index`` (first block plus shared body)."""
        params = {f"first.{k}": v for k, v in self.first_blocks[index].named_parameters()}
        params.update({f"body.{k}": v for k, v in self.encoder.named_parameters()})
        return params


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def independent_encoder_parameter_count(cfg: EncoderConfig) -> int:
    """Parameters three fully separate encoders of the same topology would need."""
    net = VAFFNet(cfg)
    return 3 * (count_parameters(net.first_blocks[0]) + count_parameters(net.encoder))


def triplet_tensor(triplets, device=None) -> torch.Tensor:
    """Stack EnfaceTriplet objects (or ``[3, H, W]`` arrays) into a float batch."""
    arrays = [t.stack() if hasattr(t, "stack") else np.asarray(t) for t in triplets]
    return torch.as_tensor(np.stack(arrays).astype(np.float32), device=device)


@torch.no_grad()
def predict_triplet(model: VAFFNet, triplet) -> NetworkOutput:
    """Evaluation-mode forward pass on one triplet; numpy output."""
    was_training = model.training
    model.eval()
    try:
        out = model(triplet_tensor([triplet]))
    finally:
        model.train(was_training)
    return out.numpy(0)


def build_model(cfg: EncoderConfig | None = None, fusion_mode: str = "vgm", cell_size: int = DEFAULT_CELL_SIZE) -> VAFFNet:
    return VAFFNet(cfg, fusion_mode=fusion_mode, cell_size=cell_size)


def config_dict(cfg: EncoderConfig) -> dict:
    d = asdict(cfg)
    d["first_layer_init"] = list(cfg.first_layer_init)
    return d
