"""Training loop, checkpoints, evaluation, prediction and ablation runs."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import yaml

from . import __version__
from .codec import DecodeParams, encode_grid, encode_heatmap
from .data import AugmentParams, Sample, augment, load_split, load_triplet, read_split, save_sample, to_uint8, write_junctions, write_split
from .errors import IncompatibleCheckpoint, NoDataError, NumericDivergence, NumericError
from .losses import DwaState, GridLossParams, TaskLossVector, bce_loss, dwa_update, grid_loss, mse_heatmap_loss, total_loss
from .metrics import MetricsReport, evaluate_sample, format_table, summarize, write_report
from .network import INPUT_MODE_ALIASES, EncoderConfig, VAFFNet, predict_triplet, triplet_tensor
from .phantom import PhantomConfig, generate_phantom

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
LOG_NAME = "train_log.jsonl"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 4
    lr_initial: float = 5e-5
    fusion_mode: str = "vgm"
    input_mode: str = "multi_enface"
    seed: int = 0
    dataset_root: str = "data"
    checkpoint_dir: str = "runs/vaffnet"
    topology: str = "resnet50"
    n_ch: int = 64
    gate_hidden: int = 32
    first_layer_init: list[str] | None = None
    cell_size: int = 8
    heatmap_sigma: float = 2.5
    augment: bool = True
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation_range_deg: tuple[float, float] = (-10.0, 10.0)
    gamma_range: tuple[float, float] = (0.7, 1.9)
    lambda_a: float = 5.0
    lambda_b: float = 1.0
    grid_class_term: str = "all"
    dwa_temperature: float = 2.0
    checkpoint_every: int = 50
    train_split: str = "train"
    eval_split: str = "test"
    channels_last: bool = True

    def __post_init__(self):
        self.input_mode = INPUT_MODE_ALIASES.get(self.input_mode, self.input_mode)
        self.rotation_range_deg = tuple(self.rotation_range_deg)
        self.gamma_range = tuple(self.gamma_range)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TrainConfig":
        """Load a YAML (or JSON) config; ``VAFF_SEED`` overrides the seed."""
        with open(path) as fh:
            d = yaml.safe_load(fh) or {}
        cfg = cls.from_dict(d)
        if os.environ.get("VAFF_SEED"):
            cfg.seed = int(os.environ["VAFF_SEED"])
        return cfg

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rotation_range_deg"] = list(self.rotation_range_deg)
        d["gamma_range"] = list(self.gamma_range)
        return d

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            topology=self.topology,
            n_ch=self.n_ch,
            input_mode=self.input_mode,
            first_layer_init=self.first_layer_init,
            gate_hidden=self.gate_hidden,
        )

    def augment_params(self) -> AugmentParams:
        return AugmentParams(self.hflip_prob, self.vflip_prob, self.rotation_range_deg, self.gamma_range)

    def grid_params(self) -> GridLossParams:
        return GridLossParams(self.lambda_a, self.lambda_b, self.grid_class_term)


def cosine_lr(epoch: int, epochs: int, lr_initial: float) -> float:
    """Cosine annealing from ``lr_initial`` at epoch 0 to zero at ``epochs``."""
    return lr_initial * (1.0 + math.cos(math.pi * epoch / epochs)) / 2.0


# --------------------------------------------------------------------------
# checkpoints


def make_manifest(model: VAFFNet) -> dict:
    return {**model.manifest(), "format_version": CHECKPOINT_FORMAT_VERSION}


def build_model(cfg: TrainConfig) -> VAFFNet:
    model = VAFFNet(cfg.encoder_config(), fusion_mode=cfg.fusion_mode, cell_size=cfg.cell_size)
    if cfg.channels_last:
        model = model.to(memory_format=torch.channels_last)
    return model


def save_checkpoint(path: str | os.PathLike, model: VAFFNet, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"manifest": make_manifest(model), "model": model.state_dict(), **extra}
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(path: str | os.PathLike) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def load_model(path: str | os.PathLike, expect: dict | None = None) -> tuple[VAFFNet, dict]:
    """Rebuild the model stored at ``path``.

    ``expect`` maps manifest keys to required values; any mismatch raises
    :class:`IncompatibleCheckpoint`.
    """
    payload = read_checkpoint(path)
    manifest = payload.get("manifest")
    if not manifest or manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise IncompatibleCheckpoint(f"incompatible checkpoint {path}: unknown format")
    for key, want in (expect or {}).items():
        if key == "input_mode":
            want = INPUT_MODE_ALIASES.get(want, want)
        if manifest.get(key) != want:
            raise IncompatibleCheckpoint(
                f"incompatible checkpoint {path}: {key}={manifest.get(key)!r}, expected {want!r}"
            )
    cfg = EncoderConfig(
        topology=manifest["topology"],
        n_ch=manifest["n_ch"],
        input_mode=manifest["input_mode"],
        first_layer_init=tuple(manifest["first_layer_init"]),
        gate_hidden=manifest["gate_hidden"],
    )
    model = VAFFNet(cfg, fusion_mode=manifest["fusion_mode"], cell_size=manifest["cell_size"])
    model.load_state_dict(payload["model"])
    model.eval()
    return model, payload


# --------------------------------------------------------------------------
# training


def sample_targets(sample: Sample, cfg: TrainConfig) -> dict[str, np.ndarray]:
    h, w = sample.shape
    ann = sample.annotations
    return {
        "vessel": ann.vessel_mask.astype(np.float32),
        "faz": ann.faz_mask.astype(np.float32),
        "heatmap": encode_heatmap(ann.junctions, h, w, cfg.heatmap_sigma),
        "grid": encode_grid(ann.junctions, h, w, cfg.cell_size),
    }


def _batch(samples: Sequence[Sample], cfg: TrainConfig):
    x = triplet_tensor([s.triplet for s in samples])
    if cfg.channels_last:
        x = x.contiguous(memory_format=torch.channels_last)
    targets = [sample_targets(s, cfg) for s in samples]
    y = {k: torch.as_tensor(np.stack([t[k] for t in targets])) for k in targets[0]}
    return x, y


def compute_losses(out, y, grid_params: GridLossParams) -> TaskLossVector:
    return TaskLossVector(
        l_rv=bce_loss(out.rv_prob, y["vessel"]),
        l_faz=bce_loss(out.faz_prob, y["faz"]),
        l_rvj_heatmap=mse_heatmap_loss(out.rvj_heatmap, y["heatmap"]),
        l_rvj_grid=grid_loss(out.rvj_grid, y["grid"], grid_params),
    )


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _write_log(path: Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def read_log(path: str | os.PathLike) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def train(
    cfg: TrainConfig,
    resume: str | os.PathLike | None = None,
    stop_after: int | None = None,
    samples: Sequence[Sample] | None = None,
) -> Path:
    """Run the training recipe and return the path of the last checkpoint.

    ``resume`` continues from a checkpoint written by a previous run with
    the same config. ``stop_after`` ends the run after that many completed
    epochs (used to simulate interruption). ``samples`` bypasses loading the
    training split from ``cfg.dataset_root``.
    """
    if samples is None:
        samples = load_split(cfg.dataset_root, cfg.train_split)
    samples = list(samples)
    if not samples:
        raise NoDataError(f"no data: split {cfg.train_split!r} under {cfg.dataset_root} is empty")

    out_dir = Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / LOG_NAME

    torch.manual_seed(cfg.seed)
    model = build_model(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_initial, betas=ADAM_BETAS, eps=ADAM_EPS)
    rng = np.random.default_rng(cfg.seed)
    dwa = DwaState(n_tasks=3, temperature=cfg.dwa_temperature)
    start_epoch = 0

    if resume is not None:
        payload = read_checkpoint(resume)
        if payload["manifest"] != make_manifest(model):
            raise IncompatibleCheckpoint(f"incompatible checkpoint {resume}: manifest differs from config")
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        rng.bit_generator.state = payload["rng_state"]
        torch.set_rng_state(payload["torch_rng_state"])
        dwa = DwaState.from_dict(payload["dwa"])
        start_epoch = payload["epoch"]
    else:
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(
                {"config": cfg.to_dict(), "code_version": __version__, "seed": cfg.seed, "log": LOG_NAME},
                fh,
                indent=1,
            )
        log_path.unlink(missing_ok=True)

    aug = cfg.augment_params()
    grid_params = cfg.grid_params()
    last_path = out_dir / "last.pt"
    end_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)

    model.train()
    for epoch in range(start_epoch, end_epoch):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_initial)
        for group in optimizer.param_groups:
            group["lr"] = lr

        order = rng.permutation(len(samples))
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            if cfg.augment:
                batch = [augment(s, aug, rng) for s in batch]
            x, y = _batch(batch, cfg)
            out = model(x)
            parts = compute_losses(out, y, grid_params)
            try:
                loss = total_loss(parts, dwa)
            except NumericError as exc:
                raise NumericDivergence(f"numeric divergence at epoch {epoch}: {exc}") from exc
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            sums += len(batch) * np.array(list(parts.as_floats().values()))

        means = dict(zip(("rv", "faz", "rvj_heatmap", "rvj_grid"), (sums / len(samples)).tolist()))
        _write_log(
            log_path,
            {"epoch": epoch, "lr": lr, "losses": means, "weights": list(dwa.weights)},
        )
        dwa = dwa_update(dwa, [means["rv"], means["faz"], means["rvj_heatmap"] + means["rvj_grid"]])

        done = epoch + 1
        if done % cfg.checkpoint_every == 0 or done == end_epoch:
            extra = {
                "optimizer": optimizer.state_dict(),
                "rng_state": _rng_state(rng),
                "torch_rng_state": torch.get_rng_state(),
                "dwa": dwa.to_dict(),
                "epoch": done,
                "config": cfg.to_dict(),
            }
            path = save_checkpoint(out_dir / f"epoch_{done:05d}.pt", model, **extra)
            shutil.copyfile(path, last_path)
            log.info("epoch %d: checkpoint %s", done, path)
    return last_path


# --------------------------------------------------------------------------
# evaluation and prediction


def evaluate_model(
    model: VAFFNet,
    samples: Sequence[Sample],
    decode_params: DecodeParams = DecodeParams(),
    seg_threshold: float = 0.5,
) -> list[MetricsReport]:
    reports = []
    for s in samples:
        out = predict_triplet(model, s.triplet)
        reports.append(
            evaluate_sample(out, s.annotations, decode_params, seg_threshold, model.cell_size, sample_id=s.id)
        )
    return reports


def evaluate(
    checkpoint: str | os.PathLike,
    dataset_root: str | os.PathLike,
    split: str = "test",
    out_path: str | os.PathLike | None = None,
    input_mode: str | None = None,
    decode_params: DecodeParams = DecodeParams(),
) -> tuple[list[MetricsReport], Path]:
    """Score a checkpoint on a dataset split and write the report file."""
    expect = {"input_mode": input_mode} if input_mode else None
    model, _ = load_model(checkpoint, expect)
    samples = load_split(dataset_root, split)
    if not samples:
        raise NoDataError(f"no data: split {split!r} under {dataset_root} is empty")
    reports = evaluate_model(model, samples, decode_params)
    if out_path is None:
        out_path = Path(checkpoint).with_name(f"report_{split}.tsv")
    return reports, write_report(out_path, reports)


def predict(
    checkpoint: str | os.PathLike,
    sample_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    decode_params: DecodeParams = DecodeParams(),
) -> Path:
    from PIL import Image

    from .codec import decode

    model, _ = load_model(checkpoint)
    out = predict_triplet(model, load_triplet(sample_dir))
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in (("rv_prob", out.rv_prob), ("faz_prob", out.faz_prob), ("heatmap", out.rvj_heatmap)):
        Image.fromarray(to_uint8(arr), mode="L").save(d / f"{name}.png")
    np.save(d / "grid.npy", out.rvj_grid)
    write_junctions(d / "junctions.json", decode(out.rvj_heatmap, out.rvj_grid, decode_params, model.cell_size))
    return d


# --------------------------------------------------------------------------
# synthetic datasets and ablations


def synth(
    count: int,
    phantom: PhantomConfig,
    out_root: str | os.PathLike,
    test_fraction: float = 0.25,
) -> Path:
    """Write ``count`` phantoms (seeds ``phantom.rng_seed + i``) plus split files."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        cfg = dataclasses.replace(phantom, rng_seed=phantom.rng_seed + i)
        sample = generate_phantom(cfg, sample_id=f"sample_{i:04d}")
        save_sample(sample, root / sample.id)
        ids.append(sample.id)
    n_test = int(round(count * test_fraction))
    write_split(root, "train", ids[: count - n_test])
    write_split(root, "test", ids[count - n_test :])
    return root


def ablate(
    cfg: TrainConfig,
    modes: Sequence[str] = ("vgm", "max", "min", "avg", "sum"),
    input_modes: Sequence[str] | None = None,
    out_path: str | os.PathLike | None = None,
) -> tuple[str, dict[str, dict]]:
    """Train and evaluate one run per fusion mode (and input mode, if given).

    Returns the rendered table and the per-run summaries.
    """
    split = cfg.eval_split if read_split(cfg.dataset_root, cfg.eval_split) else cfg.train_split
    samples = load_split(cfg.dataset_root, split)
    rows: dict[str, dict] = {}
    for input_mode in input_modes or [cfg.input_mode]:
        input_mode = INPUT_MODE_ALIASES.get(input_mode, input_mode)
        for mode in modes:
            name = mode.upper() if not input_modes else f"{mode.upper()} / {input_mode}"
            run_dir = Path(cfg.checkpoint_dir) / (mode if not input_modes else f"{mode}_{input_mode}")
            run_cfg = dataclasses.replace(cfg, fusion_mode=mode, input_mode=input_mode, checkpoint_dir=str(run_dir))
            ckpt = train(run_cfg)
            model, _ = load_model(ckpt)
            reports = evaluate_model(model, samples)
            write_report(run_dir / f"report_{split}.tsv", reports)
            rows[name] = summarize(reports)
    table = format_table(rows)
    out_path = Path(out_path) if out_path else Path(cfg.checkpoint_dir) / "ablation.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(table)
    return table, rows
