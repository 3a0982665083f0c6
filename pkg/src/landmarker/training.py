"""Coordinate loss, learning-rate schedule, and the two training phases.

Phase 1 trains the global network alone on downsized images. Phase 2
initializes the region networks from the global weights and trains all
networks jointly; region crops are computed from the current global
predictions with randomized padding so the training distribution matches
inference.
"""
from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .heatmaps import spatial_softargmax
from .landmarks import NUM_LANDMARKS
from .networks import BundleConfig, ModelBundle, new_bundle
from .pipeline import compute_crops, downscale_tensor, image_to_tensor, region_forward
from .regions import global_to_local


@dataclass
class TrainingConfig:
    """Schedule for one training phase.

    The learning rate is constant until ``decay_start`` and then falls
    linearly to exactly 0 at the final epoch. ``detach_region_features``
    stops region-loss gradients from flowing into the global network
    through the fused feature-map crops: the global term alone then trains
    the global network, which keeps its coarse accuracy from degrading
    while the region networks adapt.
    """

    epochs: int = 60
    lr: float = 1e-4
    decay_start: int = 30
    batch_size: int = 16
    lam: float = 0.25
    patience: int = 10
    seed: int = 0
    detach_region_features: bool = True
    region_lr: float | None = None   # joint phase only; None = same as lr

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not 0 <= self.decay_start < self.epochs:
            raise ValueError(
                f"decay_start must lie in [0, epochs), got {self.decay_start} of {self.epochs}"
            )


def phase1_defaults() -> TrainingConfig:
    return TrainingConfig(epochs=60, lr=1e-4, decay_start=30, batch_size=16)


def phase2_defaults() -> TrainingConfig:
    return TrainingConfig(epochs=30, lr=1e-4, decay_start=10, batch_size=4)


def learning_rate(epoch: int, config: TrainingConfig) -> float:
    """lr(epoch): constant before decay_start, then linear to 0 at the final epoch."""
    if epoch < config.decay_start:
        return config.lr
    last = config.epochs - 1
    if last == config.decay_start:
        return 0.0 if epoch >= last else config.lr
    return config.lr * max(0.0, (last - epoch) / (last - config.decay_start))


def _check_normalized(t: torch.Tensor, name: str, n_points: int, tol: float | None) -> torch.Tensor:
    if t.shape[-2:] != (n_points, 2):
        raise ValueError(f"{name} must have shape (..., {n_points}, 2), got {tuple(t.shape)}")
    if tol is None:
        return t
    limit = 0.5 + tol
    if torch.any(t.detach().abs() > limit):
        raise ValueError(
            f"{name} looks unnormalized: |coordinate| > {limit} "
            "(expected values in [-0.5, 0.5])"
        )
    return t


def landmark_loss(global_pred, global_gt, region_preds=(), region_gts=(),
                  lam: float = 0.25, norm_tolerance: float | None = 0.5) -> torch.Tensor:
    """Mean squared coordinate error plus the weighted per-region terms.

    All coordinates must be normalized to [-0.5, 0.5] in their own frame
    (global: image, regions: crop); values beyond 0.5 + norm_tolerance are
    rejected as unnormalized (None disables the check for internal callers
    whose targets can legitimately fall far outside the crop). Each region
    term is the mean squared Euclidean distance over that region's points;
    the four region terms are summed and weighted by ``lam``.
    """
    if lam < 0:
        raise ValueError(f"lam must be non-negative, got {lam}")
    gp = torch.as_tensor(global_pred, dtype=torch.float64 if not torch.is_tensor(global_pred) else None)
    gg = torch.as_tensor(global_gt, dtype=gp.dtype if not torch.is_tensor(global_gt) else None)
    if gp.shape != gg.shape:
        raise ValueError(f"global shape mismatch: {tuple(gp.shape)} vs {tuple(gg.shape)}")
    _check_normalized(gp, "global_pred", NUM_LANDMARKS, norm_tolerance)
    _check_normalized(gg, "global_gt", NUM_LANDMARKS, norm_tolerance)
    loss = ((gp - gg) ** 2).sum(-1).mean()

    if len(region_preds) != len(region_gts):
        raise ValueError(
            f"region count mismatch: {len(region_preds)} preds vs {len(region_gts)} targets"
        )
    for k, (rp, rg) in enumerate(zip(region_preds, region_gts)):
        rp = torch.as_tensor(rp)
        rg = torch.as_tensor(rg)
        if rp.shape != rg.shape:
            raise ValueError(
                f"region {k} shape mismatch: {tuple(rp.shape)} vs {tuple(rg.shape)}"
            )
        _check_normalized(rp, f"region_pred[{k}]", rp.shape[-2], norm_tolerance)
        _check_normalized(rg, f"region_gt[{k}]", rg.shape[-2], norm_tolerance)
        loss = loss + lam * ((rp - rg) ** 2).sum(-1).mean()
    return loss


# ---------------------------------------------------------------------------
# Run bookkeeping
# ---------------------------------------------------------------------------

METRICS_FIELDS = ["epoch", "phase", "train_loss", "val_loss", "lr"]


class RunLog:
    def __init__(self, run_dir=None):
        self.run_dir = Path(run_dir) if run_dir else None
        self.rows: list[dict] = []
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    def write_config(self, payload: dict) -> None:
        if self.run_dir:
            (self.run_dir / "config.json").write_text(json.dumps(payload, indent=1))

    def log(self, **row) -> None:
        self.rows.append(row)
        if self.run_dir:
            path = self.run_dir / "metrics.csv"
            new = not path.exists()
            with open(path, "a", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=METRICS_FIELDS)
                if new:
                    writer.writeheader()
                writer.writerow({k: row.get(k, "") for k in METRICS_FIELDS})


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


class _SampleCache:
    """Lazily converts (image, LandmarkSet) pairs into training tensors."""

    def __init__(self, data, patch_size: int, hr_size: int, keep_hr: bool):
        self.data = data
        self.patch_size = patch_size
        self.hr_size = hr_size
        self.keep_hr = keep_hr
        self._cache: dict[int, tuple] = {}

    def __len__(self):
        return len(self.data)

    def __getitem__(self, i: int):
        if i not in self._cache:
            image, marks = self.data[i]
            if image.shape[:2] != (self.hr_size, self.hr_size):
                raise ValueError(
                    f"sample {i}: expected {self.hr_size}x{self.hr_size} image, "
                    f"got {image.shape[:2]}"
                )
            hr_t = image_to_tensor(image)
            lr_t = downscale_tensor(hr_t, self.patch_size)
            gt_hr = torch.from_numpy(marks.points.astype(np.float32))
            norm_gt = gt_hr / self.hr_size - 0.5
            self._cache[i] = (lr_t, norm_gt, hr_t if self.keep_hr else None, gt_hr)
        return self._cache[i]


def _global_batch_loss(net, samples, idx, temperature: float):
    lr = torch.stack([samples[i][0] for i in idx])
    gt = torch.stack([samples[i][1] for i in idx])
    logits = net(lr)
    coords = spatial_softargmax(logits, temperature)
    pred = coords / samples.patch_size - 0.5
    return landmark_loss(pred, gt, lam=0.0)


def train_global(data, config: TrainingConfig, val_data=None, run_dir=None,
                 bundle_config: BundleConfig | None = None, net=None):
    """Phase 1: train the global network with the coordinate loss.

    Returns (net, history). The best checkpoint (validation loss, or train
    loss when no validation split is given) is restored at the end; training
    stops early after ``config.patience`` epochs without improvement.
    """
    if len(data) == 0:
        raise ValueError("empty training split")
    bc = bundle_config or BundleConfig()
    _seed_everything(config.seed)
    if net is None:
        from .networks import build_global
        net = build_global(bc.base_width, bc.num_blocks)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    samples = _SampleCache(data, bc.patch_size, bc.hr_size, keep_hr=False)
    val_samples = _SampleCache(val_data, bc.patch_size, bc.hr_size, keep_hr=False) if val_data else None

    log = RunLog(run_dir)
    log.write_config({"phase": "global", **asdict(config), **bc.to_dict()})
    best_loss, best_state, stale = float("inf"), None, 0
    for epoch in range(config.epochs):
        lr_now = learning_rate(epoch, config)
        for group in opt.param_groups:
            group["lr"] = lr_now
        net.train()
        epoch_loss, n_batches = 0.0, 0
        for b, idx in enumerate(_batches(len(samples), config.batch_size, rng)):
            opt.zero_grad()
            loss = _global_batch_loss(net, samples, idx, bc.temperature)
            if not torch.isfinite(loss):
                raise RuntimeError(f"loss diverged at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        train_loss = epoch_loss / n_batches

        val_loss = None
        if val_samples is not None:
            net.eval()
            with torch.no_grad():
                losses = [
                    float(_global_batch_loss(net, val_samples, idx, bc.temperature))
                    for idx in _batches(len(val_samples), config.batch_size,
                                        np.random.default_rng(0))
                ]
            val_loss = float(np.mean(losses))
        log.log(epoch=epoch, phase="global", train_loss=train_loss,
                val_loss="" if val_loss is None else val_loss, lr=lr_now)

        monitored = train_loss if val_loss is None else val_loss
        if monitored < best_loss - 1e-12:
            best_loss, stale = monitored, 0
            best_state = copy.deepcopy(net.state_dict())
            if run_dir:
                torch.save(best_state, Path(run_dir) / "global_best.pt")
        else:
            stale += 1
            if stale > config.patience:
                break
    if best_state is not None:
        net.load_state_dict(best_state)
    return net, log.rows


def _joint_loss(bundle: ModelBundle, samples, idx, lam: float,
                pad_rng: np.random.Generator | None,
                detach_features: bool = True):
    """Eq-style joint loss for one batch; pad_rng None means inference padding."""
    cfg = bundle.config
    lr = torch.stack([samples[i][0] for i in idx])
    gt_norm = torch.stack([samples[i][1] for i in idx])
    logits = bundle.global_net(lr)
    coords_lr = spatial_softargmax(logits, cfg.temperature)
    global_pred = coords_lr / cfg.patch_size - 0.5

    factor = cfg.hr_size // cfg.patch_size
    feature_logits = logits.detach() if detach_features else logits
    region_preds, region_gts = [], []
    for row, i in enumerate(idx):
        hr_t = samples[i][2]
        gt_hr = samples[i][3].numpy().astype(np.float64)
        coarse_hr = coords_lr[row].detach().numpy().astype(np.float64) * factor
        crops = compute_crops(coarse_hr, 0.25, cfg.hr_size, cfg.patch_size, rng=pad_rng)
        for name, crop in crops.items():
            region_logits, landmark_ids = region_forward(bundle, hr_t,
                                                         feature_logits[row],
                                                         crop, factor)
            local = spatial_softargmax(region_logits, cfg.temperature)
            target_local = global_to_local(gt_hr[landmark_ids], crop)
            region_preds.append(local / crop.patch_size - 0.5)
            region_gts.append(
                torch.from_numpy(target_local).to(local.dtype) / crop.patch_size - 0.5
            )
    # crops from an unconverged global net can put targets any distance
    # outside the patch; these internal targets come from validated ground
    # truth, so the unnormalized-input guard is disabled here
    return landmark_loss(global_pred, gt_norm, region_preds, region_gts, lam=lam,
                         norm_tolerance=None)


def train_joint(bundle: ModelBundle, data, config: TrainingConfig, val_data=None,
                run_dir=None):
    """Phase 2: joint training of the global and region networks.

    Region crops follow the current global predictions with padding sampled
    in [0.25, 0.5]; validation uses the fixed inference padding.
    """
    if len(data) == 0:
        raise ValueError("empty training split")
    cfg = bundle.config
    _seed_everything(config.seed)
    region_params = [p for name, m in bundle.modules().items() if name != "global"
                     for p in m.parameters()]
    opt = torch.optim.Adam([
        {"params": list(bundle.global_net.parameters()), "base_lr": config.lr},
        {"params": region_params, "base_lr": config.region_lr or config.lr},
    ], lr=config.lr)
    rng = np.random.default_rng(config.seed)
    pad_rng = np.random.default_rng(config.seed + 1)
    samples = _SampleCache(data, cfg.patch_size, cfg.hr_size, keep_hr=True)
    val_samples = _SampleCache(val_data, cfg.patch_size, cfg.hr_size, keep_hr=True) if val_data else None

    log = RunLog(run_dir)
    log.write_config({"phase": "joint", **asdict(config), **cfg.to_dict()})
    best_loss, best_state, stale = float("inf"), None, 0
    for epoch in range(config.epochs):
        lr_now = learning_rate(epoch, config)
        decay = lr_now / config.lr
        for group in opt.param_groups:
            group["lr"] = group["base_lr"] * decay
        for m in bundle.modules().values():
            m.train()
        epoch_loss, n_batches = 0.0, 0
        for b, idx in enumerate(_batches(len(samples), config.batch_size, rng)):
            opt.zero_grad()
            loss = _joint_loss(bundle, samples, idx, config.lam, pad_rng,
                               detach_features=config.detach_region_features)
            if not torch.isfinite(loss):
                raise RuntimeError(f"loss diverged at epoch {epoch}, batch {b}")
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        train_loss = epoch_loss / n_batches

        val_loss = None
        if val_samples is not None:
            for m in bundle.modules().values():
                m.eval()
            with torch.no_grad():
                losses = [
                    float(_joint_loss(bundle, val_samples, idx, config.lam, None,
                                      detach_features=True))
                    for idx in _batches(len(val_samples), config.batch_size,
                                        np.random.default_rng(0))
                ]
            val_loss = float(np.mean(losses))
        log.log(epoch=epoch, phase="joint", train_loss=train_loss,
                val_loss="" if val_loss is None else val_loss, lr=lr_now)

        monitored = train_loss if val_loss is None else val_loss
        if monitored < best_loss - 1e-12:
            best_loss, stale = monitored, 0
            best_state = {k: copy.deepcopy(m.state_dict())
                          for k, m in bundle.modules().items()}
            if run_dir:
                bundle.save(Path(run_dir) / "bundle_best")
        else:
            stale += 1
            if stale > config.patience:
                break
    if best_state is not None:
        for k, m in bundle.modules().items():
            m.load_state_dict(best_state[k])
    return bundle, log.rows


def train_full(data, phase1: TrainingConfig, phase2: TrainingConfig, val_data=None,
               run_dir=None, bundle_config: BundleConfig | None = None) -> ModelBundle:
    """Phase 1 then phase 2; region networks start from the global weights."""
    bc = bundle_config or BundleConfig()
    run_dir = Path(run_dir) if run_dir else None
    net, _ = train_global(data, phase1, val_data=val_data,
                          run_dir=run_dir / "phase1" if run_dir else None,
                          bundle_config=bc)
    bundle = new_bundle(bc.base_width, bc.num_blocks, bc.patch_size, bc.hr_size,
                        bc.temperature, from_global=net)
    bundle.config.fingerprint = bc.fingerprint
    bundle, _ = train_joint(bundle, data, phase2, val_data=val_data,
                            run_dir=run_dir / "phase2" if run_dir else None)
    return bundle
