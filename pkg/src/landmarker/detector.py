"""Scikit-learn style facade over the coarse-to-fine detection pipeline.

``LandmarkDetector`` behaves like an estimator: hyperparameters in the
constructor, ``fit`` trains both phases on a dataset of (image,
LandmarkSet) pairs or a manifest path, ``predict`` maps images to (68, 2)
landmark arrays, and ``get_params``/``set_params`` compose with sklearn
tooling.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .landmarks import LandmarkSet
from .networks import BundleConfig, ModelBundle, new_bundle
from .pipeline import FullPrediction, forward_full
from .training import TrainingConfig, train_global, train_joint


class NotFittedError(RuntimeError):
    pass


class LandmarkDetector(BaseEstimator):
    """Coarse-to-fine 68-point facial landmark detector for artwork images."""

    def __init__(self, base_width: int = 64, num_blocks: int = 6,
                 patch_size: int = 256, hr_size: int = 1024,
                 temperature: float = 1.0, padding_fraction: float = 0.25,
                 lam: float = 0.25, lr: float = 1e-4,
                 phase1_epochs: int = 60, phase1_decay_start: int = 30,
                 phase1_batch_size: int = 16,
                 phase2_epochs: int = 30, phase2_decay_start: int = 10,
                 phase2_batch_size: int = 4,
                 patience: int = 10, random_state: int = 0):
        self.base_width = base_width
        self.num_blocks = num_blocks
        self.patch_size = patch_size
        self.hr_size = hr_size
        self.temperature = temperature
        self.padding_fraction = padding_fraction
        self.lam = lam
        self.lr = lr
        self.phase1_epochs = phase1_epochs
        self.phase1_decay_start = phase1_decay_start
        self.phase1_batch_size = phase1_batch_size
        self.phase2_epochs = phase2_epochs
        self.phase2_decay_start = phase2_decay_start
        self.phase2_batch_size = phase2_batch_size
        self.patience = patience
        self.random_state = random_state

    # -- configuration ----------------------------------------------------

    def _bundle_config(self) -> BundleConfig:
        from .networks import config_fingerprint

        cfg = BundleConfig(self.base_width, self.num_blocks, self.patch_size,
                           self.hr_size, self.temperature)
        cfg.fingerprint = config_fingerprint(self.get_params())
        return cfg

    def _phase_config(self, phase: int) -> TrainingConfig:
        if phase == 1:
            return TrainingConfig(
                epochs=self.phase1_epochs, lr=self.lr,
                decay_start=self.phase1_decay_start,
                batch_size=self.phase1_batch_size, lam=self.lam,
                patience=self.patience, seed=self.random_state,
            )
        return TrainingConfig(
            epochs=self.phase2_epochs, lr=self.lr,
            decay_start=self.phase2_decay_start,
            batch_size=self.phase2_batch_size, lam=self.lam,
            patience=self.patience, seed=self.random_state,
        )

    def _as_dataset(self, X):
        if isinstance(X, (str, Path)):
            from .datasets import LandmarkDataset, read_manifest, validate_manifest

            rows = read_manifest(X)
            root = Path(X).parent
            validate_manifest(rows, root)
            return LandmarkDataset(rows, root, "train", target=self.hr_size)
        return X

    # -- estimator surface --------------------------------------------------

    def fit(self, X, y=None, validation=None, run_dir=None):
        """Train phase 1 (global) then phase 2 (joint with region networks).

        ``X`` is a sequence of (1024x1024 RGB image, LandmarkSet) pairs or a
        manifest CSV path (its train split is used).
        """
        data = self._as_dataset(X)
        bc = self._bundle_config()
        run_dir = Path(run_dir) if run_dir else None
        net, _ = train_global(
            data, self._phase_config(1), val_data=validation,
            run_dir=run_dir / "phase1" if run_dir else None, bundle_config=bc,
        )
        bundle = new_bundle(bc.base_width, bc.num_blocks, bc.patch_size,
                            bc.hr_size, bc.temperature, from_global=net)
        bundle.config.fingerprint = bc.fingerprint
        bundle, _ = train_joint(
            bundle, data, self._phase_config(2), val_data=validation,
            run_dir=run_dir / "phase2" if run_dir else None,
        )
        self.bundle_ = bundle.eval_()
        return self

    def detect(self, image: np.ndarray) -> FullPrediction:
        self._check_fitted()
        return forward_full(self.bundle_, image, self.padding_fraction)

    def predict(self, X) -> np.ndarray:
        """Images (one array/path or a list of them) to (n, 68, 2) landmarks."""
        single = self._is_single(X)
        items = [X] if single else list(X)
        out = []
        for item in items:
            image = self._load(item)
            out.append(self.detect(image).refined_landmarks.points)
        return out[0] if single else np.stack(out)

    def predict_landmarks(self, image) -> LandmarkSet:
        return self.detect(self._load(image)).refined_landmarks

    # -- persistence ----------------------------------------------------------

    def save(self, directory) -> None:
        self._check_fitted()
        self.bundle_.save(directory)

    @classmethod
    def load(cls, directory, **overrides) -> "LandmarkDetector":
        bundle = ModelBundle.load(directory)
        cfg = bundle.config
        det = cls(base_width=cfg.base_width, num_blocks=cfg.num_blocks,
                  patch_size=cfg.patch_size, hr_size=cfg.hr_size,
                  temperature=cfg.temperature, **overrides)
        det.bundle_ = bundle.eval_()
        return det

    # -- helpers ----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "bundle_"):
            raise NotFittedError(
                "LandmarkDetector has no model; call fit() or load()"
            )

    @staticmethod
    def _is_single(X) -> bool:
        if isinstance(X, (str, Path)):
            return True
        return isinstance(X, np.ndarray) and X.ndim == 3

    @staticmethod
    def _load(item) -> np.ndarray:
        if isinstance(item, (str, Path)):
            from .datasets import read_image

            return read_image(item)
        return np.asarray(item)
