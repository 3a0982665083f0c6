"""Annotation backend: serve corpus images, model-initialized landmarks, and
persist human corrections.

Records are JSON sidecars next to the images (the dataset module's format
plus status/revision bookkeeping), written atomically via temp-file-and-
rename so a crash can never leave a torn record. Writes use optimistic
concurrency: a stale revision is rejected and the client must refetch.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .landmarks import NUM_LANDMARKS

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
STATUS_ORDER = {"unlabeled": 0, "predicted": 1, "corrected": 2}


class UnknownImageError(KeyError):
    pass


class RevisionConflictError(RuntimeError):
    def __init__(self, expected: int, current: int):
        super().__init__(f"revision conflict: expected {expected}, current {current}")
        self.current = current


class StatusConflictError(RuntimeError):
    pass


class ValidationFailure(ValueError):
    pass


@dataclass
class AnnotationRecord:
    image_id: str
    image: str
    width: int
    height: int
    points: list | None
    status: str = "unlabeled"
    revision: int = 0
    source: str = "manual"

    def to_dict(self) -> dict:
        return {
            "id": self.image_id, "image": self.image,
            "width": self.width, "height": self.height,
            "points": self.points, "source": self.source,
            "status": self.status, "revision": self.revision,
        }


def _validate_points(points) -> list:
    if points is None or len(points) != NUM_LANDMARKS:
        raise ValidationFailure(
            f"expected {NUM_LANDMARKS} points, got {0 if points is None else len(points)}"
        )
    clean = []
    for i, pt in enumerate(points):
        if len(pt) != 2:
            raise ValidationFailure(f"point {i} is not an (x, y) pair")
        x, y = float(pt[0]), float(pt[1])
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationFailure(f"non-finite coordinate at index {i}")
        clean.append([x, y])
    return clean


class AnnotationStore:
    """File-backed annotation records for a corpus directory of images."""

    def __init__(self, corpus_dir):
        self.root = Path(corpus_dir)
        if not self.root.is_dir():
            raise FileNotFoundError(f"corpus directory not found: {self.root}")
        self._lock = threading.Lock()
        self._index: dict[str, Path] = {}
        for path in sorted(self.root.rglob("*")):
            if path.suffix.lower() in IMAGE_SUFFIXES and path.is_file():
                rel = path.relative_to(self.root).as_posix()
                image_id = hashlib.sha1(rel.encode()).hexdigest()[:12]
                self._index[image_id] = path

    def ids(self) -> list[str]:
        return list(self._index)

    def image_path(self, image_id: str) -> Path:
        try:
            return self._index[image_id]
        except KeyError:
            raise UnknownImageError(image_id) from None

    def _record_path(self, image_id: str) -> Path:
        return self.image_path(image_id).with_suffix(".landmarks.json")

    def _image_size(self, image_id: str) -> tuple[int, int]:
        import cv2

        img = cv2.imread(str(self.image_path(image_id)), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise IOError(f"unreadable image: {self.image_path(image_id)}")
        return img.shape[1], img.shape[0]

    def get(self, image_id: str) -> AnnotationRecord:
        path = self._record_path(image_id)
        rel = self.image_path(image_id).relative_to(self.root).as_posix()
        if not path.exists():
            w, h = self._image_size(image_id)
            return AnnotationRecord(image_id, rel, w, h, None)
        data = json.loads(path.read_text())
        return AnnotationRecord(
            image_id, rel, data["width"], data["height"], data["points"],
            data.get("status", "corrected"), data.get("revision", 1),
            data.get("source", "manual"),
        )

    def list_records(self) -> list[AnnotationRecord]:
        return [self.get(i) for i in self.ids()]

    def _write_atomic(self, path: Path, payload: dict) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(json.dumps(payload, indent=1))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def _store(self, record: AnnotationRecord) -> AnnotationRecord:
        payload = {
            "image": record.image, "width": record.width, "height": record.height,
            "points": record.points, "source": record.source,
            "status": record.status, "revision": record.revision,
        }
        self._write_atomic(self._record_path(record.image_id), payload)
        return record

    def put(self, image_id: str, points, expected_revision: int,
            status: str = "corrected", source: str = "manual") -> AnnotationRecord:
        """Persist new points if the caller saw the latest revision."""
        points = _validate_points(points)
        with self._lock:
            current = self.get(image_id)
            if expected_revision != current.revision:
                raise RevisionConflictError(expected_revision, current.revision)
            if STATUS_ORDER[status] < STATUS_ORDER[current.status]:
                raise StatusConflictError(
                    f"cannot move status {current.status} -> {status}"
                )
            record = AnnotationRecord(
                image_id, current.image, current.width, current.height,
                points, status, current.revision + 1, source,
            )
            return self._store(record)

    def put_prediction(self, image_id: str, points) -> AnnotationRecord:
        """Store model output; never overwrites human corrections."""
        points = _validate_points(points)
        with self._lock:
            current = self.get(image_id)
            if current.status == "corrected":
                raise StatusConflictError("record already corrected; predict rejected")
            record = AnnotationRecord(
                image_id, current.image, current.width, current.height,
                points, "predicted", current.revision + 1, "model",
            )
            return self._store(record)


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

def create_app(corpus_dir, predictor=None, ui_dir=None):
    """FastAPI app over an AnnotationStore.

    ``predictor`` maps an RGB image array to a (68, 2) point array; wire the
    detection pipeline in via the CLI, or a stub in tests.
    """
    store = AnnotationStore(corpus_dir)
    app = FastAPI(title="landmark annotation service")
    app.state.store = store
    app.state.predictor = predictor

    def error(status: int, kind: str, detail: str) -> JSONResponse:
        return JSONResponse({"error": kind, "detail": detail}, status_code=status)

    @app.exception_handler(UnknownImageError)
    async def _unknown(request: Request, exc: UnknownImageError):
        return error(404, "not_found", f"unknown image id: {exc.args[0]}")

    @app.exception_handler(RevisionConflictError)
    async def _stale(request: Request, exc: RevisionConflictError):
        return error(409, "revision_conflict", str(exc))

    @app.exception_handler(StatusConflictError)
    async def _status(request: Request, exc: StatusConflictError):
        return error(409, "status_conflict", str(exc))

    @app.exception_handler(ValidationFailure)
    async def _invalid(request: Request, exc: ValidationFailure):
        return error(400, "validation_failure", str(exc))

    @app.get("/images")
    def list_images():
        return {
            "images": [
                {"id": r.image_id, "image": r.image, "width": r.width,
                 "height": r.height, "status": r.status, "revision": r.revision}
                for r in store.list_records()
            ]
        }

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        path = store.image_path(image_id)
        media = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return FileResponse(path, media_type=media)

    @app.get("/images/{image_id}/landmarks")
    def get_landmarks(image_id: str):
        return store.get(image_id).to_dict()

    @app.post("/images/{image_id}/predict")
    def predict(image_id: str):
        if app.state.predictor is None:
            return error(503, "model_unavailable", "no model loaded")
        from .datasets import read_image

        image = read_image(store.image_path(image_id))
        try:
            points = np.asarray(app.state.predictor(image), dtype=float)
        except Exception as exc:  # inference failure leaves the record untouched
            return error(500, "inference_failure", str(exc))
        record = store.put_prediction(image_id, points.tolist())
        return record.to_dict()

    @app.put("/images/{image_id}/landmarks")
    async def put_landmarks(image_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            raise ValidationFailure("request body is not valid JSON")
        if not isinstance(body, dict) or "points" not in body or "revision" not in body:
            raise ValidationFailure("body must be {points: [[x,y]x68], revision: n}")
        record = store.put(image_id, body["points"], int(body["revision"]))
        return record.to_dict()

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
