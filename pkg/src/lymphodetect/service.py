"""HTTP service for the human-in-the-loop detection workflow.

Pathologists upload FOVs, run detection, and submit correction annotations
through this API; once enough unconsumed corrections accumulate (200 by
default) a fine-tune job runs in the background, registers a child model
with a recalibrated threshold, and atomically becomes the active model.
Detection requests keep being served by the current model while the job
runs.

Storage is a flat on-disk layout under one root:

    images/<id>.png            uploaded FOVs (plus .norm.png caches)
    annotations.jsonl          append-only correction records
    consumed.jsonl             append-only (record_id, model_id) marks
    detections/<image>/<model>.csv + .probmap.png
    models/registry.json       model lineage + active pointer
    models/<model_id>/         checkpoints
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
import traceback
from dataclasses import dataclass, replace

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from PIL import Image

from . import model as fcn
from .annotations import ANNOTATION_KINDS, AnnotationSet, read_records, records_to_sets
from .pipeline import calibrate_threshold_after_finetune, run_detection
from .postprocess import render_overlay, write_detections
from .raster import read_image, write_image
from .stain import normalize
from .training import (
    TrainState,
    assemble_finetune_job,
    compile_training_fov,
    finetune,
)


@dataclass
class ServiceConfig:
    finetune_trigger: int = 200
    finetune_max_epochs: int = 20
    finetune_epoch_size: int = 175
    finetune_val_size: int = 25
    finetune_patience: int = 3
    patch_size: int = 256
    r1: int = 11
    prior_data_dir: str | None = None
    seed: int = 0


@dataclass
class RegistryEntry:
    model_id: str
    parent_id: str | None
    path: str
    threshold: float
    created: float
    status: str  # training | ready | finetuning

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "parent_id": self.parent_id,
            "path": self.path,
            "threshold": self.threshold,
            "created": self.created,
            "status": self.status,
        }


class ModelRegistry:
    """Lineage of model checkpoints with one active model at a time."""

    def __init__(self, root: str):
        self.root = root
        self.path = os.path.join(root, "registry.json")
        self.entries: dict[str, RegistryEntry] = {}
        self.active_id: str | None = None
        os.makedirs(root, exist_ok=True)
        if os.path.exists(self.path):
            with open(self.path, encoding="utf-8") as fh:
                data = json.load(fh)
            self.active_id = data.get("active")
            for item in data.get("entries", []):
                self.entries[item["model_id"]] = RegistryEntry(**item)

    def _flush(self) -> None:
        data = {
            "active": self.active_id,
            "entries": [e.to_dict() for e in self.entries.values()],
        }
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2)
        os.replace(tmp, self.path)  # atomic swap for concurrent readers

    def next_id(self) -> str:
        return f"m{len(self.entries) + 1:04d}"

    def add(self, entry: RegistryEntry, activate: bool = False) -> None:
        self.entries[entry.model_id] = entry
        if activate:
            self.active_id = entry.model_id
        self._flush()

    def update(self, model_id: str, **changes) -> None:
        entry = self.entries[model_id]
        for key, value in changes.items():
            setattr(entry, key, value)
        self._flush()

    def activate(self, model_id: str) -> None:
        self.active_id = model_id
        self._flush()

    def remove(self, model_id: str) -> None:
        self.entries.pop(model_id, None)
        if self.active_id == model_id:
            self.active_id = None
        self._flush()


class CorrectionStore:
    """Append-only correction log; consumption marks, never deletes."""

    def __init__(self, root: str):
        self.records_path = os.path.join(root, "annotations.jsonl")
        self.consumed_path = os.path.join(root, "consumed.jsonl")
        self.records: list[dict] = []
        if os.path.exists(self.records_path):
            self.records = read_records(self.records_path)
        if os.path.exists(self.consumed_path):
            consumed = {
                item["record_id"]: item["model_id"]
                for item in read_records(self.consumed_path)
            }
            for rec in self.records:
                if rec["id"] in consumed:
                    rec["consumed_by_model_id"] = consumed[rec["id"]]

    def append(self, fov_id: str, kind: str, points, author: str) -> dict:
        rec = {
            "id": len(self.records) + 1,
            "fov_id": fov_id,
            "kind": kind,
            "points": [[int(r), int(c)] for r, c in points],
            "author": author,
            "timestamp": time.time(),
            "consumed_by_model_id": None,
        }
        self.records.append(rec)
        with open(self.records_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")
        return rec

    def unconsumed(self) -> list[dict]:
        return [r for r in self.records if r["consumed_by_model_id"] is None]

    def for_fov(self, fov_id: str) -> list[dict]:
        return [r for r in self.records if r["fov_id"] == fov_id]

    def mark_consumed(self, record_ids: list[int], model_id: str) -> None:
        with open(self.consumed_path, "a", encoding="utf-8") as fh:
            for rec in self.records:
                if rec["id"] in record_ids:
                    rec["consumed_by_model_id"] = model_id
                    fh.write(json.dumps({"record_id": rec["id"], "model_id": model_id}) + "\n")


class ServiceState:
    def __init__(self, storage_root: str, config: ServiceConfig):
        self.root = storage_root
        self.config = config
        os.makedirs(os.path.join(storage_root, "images"), exist_ok=True)
        os.makedirs(os.path.join(storage_root, "detections"), exist_ok=True)
        self.registry = ModelRegistry(os.path.join(storage_root, "models"))
        self.corrections = CorrectionStore(storage_root)
        self.lock = threading.Lock()
        self.finetune_running = False
        self.finetune_pending = False
        self.finetune_thread: threading.Thread | None = None
        self.finetune_error: str | None = None
        self._params_cache: dict[str, fcn.ModelParams] = {}
        self._prior_fovs = None
        self._job_counter = 0

    # -- models ------------------------------------------------------------

    def register_initial_model(self, checkpoint_dir: str) -> str:
        params = fcn.load_checkpoint(checkpoint_dir)
        model_id = self.registry.next_id()
        dest = os.path.join(self.root, "models", model_id)
        fcn.save_checkpoint(params, dest)
        self.registry.add(
            RegistryEntry(
                model_id=model_id,
                parent_id=params.parent_id,
                path=dest,
                threshold=params.threshold,
                created=time.time(),
                status="ready",
            ),
            activate=True,
        )
        return model_id

    def active_model(self) -> tuple[str, fcn.ModelParams]:
        with self.lock:
            active_id = self.registry.active_id
            if active_id is None or self.registry.entries[active_id].status != "ready":
                raise HTTPException(status_code=409, detail="no ready model to serve")
            if active_id not in self._params_cache:
                self._params_cache[active_id] = fcn.load_checkpoint(
                    self.registry.entries[active_id].path
                )
            return active_id, self._params_cache[active_id]

    # -- images ------------------------------------------------------------

    def image_path(self, image_id: str) -> str:
        return os.path.join(self.root, "images", f"{image_id}.png")

    def store_image(self, data: bytes) -> tuple[str, int, int]:
        try:
            img = Image.open(io.BytesIO(data)).convert("RGB")
        except Exception as exc:
            raise HTTPException(status_code=400, detail=f"not a decodable image: {exc}")
        count = len(
            [n for n in os.listdir(os.path.join(self.root, "images")) if n.endswith(".png") and ".norm" not in n]
        )
        image_id = f"img{count + 1:04d}"
        arr = np.asarray(img, dtype=np.uint8)
        write_image(self.image_path(image_id), arr)
        try:
            _, params = self.active_model()
            if params.stain_reference is not None:
                cache = os.path.join(self.root, "images", f"{image_id}.norm.png")
                write_image(cache, normalize(arr, params.stain_reference))
        except HTTPException:
            pass  # no model yet; cache lazily at detect time
        return image_id, arr.shape[0], arr.shape[1]

    def load_image(self, image_id: str) -> np.ndarray:
        path = self.image_path(image_id)
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        return read_image(path)

    # -- prior training data for fine-tune replay ---------------------------

    def prior_fovs(self):
        if self._prior_fovs is None:
            self._prior_fovs = []
            directory = self.config.prior_data_dir
            if directory:
                self._prior_fovs = load_dataset_fovs(
                    directory, reference=self._active_reference(), r1=self.config.r1
                )
        return self._prior_fovs

    def _active_reference(self):
        try:
            _, params = self.active_model()
            return params.stain_reference
        except HTTPException:
            return None


def load_dataset_fovs(directory: str, reference=None, r1: int = 11):
    """Load a dataset directory (images/ + annotations.jsonl) as training FOVs."""
    records_path = os.path.join(directory, "annotations.jsonl")
    image_dir = os.path.join(directory, "images")
    sets = records_to_sets(read_records(records_path)) if os.path.exists(records_path) else {}
    fovs = []
    for fov_id, ann in sorted(sets.items()):
        path = os.path.join(image_dir, f"{fov_id}.png")
        if not os.path.exists(path):
            continue
        fovs.append(
            compile_training_fov(fov_id, read_image(path), ann, reference=reference, r1=r1)
        )
    return fovs


# --------------------------------------------------------------------------
# Fine-tune job
# --------------------------------------------------------------------------

def _run_finetune_job(state: ServiceState, snapshot_ids: list[int]) -> None:
    config = state.config
    child_id = None
    try:
        with state.lock:
            active_id = state.registry.active_id
            old_entry = state.registry.entries[active_id]
            old_params = fcn.load_checkpoint(old_entry.path)
            child_id = state.registry.next_id()
            state.registry.add(
                RegistryEntry(
                    model_id=child_id,
                    parent_id=active_id,
                    path=os.path.join(state.root, "models", child_id),
                    threshold=old_entry.threshold,
                    created=time.time(),
                    status="training",
                )
            )

        records = [r for r in state.corrections.records if r["id"] in snapshot_ids]
        fov_ids = sorted({r["fov_id"] for r in records})
        new_fovs = []
        for fov_id in fov_ids:
            image = read_image(state.image_path(fov_id))
            ann = AnnotationSet(fov_id=fov_id, source="correction")
            for rec in state.corrections.for_fov(fov_id):
                ann.add(rec["kind"], [tuple(p) for p in rec["points"]])
            new_fovs.append(
                compile_training_fov(
                    fov_id, image, ann, reference=old_params.stain_reference, r1=config.r1
                )
            )

        state._job_counter += 1
        rng = np.random.default_rng(config.seed + state._job_counter)
        job = assemble_finetune_job(new_fovs, state.prior_fovs(), rng)
        result = finetune(
            TrainState.new(old_params.copy(), seed=int(rng.integers(2**31))),
            job,
            max_epochs=config.finetune_max_epochs,
            patience=config.finetune_patience,
            train_epoch_size=config.finetune_epoch_size,
            val_epoch_size=config.finetune_val_size,
            K=config.patch_size,
            parent_id=active_id,
        )

        reference_images = [f.image for f in job.replay_fovs] or [f.image for f in new_fovs]
        new_threshold = calibrate_threshold_after_finetune(
            old_params, result.params, reference_images
        )
        child_params = replace(result.params, threshold=new_threshold)

        with state.lock:
            dest = os.path.join(state.root, "models", child_id)
            fcn.save_checkpoint(child_params, dest)
            state._params_cache[child_id] = child_params
            state.registry.update(child_id, status="ready", threshold=new_threshold)
            state.registry.activate(child_id)
            state.corrections.mark_consumed(snapshot_ids, child_id)
    except Exception:
        state.finetune_error = traceback.format_exc()
        if child_id is not None:
            with state.lock:
                state.registry.remove(child_id)  # previous model stays active
    finally:
        with state.lock:
            state.finetune_running = False
            rerun = state.finetune_pending and bool(state.corrections.unconsumed())
            state.finetune_pending = False
        if rerun:
            _maybe_start_finetune(state, force=True)


def _maybe_start_finetune(state: ServiceState, force: bool = False) -> bool:
    """Start a background fine-tune if warranted; returns True if started."""
    with state.lock:
        unconsumed = state.corrections.unconsumed()
        if state.finetune_running:
            if force:
                state.finetune_pending = True
            return False
        if not unconsumed:
            return False
        if not force and len(unconsumed) < state.config.finetune_trigger:
            return False
        if state.registry.active_id is None:
            return False
        state.finetune_running = True
        state.finetune_error = None
        snapshot_ids = [r["id"] for r in unconsumed]
    thread = threading.Thread(
        target=_run_finetune_job, args=(state, snapshot_ids), daemon=True
    )
    state.finetune_thread = thread
    thread.start()
    return True


# --------------------------------------------------------------------------
# HTTP app
# --------------------------------------------------------------------------

def _validate_annotation_records(body, image_shape) -> tuple[list[dict], list[dict]]:
    """Returns (records, errors); errors are {index, field, error} dicts."""
    if isinstance(body, dict) and "records" in body:
        items = body["records"]
    elif isinstance(body, list):
        items = body
    else:
        return [], [{"index": None, "field": "records", "error": "expected a list of records"}]
    records, errors = [], []
    height, width = image_shape
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            errors.append({"index": i, "field": "", "error": "record must be an object"})
            continue
        kind = item.get("kind")
        if kind not in ANNOTATION_KINDS:
            errors.append(
                {"index": i, "field": "kind", "error": f"kind must be one of {ANNOTATION_KINDS}"}
            )
            continue
        points = item.get("points")
        if (
            not isinstance(points, list)
            or not points
            or not all(
                isinstance(p, (list, tuple)) and len(p) == 2 for p in points
            )
        ):
            errors.append(
                {"index": i, "field": "points", "error": "points must be a non-empty list of [row, col]"}
            )
            continue
        bad = [
            p
            for p in points
            if not (0 <= int(p[0]) < height and 0 <= int(p[1]) < width)
        ]
        if bad:
            errors.append(
                {"index": i, "field": "points", "error": f"points outside image bounds: {bad}"}
            )
            continue
        records.append(
            {
                "kind": kind,
                "points": [[int(p[0]), int(p[1])] for p in points],
                "author": str(item.get("author", "")),
                "fov_id": item.get("fov_id"),
            }
        )
    return records, errors


def create_app(
    storage_root: str,
    config: ServiceConfig | None = None,
    initial_model: str | None = None,
) -> FastAPI:
    config = config or ServiceConfig()
    state = ServiceState(storage_root, config)
    if initial_model is not None and state.registry.active_id is None:
        state.register_initial_model(initial_model)

    app = FastAPI(title="lymphodetect")
    app.state.service = state

    @app.post("/images")
    async def upload_image(request: Request):
        data = await request.body()
        if not data:
            raise HTTPException(status_code=400, detail="empty request body")
        image_id, height, width = state.store_image(data)
        return {"image_id": image_id, "height": height, "width": width}

    @app.post("/images/{image_id}/detect")
    def detect_image(image_id: str):
        image = state.load_image(image_id)
        model_id, params = state.active_model()
        detections, probmap = run_detection(params, image)
        det_dir = os.path.join(state.root, "detections", image_id)
        os.makedirs(det_dir, exist_ok=True)
        csv_path = os.path.join(det_dir, f"{model_id}.csv")
        write_detections(csv_path, image_id, detections)
        probmap_path = os.path.join(det_dir, f"{model_id}.probmap.png")
        write_image(probmap_path, np.rint(probmap[..., 1] * 255))
        return {
            "image_id": image_id,
            "model_id": model_id,
            "threshold": params.threshold,
            "count": len(detections),
            "detections": [
                {
                    "row": det.position[0],
                    "col": det.position[1],
                    "confidence": det.confidence,
                    "area": det.area,
                    "eccentricity": det.eccentricity,
                }
                for det in detections
            ],
            "probmap": os.path.relpath(probmap_path, state.root),
            "detections_file": os.path.relpath(csv_path, state.root),
        }

    @app.get("/images/{image_id}/overlay")
    def overlay(image_id: str):
        image = state.load_image(image_id)
        _, params = state.active_model()
        detections, _ = run_detection(params, image)
        rendered = render_overlay(image, detections)
        buf = io.BytesIO()
        Image.fromarray(rendered).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/images/{image_id}/annotations")
    async def add_annotations(image_id: str, request: Request):
        image = state.load_image(image_id)
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=400, detail=f"invalid JSON: {exc}")
        records, errors = _validate_annotation_records(body, image.shape[:2])
        for rec in records:
            if rec["fov_id"] is not None and rec["fov_id"] != image_id:
                errors.append(
                    {
                        "index": None,
                        "field": "fov_id",
                        "error": f"fov_id {rec['fov_id']!r} does not match image {image_id!r}",
                    }
                )
        if errors:
            raise HTTPException(status_code=400, detail=errors)
        for rec in records:
            state.corrections.append(image_id, rec["kind"], rec["points"], rec["author"])
        triggered = _maybe_start_finetune(state)
        return {
            "accepted": len(records),
            "unconsumed_count": len(state.corrections.unconsumed()),
            "finetune_triggered": triggered,
            "finetune_running": state.finetune_running,
        }

    @app.get("/images/{image_id}/annotations")
    def list_annotations(image_id: str):
        state.load_image(image_id)  # 404 on unknown image
        return {"records": state.corrections.for_fov(image_id)}

    @app.post("/finetune")
    def trigger_finetune():
        if not state.corrections.unconsumed():
            raise HTTPException(status_code=409, detail="no unconsumed corrections")
        started = _maybe_start_finetune(state, force=True)
        return {
            "status": "started" if started else "queued",
            "finetune_running": state.finetune_running,
        }

    @app.get("/models")
    def list_models():
        with state.lock:
            return {
                "active_model_id": state.registry.active_id,
                "finetune_running": state.finetune_running,
                "finetune_error": state.finetune_error,
                "models": [e.to_dict() for e in state.registry.entries.values()],
            }

    return app
