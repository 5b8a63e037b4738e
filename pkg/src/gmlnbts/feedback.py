"""Clinician-feedback store and the periodic fine-tuning cycle.

Everything durable lives under one root directory:

    studies/<study_id>/        uploaded or generated studies (manifest + VSEG)
    predictions/<pred_id>.vseg predicted label volumes
    predictions/<pred_id>.json prediction metadata
    checkpoints/               one checkpoint per model version, never deleted
    ratings.log                append-only JSON lines, one per rating

In-memory state is a pure function of the directory contents plus the
log; reopening the store replays everything.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .errors import DataError, SpecError
from .metrics import region_dice
from .nn import Module
from .train import TrainConfig, TrainResult, dice_ce_loss, study_input, train
from .tensor import Tensor, no_grad
from .volume_io import Study, load_study, read_volume, save_study, write_volume

ADEQUATE = "Adequate"
INADEQUATE = "Inadequate"
VERDICTS = (ADEQUATE, INADEQUATE)


@dataclass(frozen=True)
class RatingRecord:
    study_id: str
    prediction_id: str
    verdict: str
    rater: str
    timestamp: float
    model_version: int

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise DataError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")

    def as_json(self) -> str:
        return json.dumps({
            "study": self.study_id, "prediction": self.prediction_id,
            "verdict": self.verdict, "rater": self.rater,
            "ts": self.timestamp, "model_version": self.model_version,
        }, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "RatingRecord":
        d = json.loads(line)
        return RatingRecord(d["study"], d["prediction"], d["verdict"],
                            d["rater"], d["ts"], d["model_version"])


@dataclass(frozen=True)
class FineTunePolicy:
    trigger_count: int = 5          # new Adequate ratings per automatic cycle
    steps: int = 30
    lr_scale: float = 0.1           # of the training schedule's peak
    min_samples: int = 2
    replay_mix: float = 0.0         # fraction of original training data mixed in

    def __post_init__(self):
        if self.steps < 1:
            raise SpecError("fine-tune cycles need at least one step")
        if not 0 < self.lr_scale <= 1:
            raise SpecError("lr_scale must be in (0, 1]")
        if not 0 <= self.replay_mix <= 1:
            raise SpecError("replay_mix must be in [0, 1]")


class FeedbackStore:
    def __init__(self, root):
        self.root = Path(root)
        for sub in ("studies", "predictions", "checkpoints"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._log_path = self.root / "ratings.log"
        self._lock = threading.Lock()
        self._ratings: list[RatingRecord] = []
        self._predictions: dict[str, dict] = {}
        self._replay()

    def _replay(self) -> None:
        for meta_path in sorted((self.root / "predictions").glob("*.json")):
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            self._predictions[meta["prediction_id"]] = meta
        if self._log_path.exists():
            for line in self._log_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._ratings.append(RatingRecord.from_json(line))

    # -- studies -----------------------------------------------------------

    def study_dir(self, study_id: str) -> Path:
        return self.root / "studies" / study_id

    def has_study(self, study_id: str) -> bool:
        return (self.study_dir(study_id) / "manifest.json").exists()

    def add_study(self, study: Study) -> str:
        if "/" in study.id or study.id in ("", ".", ".."):
            raise DataError(f"unusable study id {study.id!r}")
        save_study(self.study_dir(study.id), study)
        return study.id

    def get_study(self, study_id: str) -> Study:
        if not self.has_study(study_id):
            raise DataError(f"unknown study {study_id!r}")
        return load_study(self.study_dir(study_id) / "manifest.json")

    def list_study_ids(self) -> list[str]:
        root = self.root / "studies"
        return sorted(p.name for p in root.iterdir() if (p / "manifest.json").exists())

    # -- predictions ---------------------------------------------------------

    def record_prediction(self, study_id: str, labels: np.ndarray, model_version: int) -> str:
        """Persist a predicted label volume; idempotent per (study, version)."""
        if not self.has_study(study_id):
            raise DataError(f"unknown study {study_id!r}")
        pred_id = f"{study_id}--v{model_version}"
        with self._lock:
            if pred_id in self._predictions:
                return pred_id
            vol_path = self.root / "predictions" / f"{pred_id}.vseg"
            meta_path = self.root / "predictions" / f"{pred_id}.json"
            write_volume(vol_path, labels.astype(np.uint8))
            meta = {"prediction_id": pred_id, "study": study_id,
                    "model_version": model_version, "file": vol_path.name}
            tmp = meta_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
            tmp.replace(meta_path)  # the index entry appears only once the blob is durable
            self._predictions[pred_id] = meta
        return pred_id

    def get_prediction(self, pred_id: str) -> np.ndarray:
        if pred_id not in self._predictions:
            raise DataError(f"unknown prediction {pred_id!r}")
        return read_volume(self.root / "predictions" / f"{pred_id}.vseg")[0]

    def predictions_for(self, study_id: str) -> list[dict]:
        return sorted((m for m in self._predictions.values() if m["study"] == study_id),
                      key=lambda m: m["model_version"])

    # -- ratings -------------------------------------------------------------

    def record_rating(self, record: RatingRecord) -> None:
        if record.prediction_id not in self._predictions:
            raise DataError(f"rating references unknown prediction {record.prediction_id!r}")
        with self._lock:
            with open(self._log_path, "a", encoding="utf-8") as f:
                f.write(record.as_json() + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._ratings.append(record)

    def ratings(self) -> list[RatingRecord]:
        return list(self._ratings)

    def summary(self) -> dict:
        counts = {ADEQUATE: 0, INADEQUATE: 0}
        for r in self._ratings:
            counts[r.verdict] += 1
        rated_studies = {r.study_id for r in self._ratings}
        studies = []
        for sid in self.list_study_ids():
            preds = self.predictions_for(sid)
            verdicts = [r.verdict for r in self._ratings if r.study_id == sid]
            manifest = json.loads((self.study_dir(sid) / "manifest.json").read_text(encoding="utf-8"))
            first = next(iter(manifest["files"].values()))
            dims = read_volume(self.study_dir(sid) / first)[0].shape
            studies.append({
                "study": sid,
                "dims": list(dims),
                "prediction": preds[-1]["prediction_id"] if preds else None,
                "model_version": preds[-1]["model_version"] if preds else None,
                "verdict": verdicts[-1] if verdicts else None,
            })
        return {
            "adequate": counts[ADEQUATE],
            "inadequate": counts[INADEQUATE],
            "unrated": len([s for s in studies if s["verdict"] is None]),
            "studies": studies,
        }


def oracle_rater(pred_labels: np.ndarray, gt_labels: np.ndarray, threshold: float = 0.8) -> str:
    """Stand-in for the human rater when ground truth exists."""
    return ADEQUATE if region_dice(pred_labels, gt_labels).mean >= threshold else INADEQUATE


def collect_finetune_set(store: FeedbackStore, policy: FineTunePolicy
                         ) -> tuple[list[tuple[Study, np.ndarray]], list[str]]:
    """Turn Adequate-rated predictions into (study, pseudo-label) pairs.

    A prediction qualifies only if it was rated Adequate and never
    Inadequate; per study the newest qualifying prediction wins. Studies
    with Inadequate ratings and no qualifying prediction land in the
    review queue instead of the training set.
    """
    adequate: dict[str, set[str]] = {}
    inadequate: dict[str, set[str]] = {}
    for r in store.ratings():
        bucket = adequate if r.verdict == ADEQUATE else inadequate
        bucket.setdefault(r.study_id, set()).add(r.prediction_id)

    pairs: list[tuple[Study, np.ndarray]] = []
    queue: list[str] = []
    for sid in store.list_study_ids():
        good = adequate.get(sid, set()) - inadequate.get(sid, set())
        if good:
            newest = max(good, key=lambda pid: store._predictions[pid]["model_version"])
            pairs.append((store.get_study(sid), store.get_prediction(newest)))
        elif sid in inadequate:
            queue.append(sid)
    return pairs, queue


@dataclass
class CycleReport:
    version_before: int
    version_after: int
    sample_count: int
    loss_before: float
    loss_after: float
    losses: list[float]
    checkpoint_path: str
    review_queue: list[str] = field(default_factory=list)


def _set_loss(model: Module, pairs: list[tuple[Study, np.ndarray]]) -> float:
    """Mean training loss of the model on the feedback pairs, no updates."""
    was_training = model.training
    model.eval()
    total = 0.0
    with no_grad():
        for study, labels in pairs:
            logits = model(Tensor(study_input(study, model.dtype)[None]))
            loss, _ = dice_ce_loss(logits, labels.astype(np.int64)[None])
            total += float(loss.data)
    if was_training:
        model.train()
    return total / len(pairs)


def run_finetune_cycle(model: Module, store: FeedbackStore, policy: FineTunePolicy,
                       seed: int = 0, peak_lr: float = 4e-4,
                       replay_studies: list[Study] | None = None) -> CycleReport:
    """One fine-tune pass over the accumulated Adequate-rated feedback.

    Trains ``policy.steps`` steps at a constant ``policy.lr_scale x peak_lr``,
    bumps the model version, and writes a fresh checkpoint while keeping
    every earlier one (manual rollback stays possible).
    """
    pairs, queue = collect_finetune_set(store, policy)
    if len(pairs) < policy.min_samples:
        raise DataError(
            f"fine-tune refused: {len(pairs)} eligible samples, policy requires {policy.min_samples}")

    studies = [Study(id=s.id, modalities=s.modalities, gt_labels=labels, provenance=s.provenance)
               for s, labels in pairs]
    if policy.replay_mix > 0 and replay_studies:
        n_replay = min(len(replay_studies), max(1, round(policy.replay_mix * len(studies))))
        studies = studies + list(replay_studies[:n_replay])

    loss_before = _set_loss(model, pairs)
    cfg = TrainConfig(steps=policy.steps, batch_size=min(2, len(studies)), seed=seed,
                      checkpoint_every=policy.steps, constant_lr=policy.lr_scale * peak_lr)
    result: TrainResult = train(model, studies, cfg, out_dir=None)
    loss_after = _set_loss(model, pairs)

    before = model.version
    model.version = before + 1
    path = store.root / "checkpoints" / f"model-v{model.version:04d}.vckp"
    ckpt.save_model(path, model)

    return CycleReport(
        version_before=before,
        version_after=model.version,
        sample_count=len(pairs),
        loss_before=loss_before,
        loss_after=loss_after,
        losses=[row["loss_total"] for row in result.history],
        checkpoint_path=str(path),
        review_queue=queue,
    )
