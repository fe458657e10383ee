"""Active-learning session driver.

Three protocols share one loop. AL_LR and PRepAL refit the linear probe
each iteration and differ only in the final model (probe vs the wide
proxy), which is why their acquisition logs must match exactly. AL_FT
retrains the proxy itself every iteration, always from the same fixed
initialization, and scores with it.

The driver is stepwise: it exposes a pending batch, accepts labels, and
advances. Benchmark runs and interactive annotation sessions both go
through the same steps, so an oracle-driven HTTP session reproduces a
CLI run index for index.
"""

from __future__ import annotations

import dataclasses
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import (
    ACQUISITION_NAMES,
    AcquisitionContext,
    BatchBALDConfig,
    acquire,
)
from .dataset import (
    DatasetManifest,
    EmbeddingMatrix,
    PoolState,
    UNKNOWN_LABEL,
    init_pool,
    oracle_label,
)
from .errors import IncompatibleBackbonesError, ValidationError
from .models import ProbeModel, TrainConfig, accuracy, train_probe

PROTOCOLS = ("AL_LR", "PRepAL", "AL_FT")
LABEL_SOURCES = ("oracle", "interactive")
SKIP = "skip"

# b=1 runs record holdout accuracy only this often (in labels), larger
# batches at every iteration boundary
SEQUENTIAL_CHECKPOINT = 50


def iteration_seed(seed: int, t: int) -> int:
    """Stable per-iteration seed shared by every protocol."""
    return int(np.random.SeedSequence(entropy=(seed, t)).generate_state(1)[0])


def jaccard_overlap(a, b) -> float:
    """|a n b| / |a u b|, with two empty sets counting as identical."""
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


def _train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "learning_rate": cfg.learning_rate,
        "max_epochs": cfg.max_epochs,
        "minibatch_size": cfg.minibatch_size,
        "early_stop_patience": cfg.early_stop_patience,
        "rng_seed": cfg.rng_seed,
    }


def _train_config_from_dict(doc: dict, path: str) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in doc:
        if key not in known:
            raise ValidationError(f"{path}.{key}: unknown field")
    return TrainConfig(**doc)


@dataclass(frozen=True)
class SessionConfig:
    """Complete description of one run; the CLI config file mirrors this
    field for field."""

    scorer: str
    protocol: str
    T: int = 39
    b: int = 50
    n_init: int = 50
    m: int = 20
    seed: int = 0
    label_source: str = "oracle"
    probe: TrainConfig = field(default_factory=TrainConfig)
    final: TrainConfig = field(default_factory=TrainConfig)
    proxy_width: int = 256
    dropout_rate: float = 0.1
    allow_skip: bool = False
    batchbald: BatchBALDConfig = field(default_factory=BatchBALDConfig)

    def __post_init__(self):
        if self.scorer not in ACQUISITION_NAMES:
            raise ValidationError(
                f"scorer: unknown strategy {self.scorer!r}; "
                f"known: {', '.join(ACQUISITION_NAMES)}"
            )
        if self.protocol not in PROTOCOLS:
            raise ValidationError(
                f"protocol: must be one of {', '.join(PROTOCOLS)}, got {self.protocol!r}"
            )
        # T=0 is a degenerate but legal run: initial fit, no acquisitions,
        # final model on the seed set (used for timing baselines)
        if self.T < 0:
            raise ValidationError("T: iteration count must not be negative")
        if self.b < 1:
            raise ValidationError("b: batch size must be at least 1")
        if self.n_init < 1:
            raise ValidationError("n_init: must be at least 1")
        if self.m < 2:
            raise ValidationError("m: MC sample count must be at least 2")
        if self.label_source not in LABEL_SOURCES:
            raise ValidationError(
                f"label_source: must be one of {', '.join(LABEL_SOURCES)}"
            )
        if self.proxy_width < 1:
            raise ValidationError("proxy_width: must be at least 1")
        if not (0.0 < self.dropout_rate < 1.0):
            raise ValidationError("dropout_rate: must be in (0, 1)")
        if self.scorer == "egl" and self.protocol == "AL_FT":
            raise ValidationError(
                "scorer: egl needs a linear loop model; AL_FT scores with the proxy"
            )

    def validate_for_pool(self, pool_size: int) -> None:
        if self.n_init + self.T * self.b > pool_size:
            raise ValidationError(
                f"b: budget n_init + T*b = {self.n_init + self.T * self.b} "
                f"exceeds pool size {pool_size}"
            )

    def to_dict(self) -> dict:
        return {
            "scorer": self.scorer,
            "protocol": self.protocol,
            "T": self.T,
            "b": self.b,
            "n_init": self.n_init,
            "m": self.m,
            "seed": self.seed,
            "label_source": self.label_source,
            "probe": _train_config_to_dict(self.probe),
            "final": _train_config_to_dict(self.final),
            "proxy_width": self.proxy_width,
            "dropout_rate": self.dropout_rate,
            "allow_skip": self.allow_skip,
            "batchbald": {
                "enumeration_cap": self.batchbald.enumeration_cap,
                "num_config_samples": self.batchbald.num_config_samples,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SessionConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in known:
                raise ValidationError(f"config.{key}: unknown field")
        for name in ("scorer", "protocol"):
            if name not in doc:
                raise ValidationError(f"config.{name}: required field is missing")
        kwargs = dict(doc)
        if "probe" in kwargs:
            kwargs["probe"] = _train_config_from_dict(kwargs["probe"], "config.probe")
        if "final" in kwargs:
            kwargs["final"] = _train_config_from_dict(kwargs["final"], "config.final")
        if "batchbald" in kwargs:
            bb = kwargs["batchbald"]
            for key in bb:
                if key not in ("enumeration_cap", "num_config_samples"):
                    raise ValidationError(f"config.batchbald.{key}: unknown field")
            kwargs["batchbald"] = BatchBALDConfig(**bb)
        return cls(**kwargs)


@dataclass
class IterationRecord:
    t: int
    acquired: list
    scores: list
    acquisition_seconds: float
    retrain_seconds: float
    holdout_accuracy: float | None = None


@dataclass
class RunRecord:
    """Audit trail of one session: what was acquired when, what each
    phase cost, and how good the models got."""

    dataset: str
    config: SessionConfig
    initial_indices: list
    initial_fit_seconds: float = 0.0
    initial_accuracy: float | None = None
    iterations: list = field(default_factory=list)
    ingest_seconds: float = 0.0
    final_training_seconds: float = 0.0
    final_accuracy: float | None = None
    truncated: bool = False
    partial: bool = False

    @property
    def labeled_final(self) -> list:
        out = list(self.initial_indices)
        for it in self.iterations:
            out.extend(it.acquired)
        return sorted(out)

    @property
    def retraining_seconds(self) -> float:
        return self.initial_fit_seconds + sum(
            it.retrain_seconds for it in self.iterations
        )

    @property
    def acquisition_seconds(self) -> float:
        return sum(it.acquisition_seconds for it in self.iterations)

    def acquired_at(self, t: int) -> list:
        """I_t as a sorted list (t=0 gives the initial set)."""
        out = list(self.initial_indices)
        for it in self.iterations[:t]:
            out.extend(it.acquired)
        return sorted(out)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "config": self.config.to_dict(),
            "initial_indices": [int(i) for i in self.initial_indices],
            "initial_fit_seconds": self.initial_fit_seconds,
            "initial_accuracy": self.initial_accuracy,
            "iterations": [
                {
                    "t": it.t,
                    "acquired": [int(i) for i in it.acquired],
                    "scores": [float(s) for s in it.scores],
                    "acquisition_seconds": it.acquisition_seconds,
                    "retrain_seconds": it.retrain_seconds,
                    "holdout_accuracy": it.holdout_accuracy,
                }
                for it in self.iterations
            ],
            "timings": {
                "ingest_seconds": self.ingest_seconds,
                "retraining_seconds": self.retraining_seconds,
                "acquisition_seconds": self.acquisition_seconds,
                "final_training_seconds": self.final_training_seconds,
            },
            "final_accuracy": self.final_accuracy,
            "labeled_final": [int(i) for i in self.labeled_final],
            "truncated": self.truncated,
            "partial": self.partial,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        record = cls(
            dataset=doc["dataset"],
            config=SessionConfig.from_dict(doc["config"]),
            initial_indices=list(doc["initial_indices"]),
            initial_fit_seconds=doc["initial_fit_seconds"],
            initial_accuracy=doc.get("initial_accuracy"),
            ingest_seconds=doc["timings"]["ingest_seconds"],
            final_training_seconds=doc["timings"]["final_training_seconds"],
            final_accuracy=doc.get("final_accuracy"),
            truncated=doc.get("truncated", False),
            partial=doc.get("partial", False),
        )
        for it in doc["iterations"]:
            record.iterations.append(IterationRecord(
                t=it["t"],
                acquired=list(it["acquired"]),
                scores=list(it["scores"]),
                acquisition_seconds=it["acquisition_seconds"],
                retrain_seconds=it["retrain_seconds"],
                holdout_accuracy=it.get("holdout_accuracy"),
            ))
        return record

    def index_csv(self) -> str:
        """Flat audit log: iteration, index, score (blank for the seed set)."""
        buf = io.StringIO()
        buf.write("iteration,index,score\n")
        for idx in self.initial_indices:
            buf.write(f"0,{int(idx)},\n")
        for it in self.iterations:
            for idx, score in zip(it.acquired, it.scores):
                buf.write(f"{it.t},{int(idx)},{score!r}\n")
        return buf.getvalue()


@dataclass
class FinalModel:
    """The model trained once the budget is spent, with its provenance."""

    model: ProbeModel
    protocol: str
    backbone: str
    trained_on: list

    def predict_accuracy(self, embeddings: EmbeddingMatrix, manifest: DatasetManifest):
        holdout = np.asarray(manifest.holdout_indices, dtype=np.int64)
        if holdout.size == 0:
            return None
        labels = manifest.labels_array()[holdout]
        if (labels == UNKNOWN_LABEL).any():
            return None
        return accuracy(self.model, embeddings.features(holdout), labels)


def _final_widths(config: SessionConfig) -> tuple:
    return () if config.protocol == "AL_LR" else (config.proxy_width,)


def train_final_model(
    embeddings: EmbeddingMatrix,
    manifest: DatasetManifest,
    indices,
    config: SessionConfig,
    labels_by_index: dict | None = None,
) -> FinalModel:
    idx = np.sort(np.asarray(list(indices), dtype=np.int64))
    if labels_by_index is None:
        labels = np.asarray(oracle_label(manifest, idx), dtype=np.int64)
    else:
        labels = np.asarray([labels_by_index[int(i)] for i in idx], dtype=np.int64)
    model = train_probe(
        embeddings.features(idx),
        labels,
        manifest.num_classes,
        config.final,
        widths=_final_widths(config),
        dropout_rate=config.dropout_rate,
    )
    return FinalModel(
        model=model,
        protocol=config.protocol,
        backbone=manifest.name,
        trained_on=[int(i) for i in idx],
    )


class SessionDriver:
    """Runs one session step by step.

    States: awaiting_labels (a pending batch wants labels) or complete.
    provide_labels() with the full pending batch advances one iteration:
    extend pool, refit the loop model, record the checkpoint, then either
    score the next batch or train the final model.
    """

    def __init__(
        self,
        embeddings: EmbeddingMatrix,
        manifest: DatasetManifest,
        config: SessionConfig,
        ingest_seconds: float = 0.0,
    ):
        if embeddings.n != manifest.n:
            raise ValidationError(
                f"embeddings have {embeddings.n} rows, manifest says {manifest.n}"
            )
        pool = manifest.pool_indices()
        config.validate_for_pool(pool.size)
        if config.label_source == "oracle":
            pool_labels = manifest.labels_array()[pool]
            if (pool_labels == UNKNOWN_LABEL).any():
                raise ValidationError(
                    "oracle mode requires every pool label in the manifest"
                )

        self.embeddings = embeddings
        self.manifest = manifest
        self.config = config
        self.pool_all = pool
        self.features = embeddings.features()
        self.record = RunRecord(
            dataset=manifest.name,
            config=config,
            initial_indices=[],
            ingest_seconds=ingest_seconds,
        )
        self.labels: dict[int, int] = {}
        self.model: ProbeModel | None = None
        self.t = 0
        self.status = "awaiting_labels"
        self.pending: list[int] = []
        self.pending_scores: list[float] = []
        self.last_step_seconds: float | None = None
        self._pending_is_initial = False

        # known manifest labels are reused even in interactive mode, so the
        # seed batch only goes to the annotator when it genuinely lacks labels
        pool_state = init_pool(manifest, config.seed, config.n_init)
        self.pool_state = pool_state
        initial = list(pool_state.labeled)
        self.record.initial_indices = [int(i) for i in initial]
        known = [i for i in initial if manifest.labels[i] != UNKNOWN_LABEL]
        if len(known) == len(initial):
            for i in initial:
                self.labels[i] = manifest.labels[i]
            self._after_initial_labels()
        else:
            if config.label_source == "oracle":
                raise ValidationError("oracle mode requires labels for the seed set")
            self.pending = [int(i) for i in initial]
            self.pending_scores = [float("nan")] * len(initial)
            self._pending_is_initial = True

    # -- internals ---------------------------------------------------------

    def _labeled_sorted(self) -> np.ndarray:
        return np.sort(np.asarray(list(self.labels), dtype=np.int64))

    def _holdout_eval(self, model: ProbeModel):
        holdout = np.asarray(self.manifest.holdout_indices, dtype=np.int64)
        if holdout.size == 0:
            return None
        labels = self.manifest.labels_array()[holdout]
        if (labels == UNKNOWN_LABEL).any():
            return None
        return accuracy(model, self.features[holdout], labels)

    def _should_checkpoint(self) -> bool:
        if self.config.b > 1:
            return True
        return len(self.labels) % SEQUENTIAL_CHECKPOINT == 0 or self.t == self.config.T

    def _loop_model_params(self):
        if self.config.protocol == "AL_FT":
            return (self.config.proxy_width,), self.config.final
        return (), self.config.probe

    def _fit_loop_model(self) -> float:
        widths, train_cfg = self._loop_model_params()
        labeled = self._labeled_sorted()
        targets = np.asarray([self.labels[int(i)] for i in labeled], dtype=np.int64)
        start = time.perf_counter()
        self.model = train_probe(
            self.features[labeled],
            targets,
            self.manifest.num_classes,
            train_cfg,
            widths=widths,
            dropout_rate=self.config.dropout_rate,
        )
        return time.perf_counter() - start

    def _dynamic_features(self) -> np.ndarray:
        # geometry scorers follow the loop model: static embeddings for the
        # probe protocols, refreshed hidden activations under AL_FT
        if self.config.protocol == "AL_FT":
            return self.model.hidden_activations(self.features)
        return self.features

    def _score_next_batch(self) -> float:
        t_next = self.t + 1
        labeled = self._labeled_sorted()
        candidates = np.setdiff1d(self.pool_all, labeled)
        batch = min(self.config.b, candidates.size)
        if batch < self.config.b:
            self.record.truncated = True
        if batch == 0:
            return 0.0
        start = time.perf_counter()
        ctx = AcquisitionContext(
            model=self.model,
            features=self.features,
            dynamic_features=self._dynamic_features(),
            labeled=labeled,
            candidates=candidates,
            seed=iteration_seed(self.config.seed, t_next),
            mc_samples=self.config.m,
            batchbald=self.config.batchbald,
            train_config=self.config.probe,
        )
        indices, scores = acquire(self.config.scorer, ctx, batch)
        elapsed = time.perf_counter() - start
        self.pending = [int(i) for i in indices]
        self.pending_scores = [float(s) for s in scores]
        return elapsed

    def _after_initial_labels(self):
        fit_seconds = self._fit_loop_model()
        self.record.initial_fit_seconds = fit_seconds
        self.record.initial_accuracy = self._holdout_eval(self.model)
        if self.config.T == 0:
            self._carry_acquisition_seconds = 0.0
            self._finish()
            self.last_step_seconds = fit_seconds
            return
        acq_seconds = self._score_next_batch()
        self._carry_acquisition_seconds = acq_seconds
        if not self.pending:
            self._finish()
        else:
            self.status = "awaiting_labels"
            self.last_step_seconds = fit_seconds + acq_seconds

    def _finish(self):
        start = time.perf_counter()
        final = train_final_model(
            self.embeddings,
            self.manifest,
            sorted(self.labels),
            self.config,
            labels_by_index=self.labels,
        )
        self.record.final_training_seconds = time.perf_counter() - start
        self.final_model = final
        self.record.final_accuracy = self._holdout_eval(final.model)
        self.status = "complete"
        self.pending = []
        self.pending_scores = []

    # -- public stepping API ------------------------------------------------

    @property
    def pending_is_seed(self) -> bool:
        return self._pending_is_initial

    def provide_labels(self, labels: dict) -> None:
        """Label the entire pending batch and advance one iteration.

        Values are class ids; with allow_skip, the string "skip" defers an
        index back to the pool. Partial accumulation is the service's
        concern; the driver wants the whole batch at once.
        """
        if self.status != "awaiting_labels":
            raise ValidationError("session is not awaiting labels")
        pending = set(self.pending)
        got = {int(k): v for k, v in labels.items()}
        if set(got) != pending:
            missing = sorted(pending - set(got))
            extra = sorted(set(got) - pending)
            raise ValidationError(
                f"labels must cover the pending batch exactly; "
                f"missing={missing[:5]}, unexpected={extra[:5]}"
            )
        accepted = {}
        for idx, value in got.items():
            if value == SKIP:
                if not self.config.allow_skip:
                    raise ValidationError(f"index {idx}: skip is not enabled")
                continue
            if not isinstance(value, (int, np.integer)):
                raise ValidationError(f"index {idx}: label must be an int class id")
            if not (0 <= value < self.manifest.num_classes):
                raise ValidationError(
                    f"index {idx}: class {value} outside [0, {self.manifest.num_classes})"
                )
            accepted[idx] = int(value)

        step_start = time.perf_counter()
        if self._pending_is_initial:
            if len(accepted) != len(self.pending):
                raise ValidationError("the seed batch cannot be skipped")
            self.labels.update(accepted)
            self._pending_is_initial = False
            self.pending = []
            self._after_initial_labels()
            return

        self.t += 1
        acquired = [i for i in self.pending if i in accepted]
        scores = [s for i, s in zip(self.pending, self.pending_scores) if i in accepted]
        self.labels.update(accepted)
        self.pool_state.extend(self.t, acquired)
        retrain_seconds = self._fit_loop_model()
        acc = self._holdout_eval(self.model) if self._should_checkpoint() else None
        self.record.iterations.append(IterationRecord(
            t=self.t,
            acquired=acquired,
            scores=scores,
            acquisition_seconds=self._carry_acquisition_seconds,
            retrain_seconds=retrain_seconds,
            holdout_accuracy=acc,
        ))
        if self.t >= self.config.T:
            self._finish()
        else:
            acq_seconds = self._score_next_batch()
            self._carry_acquisition_seconds = acq_seconds
            if not self.pending:
                # nothing left to ask for; close the run early
                self.record.truncated = True
                self._finish()
        self.last_step_seconds = time.perf_counter() - step_start

    def export_record(self) -> RunRecord:
        if self.status != "complete":
            snapshot = dataclasses.replace(self.record)
            snapshot.partial = True
            return snapshot
        return self.record

    # -- persistence ----------------------------------------------------------

    def to_state(self) -> dict:
        """JSON-safe snapshot with everything needed to resume later."""
        return {
            "dataset": self.manifest.name,
            "config": self.config.to_dict(),
            "t": self.t,
            "status": self.status,
            "pending": [int(i) for i in self.pending],
            "pending_scores": [
                float(s) if np.isfinite(s) else None for s in self.pending_scores
            ],
            "pending_is_initial": self._pending_is_initial,
            "labels": {str(k): int(v) for k, v in self.labels.items()},
            "acquisition_log": [
                [int(t), [int(i) for i in batch]]
                for t, batch in self.pool_state.acquisition_log
            ],
            "carry_acquisition_seconds": float(
                getattr(self, "_carry_acquisition_seconds", 0.0)
            ),
            "last_step_seconds": self.last_step_seconds,
            "record": self.record.to_dict(),
        }

    @classmethod
    def from_state(
        cls,
        embeddings: EmbeddingMatrix,
        manifest: DatasetManifest,
        state: dict,
    ) -> "SessionDriver":
        """Rebuild a driver from a to_state snapshot.

        The loop model is deliberately not stored: the next transition
        refits it from the same labeled set and config, which reproduces
        it bit for bit.
        """
        driver = cls.__new__(cls)
        driver.embeddings = embeddings
        driver.manifest = manifest
        driver.config = SessionConfig.from_dict(state["config"])
        driver.pool_all = manifest.pool_indices()
        driver.features = embeddings.features()
        driver.record = RunRecord.from_dict(state["record"])
        driver.labels = {int(k): int(v) for k, v in state["labels"].items()}
        driver.model = None
        driver.t = int(state["t"])
        driver.status = state["status"]
        driver.pending = [int(i) for i in state["pending"]]
        driver.pending_scores = [
            float("nan") if s is None else float(s)
            for s in state["pending_scores"]
        ]
        driver.last_step_seconds = state["last_step_seconds"]
        driver._pending_is_initial = bool(state["pending_is_initial"])
        driver._carry_acquisition_seconds = float(state["carry_acquisition_seconds"])
        log = [
            (int(t), [int(i) for i in batch])
            for t, batch in state["acquisition_log"]
        ]
        labeled = [i for _, batch in log for i in batch]
        driver.pool_state = PoolState(labeled=labeled, acquisition_log=log)
        return driver


def run_session(
    embeddings: EmbeddingMatrix,
    manifest: DatasetManifest,
    config: SessionConfig,
    label_callback=None,
    ingest_seconds: float = 0.0,
) -> RunRecord:
    """Run a whole session. Oracle mode reads labels from the manifest;
    interactive mode asks label_callback(indices) for {index: class}."""
    if config.label_source == "interactive" and label_callback is None:
        raise ValidationError(
            "label_source: interactive runs need a label callback"
        )
    driver = SessionDriver(embeddings, manifest, config, ingest_seconds=ingest_seconds)
    while driver.status == "awaiting_labels":
        pending = list(driver.pending)
        if config.label_source == "oracle":
            labels = dict(zip(pending, oracle_label(manifest, pending)))
        else:
            labels = label_callback(pending)
        driver.provide_labels(labels)
    return driver.record


def run_sequential(
    embeddings: EmbeddingMatrix,
    manifest: DatasetManifest,
    config: SessionConfig,
    label_callback=None,
    ingest_seconds: float = 0.0,
) -> RunRecord:
    """One-at-a-time acquisition; checkpoints every 50 labels so curves
    stay comparable with batched runs at equal label counts."""
    if config.b != 1:
        raise ValidationError("b: run_sequential requires b=1")
    return run_session(
        embeddings, manifest, config,
        label_callback=label_callback, ingest_seconds=ingest_seconds,
    )


def transfer_train(
    indices,
    target_embeddings: EmbeddingMatrix,
    target_manifest: DatasetManifest,
    config: SessionConfig,
    source_n: int | None = None,
) -> FinalModel:
    """Reuse an index set selected on one backbone to train the final
    model on another backbone's representations of the same documents."""
    if source_n is not None and source_n != target_embeddings.n:
        raise IncompatibleBackbonesError(
            f"source backbone has {source_n} rows, target has {target_embeddings.n}"
        )
    if target_embeddings.n != target_manifest.n:
        raise IncompatibleBackbonesError(
            f"target embeddings have {target_embeddings.n} rows, "
            f"manifest says {target_manifest.n}"
        )
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise ValidationError("cannot transfer an empty index set")
    if idx.min() < 0 or idx.max() >= target_embeddings.n:
        raise ValidationError(
            f"index {int(idx.max())} out of range for target with n={target_embeddings.n}"
        )
    return train_final_model(target_embeddings, target_manifest, idx, config)
