"""FastAPI service exposing stateful thinning sessions plus stateless utilities.

A session wraps one engine instance: create it with a config and training
sample, stream batches at it, checkpoint it, restore it later. Sessions
live in process memory; batch processing per session is serialized by a
lock, matching the engine's single-writer contract.
"""

import threading
import uuid
from dataclasses import asdict

import numpy as np
from fastapi import FastAPI, HTTPException

from ..anscombe import anscombe
from ..config import EngineConfig
from ..engine import ObservationBatch, OnlineThinner
from ..metrics import auc_score, best_threshold, detection_rates
from ..synthetic import SyntheticConfig, gen_synthetic
from . import schemas


class _Session:
    def __init__(self, engine):
        self.engine = engine
        self.lock = threading.Lock()
        self.batches_processed = 0


def _rows_to_matrix(rows, name="data"):
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise HTTPException(422, f"{name} must be a non-empty list of equal-length rows")
    return arr.T  # service speaks row-observations, the engine columns


def create_app():
    app = FastAPI(title="othin", description="streaming data thinning service")
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()

    def _get(session_id):
        try:
            return sessions[session_id]
        except KeyError:
            raise HTTPException(404, f"no session {session_id}") from None

    def _summary(session_id, sess):
        engine = sess.engine
        cfg = engine.config
        return schemas.SessionSummary(
            session_id=session_id,
            dim=engine.p,
            leaf_count=engine.tree.leaf_count(),
            alpha=cfg.alpha,
            tau=cfg.tau,
            tol=cfg.tol,
            gamma=cfg.gamma,
            noise_var=cfg.noise_var,
            subsample_rate=cfg.subsample_rate,
            batches_processed=sess.batches_processed,
            splits=engine.splits,
            merges=engine.merges,
        )

    @app.post("/sessions", response_model=schemas.SessionSummary)
    def create_session(req: schemas.CreateSessionRequest):
        try:
            config = EngineConfig(**req.config.model_dump())
            engine = OnlineThinner(config)
            engine.fit_initial(_rows_to_matrix(req.training, "training"))
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        session_id = uuid.uuid4().hex
        with registry_lock:
            sessions[session_id] = _Session(engine)
        return _summary(session_id, sessions[session_id])

    @app.post("/sessions/restore", response_model=schemas.SessionSummary)
    def restore_session(req: schemas.RestoreSessionRequest):
        try:
            engine = OnlineThinner.from_checkpoint(req.checkpoint)
        except (ValueError, KeyError) as exc:
            raise HTTPException(422, f"bad checkpoint: {exc}") from exc
        session_id = uuid.uuid4().hex
        with registry_lock:
            sessions[session_id] = _Session(engine)
        return _summary(session_id, sessions[session_id])

    @app.get("/sessions/{session_id}", response_model=schemas.SessionSummary)
    def get_session(session_id: str):
        return _summary(session_id, _get(session_id))

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        with registry_lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(404, f"no session {session_id}")
        return {"deleted": session_id}

    @app.post("/sessions/{session_id}/batches", response_model=schemas.ProcessBatchResponse)
    def process_batch(session_id: str, req: schemas.ProcessBatchRequest):
        sess = _get(session_id)
        data = _rows_to_matrix(req.data)
        with sess.lock:
            t = req.time_index if req.time_index is not None else sess.batches_processed
            try:
                records, _ = sess.engine.process_batch(ObservationBatch(t, data))
            except ValueError as exc:
                raise HTTPException(422, str(exc)) from exc
            sess.batches_processed += 1
            return schemas.ProcessBatchResponse(
                observations=[
                    schemas.ScoredObservationModel(
                        t=r.time_index, i=r.column_index, score=r.score,
                        leaf=r.assigned_leaf, flagged=r.flagged,
                    )
                    for r in records
                ],
                flagged_indices=[r.column_index for r in records if r.flagged],
                leaf_count=sess.engine.tree.leaf_count(),
                cum_error=sess.engine.tree.cum_error,
            )

    @app.post("/sessions/{session_id}/score", response_model=schemas.ScoreResponse)
    def score(session_id: str, req: schemas.ScoreRequest):
        sess = _get(session_id)
        data = _rows_to_matrix(req.data)
        with sess.lock:
            try:
                scores = [sess.engine.score(data[:, i]) for i in range(data.shape[1])]
            except ValueError as exc:
                raise HTTPException(422, str(exc)) from exc
        return schemas.ScoreResponse(scores=scores)

    @app.get("/sessions/{session_id}/checkpoint", response_model=schemas.CheckpointResponse)
    def checkpoint(session_id: str):
        sess = _get(session_id)
        with sess.lock:
            return schemas.CheckpointResponse(checkpoint=sess.engine.to_checkpoint())

    @app.post("/anscombe", response_model=schemas.AnscombeResponse)
    def anscombe_transform(req: schemas.AnscombeRequest):
        try:
            out = anscombe(np.asarray(req.counts, dtype=np.float64))
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return schemas.AnscombeResponse(transformed=out.tolist())

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        try:
            config = SyntheticConfig(**req.model_dump())
            X, labels = gen_synthetic(config)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return schemas.SynthResponse(data=X.T.tolist(), labels=labels.tolist())

    @app.post("/metrics", response_model=schemas.MetricsResponse)
    def metrics(req: schemas.MetricsRequest):
        scores = np.asarray(req.scores, dtype=np.float64)
        labels = np.asarray(req.labels)
        try:
            if req.best or req.tau is None:
                _, m = best_threshold(scores, labels)
            else:
                m = detection_rates(scores, labels, req.tau)
            area = auc_score(scores, labels)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return schemas.MetricsResponse(**asdict(m), auc=area)

    return app


app = create_app()
