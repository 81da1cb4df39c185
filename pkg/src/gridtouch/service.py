"""HTTP retouching service: generate with adjustable attributes, record
satisfy/unsatisfy feedback, and report per-session operation counts.

Sessions mirror the interactive loop: every successful generate increments
the session's operation counter until the user marks it satisfied; counts
past the failure limit are reported as 15 with failure = true.
"""

from __future__ import annotations

import base64
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .attributes import ScoreDomainError, ScoreOptions, score_json, score_vector
from .conditioning import ConditioningError, validate_condition
from .diffusion import DiffusionError, GridTouchModel, sample
from .imagecore import Image, ImageError, decode_image, encode_png, load_image

MAX_UPLOAD_BYTES = 32 * 1024 * 1024
MAX_IMAGE_SIDE = 4096
OPERATION_FAILURE_LIMIT = 15


@dataclass
class Session:
    id: str
    raw_ops: int = 0
    satisfied: bool = False
    history: list = field(default_factory=list)

    @property
    def operations(self) -> int:
        return min(self.raw_ops, OPERATION_FAILURE_LIMIT)

    @property
    def failure(self) -> bool:
        return self.raw_ops > OPERATION_FAILURE_LIMIT

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "operations": self.operations,
            "failure": self.failure,
            "satisfied": self.satisfied,
            "history": self.history,
        }


class RetouchBody(BaseModel):
    image_b64: str | None = None
    image_path: str | None = None
    c: list[float]
    steps: int = 20
    seed: int | None = None
    extended: bool = False
    session: str | None = None


class FeedbackBody(BaseModel):
    session: str
    satisfied: bool


def safe_scores_dict(img: Image, opts: ScoreOptions) -> dict:
    """Score dict with null entries where a score is undefined."""
    from .attributes import brightness, cct, colorfulness, contrast

    out = {}
    for key, fn in (
        ("colorfulness", colorfulness),
        ("contrast", lambda i: contrast(i, opts)),
        ("cct_kelvin", lambda i: cct(i, opts)),
        ("brightness", brightness),
    ):
        try:
            out[key] = fn(img)
        except ScoreDomainError:
            out[key] = None
    return out


def create_app(
    checkpoint: str | Path | None = None,
    score_opts: ScoreOptions = ScoreOptions(),
    session_log: str | Path | None = None,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="gridtouch")
    model: GridTouchModel | None = None
    if checkpoint is not None:
        from .training import load_checkpoint

        model = load_checkpoint(checkpoint)
    sessions: dict[str, Session] = {}
    lock = threading.Lock()
    log_path = Path(session_log) if session_log else None

    app.state.model = model
    app.state.sessions = sessions
    app.state.score_opts = score_opts

    def append_log(event: dict) -> None:
        if log_path is not None:
            import json as _json

            with lock:
                with log_path.open("a") as fh:
                    fh.write(_json.dumps(event) + "\n")

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors())})

    @app.post("/retouch")
    def retouch(body: RetouchBody):
        if app.state.model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        try:
            c = validate_condition(body.c, extended=body.extended)
        except ConditioningError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if body.steps < 1:
            raise HTTPException(status_code=400, detail="steps must be >= 1")
        if body.steps > app.state.model.cfg.timesteps:
            raise HTTPException(
                status_code=400,
                detail=f"steps must be <= {app.state.model.cfg.timesteps}",
            )
        if (body.image_b64 is None) == (body.image_path is None):
            raise HTTPException(
                status_code=400, detail="provide exactly one of image_b64 / image_path"
            )
        if body.image_b64 is not None:
            if len(body.image_b64) * 3 // 4 > MAX_UPLOAD_BYTES:
                raise HTTPException(status_code=413, detail="image too large")
            try:
                buf = base64.b64decode(body.image_b64, validate=True)
            except Exception:
                raise HTTPException(status_code=400, detail="invalid base64 image")
            if len(buf) > MAX_UPLOAD_BYTES:
                raise HTTPException(status_code=413, detail="image too large")
            try:
                img = decode_image(buf)
            except ImageError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        else:
            p = Path(body.image_path)
            if not p.exists():
                raise HTTPException(status_code=404, detail=f"no such image: {p}")
            if p.stat().st_size > MAX_UPLOAD_BYTES:
                raise HTTPException(status_code=413, detail="image too large")
            try:
                img = load_image(p)
            except ImageError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        if max(img.width, img.height) > MAX_IMAGE_SIDE:
            raise HTTPException(
                status_code=413, detail=f"image side exceeds {MAX_IMAGE_SIDE}px"
            )

        seed = body.seed
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**31))

        t0 = time.perf_counter()
        try:
            result = sample(app.state.model, img, c, n_steps=body.steps, seed=seed)
        except DiffusionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        ms = (time.perf_counter() - t0) * 1000.0

        with lock:
            sid = body.session or uuid.uuid4().hex
            sess = sessions.setdefault(sid, Session(id=sid))
            if not sess.satisfied:
                sess.raw_ops += 1
            sess.history.append(
                {"c": [float(v) for v in c], "seed": seed, "timestamp": time.time()}
            )
        append_log({"event": "generate", "session": sid, "seed": seed,
                    "c": [float(v) for v in c]})

        return JSONResponse(
            {
                "image_b64": base64.b64encode(encode_png(result.image)).decode("ascii"),
                "scores": safe_scores_dict(result.image, app.state.score_opts),
                "seed": seed,
                "ms": ms,
                "session": sid,
            }
        )

    @app.post("/feedback")
    def feedback(body: FeedbackBody):
        with lock:
            sess = sessions.get(body.session)
            if sess is None:
                raise HTTPException(status_code=404, detail="unknown session")
            if body.satisfied:
                sess.satisfied = True
        append_log({"event": "feedback", "session": body.session,
                    "satisfied": body.satisfied})
        return {"ok": True, "session": sess.to_dict()}

    @app.get("/session/{sid}")
    def session_stats(sid: str):
        with lock:
            sess = sessions.get(sid)
            if sess is None:
                raise HTTPException(status_code=404, detail="unknown session")
            return sess.to_dict()

    @app.get("/score")
    def score(path: str):
        p = Path(path)
        if not p.exists():
            raise HTTPException(status_code=404, detail=f"no such image: {p}")
        try:
            s = score_vector(load_image(p), app.state.score_opts)
        except (ImageError, ScoreDomainError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        # byte-identical to the CLI `score` output
        return Response(content=score_json(s), media_type="application/json")

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "model_loaded": app.state.model is not None}

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(frontend_dir), html=True), name="ui")

    return app
