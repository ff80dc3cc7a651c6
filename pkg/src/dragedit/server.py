"""HTTP session API for interactive drag editing.

One process serves one checkpoint.  Sessions move strictly through
created -> inverted -> optimizing -> denoising -> done (or failed);
each drag job runs on a worker thread and publishes immutable progress
snapshots, so pollers and the SSE stream never block the optimizer.
"""

from __future__ import annotations

import asyncio
import base64
import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .autodiff import Tensor
from .diffusion import DdimSchedule, NoiseSchedule, ddim_sample
from .drag import (
    DragInstruction,
    DragParams,
    SessionStatus,
    capture_state,
    propagate_and_denoise,
    run_drag_optimization,
)
from .imgio import ImageFormatError, decode_png, encode_png
from .metrics import fidelity_mse, mean_distance
from .unet import FeatureTap, UNet

__all__ = ["create_app"]

_ORDER = ["created", "inverted", "optimizing", "denoising", "done", "failed"]


@dataclass
class _Session:
    id: str
    image: np.ndarray                      # [H, W] in [-1, 1]
    state: str = "created"
    instruction: DragInstruction | None = None
    params: DragParams | None = None
    iteration: int = 0
    losses: dict = field(default_factory=lambda: {"alignment": 0.0, "mask": 0.0})
    anchors: list = field(default_factory=list)
    trajectory_len: int = 0
    result_png: bytes | None = None
    md: float | None = None
    fidelity: float | None = None
    status: str | None = None
    error: str | None = None

    def advance(self, state: str) -> None:
        if _ORDER.index(state) < _ORDER.index(self.state):
            raise RuntimeError(f"state regression {self.state} -> {state}")
        self.state = state

    def progress_snapshot(self) -> dict:
        return {
            "state": self.state,
            "iteration": self.iteration,
            "losses": dict(self.losses),
            "anchors": [list(a) for a in self.anchors],
            "trajectory_len": self.trajectory_len,
        }


class CreateSessionBody(BaseModel):
    image_png_base64: str | None = None
    sample_seed: int | None = None


class PairBody(BaseModel):
    a: list[float] = Field(min_length=2, max_length=2)
    b: list[float] = Field(min_length=2, max_length=2)


class ParamsBody(BaseModel):
    t_edit: int = 35
    t_refine: int = 10
    r1: int = 1
    r2: int = 3
    lambda_: float = Field(default=0.1, alias="lambda")
    lr: float = 0.01
    max_steps: int = 80
    propagate: bool = True
    tap: str = "bottleneck"

    model_config = {"populate_by_name": True}


class DragBody(BaseModel):
    pairs: list[PairBody]
    mask_png_base64: str | None = None
    params: ParamsBody | None = None


def create_app(model: UNet, sched: NoiseSchedule, ddim: DdimSchedule,
               model_name: str = "dragedit-toy", data_dir: str | None = None,
               max_workers: int = 2, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="dragedit")
    sessions: dict[str, _Session] = {}
    lock = threading.Lock()
    pool = ThreadPoolExecutor(max_workers=max_workers)
    out_dir = Path(data_dir) if data_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    size = model.config.image_size

    def get_session(session_id: str) -> _Session:
        with lock:
            sess = sessions.get(session_id)
        if sess is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return sess

    @app.get("/api/health")
    def health():
        return {"model": model_name, "image_size": size, "K": ddim.k_steps}

    @app.post("/api/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if (body.image_png_base64 is None) == (body.sample_seed is None):
            raise HTTPException(422, "provide exactly one of image_png_base64 or sample_seed")
        if body.sample_seed is not None:
            rng = np.random.default_rng(body.sample_seed)
            noise = Tensor(rng.standard_normal(
                (1, model.config.in_channels, size, size)).astype(np.float32))
            x0 = ddim_sample(model, noise, ddim.k_steps, 0, sched, ddim)
            image = np.clip(x0.data[0, 0], -1.0, 1.0)
        else:
            try:
                image = decode_png(base64.b64decode(body.image_png_base64))
            except (ImageFormatError, ValueError) as exc:
                raise HTTPException(422, f"bad image: {exc}") from None
            if image.shape != (size, size):
                raise HTTPException(422, f"image must be {size}x{size}, got {image.shape}")
        sess = _Session(id=uuid.uuid4().hex, image=image)
        with lock:
            sessions[sess.id] = sess
        return {"id": sess.id,
                "image_png_base64": base64.b64encode(encode_png(image)).decode()}

    def run_job(sess: _Session):
        try:
            dp = sess.params
            assert dp is not None and sess.instruction is not None
            x0 = Tensor(sess.image[None, None])
            session = capture_state(model, x0, sess.instruction, dp, sched, ddim)
            with lock:
                sess.advance("inverted")
                sess.anchors = session.anchors.tolist()
                sess.trajectory_len = len(session.trajectory)
                sess.advance("optimizing")

            def progress(s):
                align, mask_l = s.latest_losses()
                with lock:
                    sess.iteration = s.iterations
                    sess.losses = {"alignment": align, "mask": mask_l}
                    sess.anchors = s.anchors.tolist()
                    sess.trajectory_len = len(s.trajectory)

            run_drag_optimization(model, session, dp, progress=progress)
            with lock:
                sess.advance("denoising")
            edited = propagate_and_denoise(model, session, dp, sched, ddim)
            md = mean_distance(edited, session, model, dp, sched, ddim)
            fid = fidelity_mse(sess.image, edited.data[0, 0],
                               sess.instruction.mask)
            png = encode_png(edited.data[0, 0])
            with lock:
                sess.result_png = png
                sess.md = md
                sess.fidelity = fid
                sess.status = session.status.value
                sess.advance("done")
            if out_dir:
                (out_dir / f"{sess.id}.png").write_bytes(png)
                (out_dir / f"{sess.id}.json").write_text(json.dumps({
                    "id": sess.id, "status": sess.status, "md": md, "fidelity": fid,
                    "iterations": session.iterations}))
        except Exception as exc:  # job thread: surface via session state
            with lock:
                sess.error = str(exc)
                sess.status = SessionStatus.FAILED.value
                sess.state = "failed"

    @app.post("/api/sessions/{session_id}/drag", status_code=202)
    def start_drag(session_id: str, body: DragBody):
        sess = get_session(session_id)
        with lock:
            if sess.state in ("inverted", "optimizing", "denoising"):
                raise HTTPException(409, "drag already running")
            if sess.state in ("done", "failed"):
                raise HTTPException(409, f"session already {sess.state}")
        if not body.pairs:
            raise HTTPException(422, "at least one drag pair is required")
        pairs = []
        for p in body.pairs:
            a, b = (p.a[0], p.a[1]), (p.b[0], p.b[1])
            if a == b:
                raise HTTPException(422, "degenerate drag pair")
            for (x, y) in (a, b):
                if not (0 <= x <= size - 1 and 0 <= y <= size - 1):
                    raise HTTPException(422, f"point ({x},{y}) outside image")
            pairs.append((a, b))
        mask = None
        if body.mask_png_base64:
            try:
                m = decode_png(base64.b64decode(body.mask_png_base64))
            except (ImageFormatError, ValueError) as exc:
                raise HTTPException(422, f"bad mask: {exc}") from None
            if m.shape != (size, size):
                raise HTTPException(422, f"mask must be {size}x{size}")
            mask = (m > 0.0).astype(np.float32)
        pb = body.params or ParamsBody()
        try:
            dp = DragParams(t_edit=pb.t_edit, t_refine=pb.t_refine, r1=pb.r1,
                            r2=pb.r2, lam=pb.lambda_, lr=pb.lr,
                            max_steps=pb.max_steps, propagate=pb.propagate,
                            optimized_tap=FeatureTap.parse(pb.tap))
            if dp.t_edit > ddim.k_steps:
                raise ValueError(f"t_edit {dp.t_edit} exceeds schedule length {ddim.k_steps}")
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None
        with lock:
            sess.instruction = DragInstruction(pairs=pairs, mask=mask)
            sess.params = dp
        pool.submit(run_job, sess)
        return {"job": "started"}

    @app.get("/api/sessions/{session_id}/progress")
    def progress(session_id: str):
        sess = get_session(session_id)
        with lock:
            return sess.progress_snapshot()

    @app.get("/api/sessions/{session_id}/events")
    async def events(session_id: str):
        sess = get_session(session_id)

        async def stream():
            last: dict | None = None
            while True:
                with lock:
                    snap = sess.progress_snapshot()
                if snap != last:
                    yield f"data: {json.dumps(snap)}\n\n"
                    last = snap
                if snap["state"] in ("done", "failed"):
                    break
                await asyncio.sleep(0.05)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/api/sessions/{session_id}/result")
    def result(session_id: str):
        sess = get_session(session_id)
        with lock:
            if sess.state == "failed":
                raise HTTPException(409, f"session failed: {sess.error}")
            if sess.state != "done" or sess.result_png is None:
                raise HTTPException(409, f"session is {sess.state}, not done")
            return {
                "image_png_base64": base64.b64encode(sess.result_png).decode(),
                "md": sess.md,
                "fidelity": sess.fidelity,
                "status": sess.status,
            }

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
