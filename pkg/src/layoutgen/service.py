"""HTTP generation service wrapping task construction and decoding.

JSON over HTTP/1.1 with server-sent events for step-by-step trajectories.
Request handling is stateless: the model is read-only after load, every
request decodes with its own seeded stream, and identical request bodies
with the same seed produce identical responses.  A bounded worker pool
guards the process; overflow returns 429 and decodes that exceed the
request timeout return 500 with code "timeout".
"""
from __future__ import annotations

import concurrent.futures
import json
import threading
import time
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .core import (
    KIND_NAMES,
    KIND_ORDER,
    ContinuousLayout,
    Layout,
    QuantizerConfig,
    layout_to_doc,
    parse_layout,
    quantize,
    validate,
)
from .decode import DecodeResult, decode
from .diffusion import StackSet
from .errors import DataError, LayoutGenError, ParseError
from .metrics import retention
from .model import Denoiser
from .optim import seeded_rng
from .tasks import DECODE_STRATEGIES, TASK_NAMES, GenerationRequest, TaskSpec, build_task
from .train import TrainConfig, load_checkpoint

MAX_STEPS = 1000
DEFAULT_TIMEOUT_S = 30.0


@dataclass
class ModelBundle:
    model: Denoiser
    train_config: TrainConfig
    quantizer: QuantizerConfig
    stacks: StackSet
    version: str


def load_bundle(checkpoint_path: str) -> ModelBundle:
    loaded = load_checkpoint(checkpoint_path)
    cfg = loaded.train_config()
    if cfg is None:
        raise DataError(f"{checkpoint_path} has no embedded train config")
    return ModelBundle(
        model=loaded.model,
        train_config=cfg,
        quantizer=cfg.quantizer(),
        stacks=cfg.stacks(),
        version=loaded.version_hash,
    )


class _SchemaError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(message)
        self.path = path
        self.message = message


def _error_body(code: str, message: str, path: str | None = None) -> dict:
    body: dict = {"error": {"code": code, "message": message}}
    if path is not None:
        body["error"]["path"] = path
    return body


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise _SchemaError(path, message)


def _parse_options(doc: dict) -> dict:
    _expect(isinstance(doc, dict), "$.options", "must be an object")
    allowed = {"task", "strategy", "steps", "seed", "temperature", "clamp", "trajectory"}
    for key in doc:
        _expect(key in allowed, f"$.options.{key}", "unknown option")
    out = {
        "task": doc.get("task"),
        "strategy": doc.get("strategy", "confidence-topk"),
        "steps": doc.get("steps"),
        "seed": doc.get("seed"),
        "temperature": doc.get("temperature", 1.0),
        "clamp": doc.get("clamp", False),
        "trajectory": doc.get("trajectory", False),
    }
    if out["task"] is not None:
        _expect(out["task"] in TASK_NAMES, "$.options.task", f"unknown task {out['task']!r}")
    _expect(out["strategy"] in DECODE_STRATEGIES, "$.options.strategy",
            f"unknown strategy {out['strategy']!r}")
    if out["steps"] is not None:
        _expect(isinstance(out["steps"], int) and not isinstance(out["steps"], bool),
                "$.options.steps", "must be an integer")
        _expect(1 <= out["steps"] <= MAX_STEPS, "$.options.steps",
                f"must lie in [1, {MAX_STEPS}]")
    if out["seed"] is not None:
        _expect(isinstance(out["seed"], int) and not isinstance(out["seed"], bool),
                "$.options.seed", "must be an integer")
    _expect(isinstance(out["temperature"], (int, float))
            and not isinstance(out["temperature"], bool)
            and out["temperature"] >= 0, "$.options.temperature",
            "must be a number >= 0")
    _expect(isinstance(out["clamp"], bool), "$.options.clamp", "must be a boolean")
    _expect(isinstance(out["trajectory"], bool), "$.options.trajectory", "must be a boolean")
    return out


def _parse_body(doc) -> tuple[ContinuousLayout, dict]:
    _expect(isinstance(doc, dict), "$", "body must be a JSON object")
    for key in doc:
        _expect(key in ("layout", "options"), f"$.{key}", "unknown field")
    _expect("layout" in doc, "$.layout", "required key missing")
    try:
        cont = parse_layout(doc["layout"])
    except ParseError as exc:
        raise _SchemaError("$.layout" + exc.path[1:], exc.message) from exc
    options = _parse_options(doc.get("options", {}))
    return cont, options


def _commit_doc(commits: list[int]) -> list[dict]:
    return [
        {"element": pos // len(KIND_ORDER), "attr": KIND_NAMES[KIND_ORDER[pos % len(KIND_ORDER)]]}
        for pos in commits
    ]


def create_app(
    checkpoint_path: str | None = None,
    bundle: ModelBundle | None = None,
    max_workers: int = 4,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> FastAPI:
    app = FastAPI(title="layoutgen generation service")
    app.state.bundle = bundle
    app.state.started = time.monotonic()
    app.state.pool = threading.BoundedSemaphore(max_workers)
    app.state.executor = concurrent.futures.ThreadPoolExecutor(max_workers=max_workers)
    app.state.seed_lock = threading.Lock()
    app.state.seed_counter = int(time.time_ns() % 2**31)
    if checkpoint_path:
        app.state.bundle = load_bundle(checkpoint_path)

    def fresh_seed() -> int:
        with app.state.seed_lock:
            app.state.seed_counter += 1
            return app.state.seed_counter

    def prepare(doc) -> tuple[GenerationRequest, Layout, dict]:
        """Validate the body and build the decode request.

        Raises _SchemaError for 400s and DataError for 422s.
        """
        cont, options = _parse_body(doc)
        b: ModelBundle = app.state.bundle
        layout = quantize(cont, b.quantizer)
        report = validate(layout, b.quantizer, n_max=b.train_config.n_max)
        if not report.ok:
            v = report.violations[0]
            raise _SchemaError("$.layout" + v.path[1:], v.message)
        seed = options["seed"] if options["seed"] is not None else fresh_seed()
        steps = options["steps"] if options["steps"] is not None else b.train_config.T
        if options["task"]:
            req = build_task(
                layout, TaskSpec(options["task"]), b.quantizer,
                seeded_rng(seed, "build-task"), steps=steps, seed=seed,
                strategy=options["strategy"],
                temperature=float(options["temperature"]),
                clamp_conditions=options["clamp"],
            )
        else:
            req = GenerationRequest(
                layout=layout, steps=steps, seed=seed, strategy=options["strategy"],
                temperature=float(options["temperature"]),
                clamp_conditions=options["clamp"],
            )
        return req, layout, options

    def run_decode(req: GenerationRequest) -> DecodeResult:
        b: ModelBundle = app.state.bundle
        future = app.state.executor.submit(decode, req, b.model, b.stacks, b.quantizer)
        try:
            return future.result(timeout=timeout_s)
        except concurrent.futures.TimeoutError:
            raise TimeoutError(f"decode exceeded {timeout_s}s") from None

    @app.get("/v1/health")
    def health():
        uptime = time.monotonic() - app.state.started
        if app.state.bundle is None:
            return JSONResponse(
                {"status": "no-model", "model_version": None, "uptime_s": uptime},
                status_code=503,
            )
        return {
            "status": "ok",
            "model_version": app.state.bundle.version,
            "uptime_s": uptime,
        }

    @app.post("/v1/generate")
    async def generate(request: Request):
        if app.state.bundle is None:
            return JSONResponse(_error_body("no-model", "no checkpoint loaded"), 503)
        if not app.state.pool.acquire(blocking=False):
            return JSONResponse(_error_body("overloaded", "worker pool exhausted"), 429)
        try:
            try:
                doc = await request.json()
            except Exception:
                return JSONResponse(_error_body("schema", "body is not valid JSON", "$"), 400)
            try:
                req, input_layout, options = prepare(doc)
            except _SchemaError as exc:
                return JSONResponse(_error_body("schema", exc.message, exc.path), 400)
            except DataError as exc:
                return JSONResponse(_error_body("task", str(exc)), 422)
            t0 = time.perf_counter()
            try:
                result = run_decode(req)
            except TimeoutError as exc:
                return JSONResponse(_error_body("timeout", str(exc)), 500)
            except LayoutGenError as exc:
                return JSONResponse(_error_body("internal", str(exc)), 500)
            b: ModelBundle = app.state.bundle
            body = {
                "layout": layout_to_doc(result.layout, b.quantizer),
                "timing_ms": (time.perf_counter() - t0) * 1e3,
                "seed_used": req.seed,
            }
            kept = retention(req.layout, result.layout)
            if kept is not None:
                body["retention"] = kept
            if options["trajectory"]:
                T = len(result.trajectory.steps)
                body["trajectory"] = [
                    {
                        "step": T - s,
                        "layout": layout_to_doc(step, b.quantizer),
                        "committed": _commit_doc(result.trajectory.commits[s]),
                    }
                    for s, step in enumerate(result.trajectory.steps)
                ]
            return JSONResponse(body)
        finally:
            app.state.pool.release()

    @app.post("/v1/generate/stream")
    async def generate_stream(request: Request):
        if app.state.bundle is None:
            return JSONResponse(_error_body("no-model", "no checkpoint loaded"), 503)
        if not app.state.pool.acquire(blocking=False):
            return JSONResponse(_error_body("overloaded", "worker pool exhausted"), 429)
        handed_off = False
        try:
            try:
                doc = await request.json()
            except Exception:
                return JSONResponse(_error_body("schema", "body is not valid JSON", "$"), 400)
            try:
                req, _, _ = prepare(doc)
            except _SchemaError as exc:
                return JSONResponse(_error_body("schema", exc.message, exc.path), 400)
            except DataError as exc:
                return JSONResponse(_error_body("task", str(exc)), 422)
            b: ModelBundle = app.state.bundle

            def events():
                # The generator owns the pool slot from here on.
                def sse(payload: dict) -> str:
                    return f"data: {json.dumps(payload)}\n\n"

                try:
                    try:
                        result = run_decode(req)
                    except (TimeoutError, LayoutGenError) as exc:
                        yield sse({"error": {"code": "internal", "message": str(exc)}})
                        return
                    T = len(result.trajectory.steps)
                    for s, step in enumerate(result.trajectory.steps):
                        yield sse({
                            "step": T - s,
                            "layout": layout_to_doc(step, b.quantizer),
                            "committed": _commit_doc(result.trajectory.commits[s]),
                        })
                    yield sse(
                        {"done": True, "layout": layout_to_doc(result.layout, b.quantizer)}
                    )
                finally:
                    app.state.pool.release()

            handed_off = True
            return StreamingResponse(events(), media_type="text/event-stream")
        finally:
            if not handed_off:
                app.state.pool.release()

    return app
