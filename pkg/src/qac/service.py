"""HTTP serving: completions, selection feedback, and user lifecycle.

Completion requests are read-only over the shared parameters and may run
concurrently; selection feedback serializes per user and bumps the user's
embedding version, which invalidates that user's cached adapted weights.
Selections apply synchronously by default; ``defer_updates=k`` batches them
and flushes every k selections.
"""

from __future__ import annotations

import threading
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .archive import ModelArchive
from .complete import BeamConfig, WeightCache, beam_search
from .corpus import encode_query, normalize_query
from .errors import UnknownUserError
from .model import sequence_nll
from .train import AdadeltaState, OnlineConfig, online_update, spawn_user


class CompletionService:
    """Thread-safe facade over a loaded model."""

    def __init__(
        self,
        archive: ModelArchive,
        beam: BeamConfig | None = None,
        online: OnlineConfig | None = None,
        defer_updates: int = 1,
    ):
        self.params = archive.params
        self.config = archive.config
        self.vocab = archive.vocab
        self.users = archive.users
        self.beam = beam or BeamConfig()
        self.online = online or OnlineConfig()
        self.defer_updates = max(1, defer_updates)
        self.cache = WeightCache(self.params, self.config)
        self.ada = AdadeltaState(rho=self.online.rho, eps=self.online.eps)
        self._table_lock = threading.Lock()
        self._user_locks: dict[int, threading.Lock] = {}
        self._pending: dict[int, list[str]] = {}

    def _lock_for(self, user_id: int) -> threading.Lock:
        with self._table_lock:
            lock = self._user_locks.get(user_id)
            if lock is None:
                lock = self._user_locks[user_id] = threading.Lock()
            return lock

    def create_user(self) -> int:
        with self._table_lock:
            return spawn_user(self.users, self.ada)

    def complete(self, user_id: int, prefix: str, top_n: int) -> list[dict]:
        prefix = normalize_query(prefix)
        if not prefix:
            raise ValueError("prefix is empty after normalization")
        beam = BeamConfig(
            beam_width=self.beam.beam_width,
            branching=self.beam.branching,
            max_completion_chars=self.beam.max_completion_chars,
            top_n=top_n,
        )
        with self._lock_for(user_id):
            ranked = beam_search(
                self.params, self.config, self.users, user_id, prefix,
                self.vocab, beam, self.cache,
            )
        return [
            {"text": text, "logprob": lp, "rank": rank}
            for rank, (text, lp) in enumerate(ranked, start=1)
        ]

    def select(self, user_id: int, query: str) -> None:
        query = normalize_query(query)
        if not query:
            raise ValueError("query is empty after normalization")
        with self._lock_for(user_id):
            self.users.version(user_id)  # raises for unknown users
            queue = self._pending.setdefault(user_id, [])
            queue.append(query)
            if len(queue) >= self.defer_updates:
                for q in queue:
                    online_update(
                        self.params, self.config, self.users, self.ada,
                        user_id, encode_query(self.vocab, q), self.online.lr,
                    )
                    self.cache.invalidate(user_id)
                queue.clear()

    def nll(self, user_id: int, query: str) -> float:
        query = normalize_query(query)
        if not query:
            raise ValueError("query is empty after normalization")
        with self._lock_for(user_id):
            return sequence_nll(
                self.params, self.config, self.users, user_id,
                encode_query(self.vocab, query),
            )


class SelectBody(BaseModel):
    user_id: int
    query: str


def _error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


def build_app(service: CompletionService | None, ui_dir: str | None = None) -> FastAPI:
    """HTTP surface. ``service=None`` yields 503s until a model is loaded."""
    app = FastAPI(title="qac", docs_url=None, redoc_url=None)
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def _on_validation(request: Request, exc: RequestValidationError):
        return _error(400, "bad_request", str(exc.errors()[:1]))

    def _svc() -> CompletionService:
        svc = app.state.service
        if svc is None:
            raise LookupError("model not loaded")
        return svc

    @app.get("/health")
    def health():
        return {"status": "ok", "model_loaded": app.state.service is not None}

    @app.post("/users", status_code=201)
    def create_user():
        try:
            svc = _svc()
        except LookupError:
            return _error(503, "unavailable", "model not loaded")
        return {"user_id": svc.create_user()}

    @app.get("/complete")
    def complete(user_id: int, prefix: str = "", top_n: int = 10):
        try:
            svc = _svc()
        except LookupError:
            return _error(503, "unavailable", "model not loaded")
        if not 1 <= top_n <= 10:
            return _error(400, "bad_request", "top_n must be in 1..10")
        try:
            completions = svc.complete(user_id, prefix, top_n)
        except UnknownUserError:
            return _error(404, "unknown_user", f"no user {user_id}")
        except ValueError as exc:
            return _error(400, "bad_request", str(exc))
        return {"completions": completions}

    @app.post("/select", status_code=204)
    def select(body: SelectBody):
        try:
            svc = _svc()
        except LookupError:
            return _error(503, "unavailable", "model not loaded")
        try:
            svc.select(body.user_id, body.query)
        except UnknownUserError:
            return _error(404, "unknown_user", f"no user {body.user_id}")
        except ValueError as exc:
            return _error(400, "bad_request", str(exc))
        return Response(status_code=204)

    @app.get("/nll")
    def nll(user_id: int, query: str = ""):
        try:
            svc = _svc()
        except LookupError:
            return _error(503, "unavailable", "model not loaded")
        try:
            value = svc.nll(user_id, query)
        except UnknownUserError:
            return _error(404, "unknown_user", f"no user {user_id}")
        except ValueError as exc:
            return _error(400, "bad_request", str(exc))
        return {"nll": value}

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
