"""HTTP service hosting live interactive browsing sessions.

Immutable engine state (catalog, index, features, trained models) is shared
read-only across requests; the session table is guarded, and requests to
one session serialize on a per-session lock.  Three responder modes: rules
(the dataset simulator's responder), agent (the trained GMM sampler), and
random (uniform products, the baseline of the user study setup).
"""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .agent import (
    AgentHyper,
    AgentParams,
    context_mean,
    decode_samples,
    draw_noise,
    gmm_head,
    gumbel_softmax,
    sample_reparam,
)
from .catalog import AttributeIndex, EncodedCatalog, Product, Vocabulary
from .corrnet import ProjectionSpace
from .errors import InvalidQueryError, MMBrowseError
from .numerics import STREAM_SERVICE, stream_rng
from .render import render_product_svg
from .simulator import (
    N_DISPLAY,
    DialogContext,
    FsaConfig,
    ImageGeometry,
    pad_displayed,
    respond_click,
    respond_text,
    update_context_after_click,
)

MODES = ("rules", "agent", "random")
SESSION_CAPACITY = 10_000
SESSION_IDLE_SECONDS = 3600.0


@dataclass
class LiveSession:
    """Server-side state of one interactive browsing session."""

    id: str
    mode: str
    rng: np.random.Generator
    context: DialogContext = field(default_factory=DialogContext)
    rounds: list[dict] = field(default_factory=list)
    window: list[np.ndarray] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_access: float = field(default_factory=time.monotonic)


class Engine:
    """Immutable models plus the mutable session table."""

    def __init__(
        self,
        vocab: Vocabulary,
        products: Sequence[Product],
        encoded: EncodedCatalog,
        space: ProjectionSpace,
        agent_params: AgentParams | None = None,
        agent_hyper: AgentHyper | None = None,
        fsa_config: FsaConfig | None = None,
        seed: int = 0,
        session_capacity: int = SESSION_CAPACITY,
    ):
        self.vocab = vocab
        self.products = {p.id: p for p in products}
        self.all_ids = [p.id for p in products]
        self.index = AttributeIndex.build(products)
        self.geometry = ImageGeometry(encoded)
        self.space = space
        self.agent_params = agent_params
        self.agent_hyper = agent_hyper or AgentHyper()
        self.fsa_config = fsa_config or FsaConfig()
        self.seed = seed
        self.session_capacity = session_capacity
        self._sessions: OrderedDict[str, LiveSession] = OrderedDict()
        self._table_lock = threading.Lock()
        self._counter = 0

    # -- session table -------------------------------------------------

    def create_session(self, mode: str) -> LiveSession:
        if mode not in MODES:
            raise HTTPException(400, f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "agent" and self.agent_params is None:
            raise HTTPException(409, "agent mode unavailable: no agent model loaded")
        with self._table_lock:
            ordinal = self._counter
            self._counter += 1
            rng = stream_rng(self.seed, STREAM_SERVICE, ordinal)
            sid = f"s{ordinal:06d}-{int(rng.integers(0, 2**32)):08x}"
            session = LiveSession(id=sid, mode=mode, rng=rng)
            self._sessions[sid] = session
            self._evict_locked()
        return session

    def get_session(self, session_id: str) -> LiveSession:
        with self._table_lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise HTTPException(404, f"unknown session {session_id!r}")
            session.last_access = time.monotonic()
            self._sessions.move_to_end(session_id)
            return session

    def _evict_locked(self) -> None:
        now = time.monotonic()
        stale = [sid for sid, s in self._sessions.items()
                 if now - s.last_access > SESSION_IDLE_SECONDS]
        for sid in stale:
            del self._sessions[sid]
        while len(self._sessions) > self.session_capacity:
            self._sessions.popitem(last=False)

    # -- responders ----------------------------------------------------

    def _agent_display(self, session: LiveSession) -> tuple[str, ...]:
        hyper = self.agent_hyper
        h = context_mean(session.window[-hyper.window:], hyper.window)
        noise = draw_noise(session.rng, hyper.n_display,
                           self.agent_params.n_gaussians, self.agent_params.k)
        mus, pi = gmm_head(self.agent_params, h)
        samples = np.stack([
            sample_reparam(mus, self.agent_params.L,
                           gumbel_softmax(pi, noise.g[j], hyper.tau), noise.eps[j])
            for j in range(hyper.n_display)
        ])
        return tuple(decode_samples(samples, self.space))

    def _random_display(self, session: LiveSession) -> tuple[str, ...]:
        picks = session.rng.choice(len(self.all_ids), size=min(N_DISPLAY, len(self.all_ids)),
                                   replace=False)
        return pad_displayed([self.all_ids[i] for i in picks], self.all_ids)

    def post_text_query(self, session: LiveSession, tokens: list[str]) -> dict:
        if not tokens:
            raise HTTPException(400, "empty token list")
        unknown = sorted({t for t in tokens if not self.vocab.has_token(t)})
        if unknown:
            raise HTTPException(400, f"unknown tokens: {', '.join(unknown)}")
        with session.lock:
            for t in tokens:
                session.context.apply_token(t, self.vocab)
            if session.mode == "rules":
                try:
                    displayed = respond_text(session.context, self.index, self.all_ids)
                except InvalidQueryError as exc:
                    raise HTTPException(400, str(exc)) from exc
            elif session.mode == "agent":
                session.window.append(
                    self.space.project_text_tokens(tokens, self.vocab))
                displayed = self._agent_display(session)
            else:
                displayed = self._random_display(session)
            record = self._record_round(
                session,
                {"kind": "text", "tokens": list(tokens)},
                displayed,
                n1=None,
            )
        return record

    def post_click(self, session: LiveSession, product_id: str) -> dict:
        with session.lock:
            if not session.rounds or product_id not in session.rounds[-1]["displayed"]:
                raise HTTPException(
                    409, f"product {product_id!r} is not in the current display")
            product = self.products[product_id]
            n1 = None
            if session.mode == "rules":
                shown = [r["displayed"] for r in session.rounds]
                resp = respond_click(product_id, len(session.rounds), shown,
                                     self.geometry, self.fsa_config, session.rng)
                update_context_after_click(session.context, product, self.vocab)
                displayed, n1 = resp.displayed, resp.n1
            elif session.mode == "agent":
                update_context_after_click(session.context, product, self.vocab)
                session.window.append(self.space.project_image_id(product_id))
                displayed = self._agent_display(session)
            else:
                update_context_after_click(session.context, product, self.vocab)
                displayed = self._random_display(session)
            record = self._record_round(
                session,
                {"kind": "image_click", "clicked_product_id": product_id},
                displayed,
                n1=n1,
            )
        return record

    def _record_round(self, session: LiveSession, query: dict,
                      displayed: Sequence[str], n1: int | None) -> dict:
        query = dict(query)
        query["round"] = len(session.rounds)
        record = {
            "round": len(session.rounds),
            "query": query,
            "displayed": list(displayed),
            "images": [f"/api/product/{pid}/image.svg" for pid in displayed],
            "context": session.context.snapshot(),
            "n1": n1,
        }
        session.rounds.append(record)
        return record


class CreateSessionRequest(BaseModel):
    mode: str = "rules"


class QueryRequest(BaseModel):
    tokens: list[str]


class ClickRequest(BaseModel):
    product_id: str


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>mmbrowse</title></head>
<body><h1>mmbrowse service</h1>
<p>The browsing UI bundle was not found. The JSON API is live; see
<a href="/api/vocab">/api/vocab</a>.</p></body></html>
"""


def create_app(engine: Engine, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="mmbrowse", docs_url=None, redoc_url=None)

    @app.post("/api/session")
    def create_session(req: CreateSessionRequest):
        session = engine.create_session(req.mode)
        return {"session_id": session.id, "mode": session.mode}

    @app.post("/api/session/{session_id}/query")
    def post_query(session_id: str, req: QueryRequest):
        session = engine.get_session(session_id)
        try:
            return engine.post_text_query(session, req.tokens)
        except MMBrowseError as exc:
            raise HTTPException(400, str(exc)) from exc

    @app.post("/api/session/{session_id}/click")
    def post_click(session_id: str, req: ClickRequest):
        session = engine.get_session(session_id)
        try:
            return engine.post_click(session, req.product_id)
        except MMBrowseError as exc:
            raise HTTPException(409, str(exc)) from exc

    @app.get("/api/session/{session_id}/history")
    def get_history(session_id: str):
        session = engine.get_session(session_id)
        with session.lock:
            return {"session_id": session.id, "mode": session.mode,
                    "rounds": list(session.rounds)}

    @app.get("/api/product/{product_id}/image.svg")
    def get_image(product_id: str):
        product = engine.products.get(product_id)
        if product is None:
            raise HTTPException(404, f"unknown product {product_id!r}")
        return Response(content=render_product_svg(product),
                        media_type="image/svg+xml")

    @app.get("/api/vocab")
    def get_vocab():
        return JSONResponse(engine.vocab.to_json())

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_PAGE

    return app


def default_ui_dir() -> Path | None:
    """The built frontend bundle, when present next to the working dir."""
    for candidate in (Path("frontend") / "dist", Path(__file__).resolve().parents[2] / "frontend" / "dist"):
        if candidate.is_dir():
            return candidate
    return None
