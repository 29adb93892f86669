"""FastAPI application serving ranked pairs, collecting labels and running fine-tune jobs."""

from __future__ import annotations

import logging
import os
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..pairing import UncertainPair
from ..training import PreferencePair, TrainConfig, finetune
from ..workflow import InputError, rank_molecule_pairs, score_molecules
from . import schemas as S
from .store import Conflict, JobQueue, ModelRegistry, NotFound, SessionStore

log = logging.getLogger(__name__)

DATA_ENV = "FSSCORE_DATA"
UI_ENV = "FSSCORE_UI"


def default_data_root() -> Path:
    return Path(os.environ.get(DATA_ENV, "fsscore-data"))


def jsonable_errors(exc: RequestValidationError) -> list[dict]:
    return [{"loc": list(e.get("loc", ())), "msg": e.get("msg", "")} for e in exc.errors()]


def _session_out(session) -> S.SessionOut:
    return S.SessionOut(session=session.id, source=session.source, n_pairs=len(session.pairs),
                        n_labels=len(session.labels), cursor=session.cursor)


def create_app(data_root: str | Path | None = None, checkpoint: str | Path | None = None,
               ui_dir: str | Path | None = None) -> FastAPI:
    root = Path(data_root) if data_root is not None else default_data_root()
    root.mkdir(parents=True, exist_ok=True)
    sessions = SessionStore(root)
    models = ModelRegistry(root, checkpoint)
    jobs = JobQueue()

    @asynccontextmanager
    async def lifespan(_app):
        yield
        jobs.shutdown()

    app = FastAPI(title="fsscore", version="1", lifespan=lifespan)
    app.state.sessions, app.state.models, app.state.jobs = sessions, models, jobs

    @app.exception_handler(RequestValidationError)
    async def malformed_body(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": jsonable_errors(exc)})

    def session_or_404(sid: str):
        try:
            return sessions.get(sid)
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from None

    @app.post("/api/sessions", response_model=S.SessionOut)
    def create_session(body: S.SessionCreate):
        if (body.pairs is None) == (body.smiles is None):
            raise HTTPException(400, "give exactly one of 'pairs' or 'smiles'")
        try:
            if body.pairs is not None:
                ranked = [UncertainPair(PreferencePair(p.smiles_i, p.smiles_j), p.variance) for p in body.pairs]
                ranked.sort(key=lambda u: -u.variance)
            else:
                ranked = rank_molecule_pairs(models.load(), body.smiles, seed=body.seed,
                                             n_samples=body.n_samples)
        except (InputError, ValueError) as exc:
            raise HTTPException(400, str(exc)) from None
        return _session_out(sessions.create(ranked, body.source))

    @app.get("/api/sessions", response_model=list[S.SessionOut])
    def list_sessions():
        return [_session_out(s) for s in sessions.list()]

    @app.get("/api/sessions/{sid}", response_model=S.SessionOut)
    def get_session(sid: str):
        return _session_out(session_or_404(sid))

    @app.get("/api/pairs/next", response_model=S.NextPairOut)
    def next_pair(session: str = Query(...)):
        s = session_or_404(session)
        k = s.cursor
        remaining = len(s.pairs) - len(s.labels)
        if k >= len(s.pairs):
            return S.NextPairOut(session=s.id, exhausted=True, position=k, remaining=0)
        return S.NextPairOut(session=s.id, exhausted=False, pair=S.PairOut(**s.pairs[k]), position=k,
                             remaining=remaining)

    @app.post("/api/labels", response_model=S.LabelOut)
    def post_label(body: S.LabelIn):
        session_or_404(body.session)
        try:
            fresh = sessions.record(body.session, body.pair_id, body.harder, body.labeler)
        except Conflict as exc:
            raise HTTPException(409, str(exc)) from None
        except KeyError:
            raise HTTPException(400, f"unknown pair_id {body.pair_id} in session {body.session}") from None
        return S.LabelOut(session=body.session, pair_id=body.pair_id, harder=body.harder,
                          status="recorded" if fresh else "duplicate")

    @app.post("/api/finetune", response_model=S.JobOut)
    def post_finetune(body: S.FinetuneIn):
        s = session_or_404(body.session)
        pairs = s.labelled_pairs()
        if not pairs:
            raise HTTPException(400, f"session {s.id} has no labels")
        try:
            base = models.load(body.model)
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from None
        base_id = body.model or models.default
        cfg = TrainConfig(ft_batch_size=body.batch_size, ft_lr=body.lr, max_epochs=body.max_epochs,
                          seed=body.seed)
        if body.validation and len(pairs) <= cfg.val_pairs:
            raise HTTPException(400, f"{len(pairs)} labels; validation needs more than {cfg.val_pairs}")

        def work(job):
            tuned, history = finetune(base, pairs, cfg, validation=body.validation)
            stop = history[-1]
            path = models.add(job.id, tuned, {"parent": base_id, "session": s.id, "n_labels": len(pairs),
                                              "stop_reason": stop.get("reason"), "epochs": stop.get("epoch")})
            return {"model": job.id, "checkpoint": str(path), "epochs": stop.get("epoch"),
                    "stop_reason": stop.get("reason")}

        job = jobs.submit("finetune", work, {"session": s.id, "parent": base_id, "n_labels": len(pairs)})
        return S.JobOut(id=job.id, kind=job.kind, state=job.state, detail=dict(job.detail))

    @app.get("/api/jobs/{jid}", response_model=S.JobOut)
    def get_job(jid: str):
        try:
            job = jobs.get(jid)
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from None
        return S.JobOut(id=job.id, kind=job.kind, state=job.state, detail=dict(job.detail))

    @app.post("/api/score", response_model=S.ScoreOut)
    def post_score(body: S.ScoreIn):
        try:
            model = models.load(body.model)
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from None
        try:
            values = score_molecules(model, body.smiles)
        except InputError as exc:
            raise HTTPException(400, str(exc)) from None
        return S.ScoreOut(model=body.model or models.default,
                          scores=[S.ScoreItem(smiles=s, score=float(v)) for s, v in zip(body.smiles, values)])

    @app.get("/api/models", response_model=S.ModelsOut)
    def get_models():
        infos = []
        for mid in models.ids():
            m = models.load(mid)
            prov = m.provenance
            infos.append(S.ModelInfo(id=mid, architecture=m.config.architecture, parent=prov.get("parent"),
                                     n_labels=prov.get("n_labels")))
        return S.ModelsOut(models=infos, default=models.default)

    ui = Path(ui_dir) if ui_dir is not None else (Path(os.environ[UI_ENV]) if UI_ENV in os.environ else None)
    if ui is not None and ui.is_dir():
        app.mount("/", StaticFiles(directory=ui, html=True), name="ui")

    return app
