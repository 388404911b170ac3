"""HTTP service exposing prediction and consultation over the trained pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .consult import ConsultPolicy, SessionStore, finalize, post_message
from .errors import (
    Busy,
    EmptyDialogue,
    EmptyMessage,
    HealthTriageError,
    NotPredicted,
    SessionClosed,
    UnknownSession,
)
from .pipeline import Demographics, EPR, TrainedPipeline, predict_report

log = logging.getLogger(__name__)

DEFAULT_CORS = ("http://localhost:3000", "http://localhost:5173", "http://127.0.0.1:5173")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    artifacts_dir: str = "artifacts"
    provider_file: str | None = None
    answer_table_file: str | None = None
    cors_origins: tuple[str, ...] = DEFAULT_CORS
    session_ttl_seconds: float = 3600.0
    session_snapshot_file: str | None = None
    min_user_turns: int = 2
    max_user_turns: int = 8


class DemographicsModel(BaseModel):
    age: int | None = None
    sex: str | None = None


class PredictRequest(BaseModel):
    narrative: str
    demographics: DemographicsModel | None = None


class DiagnosisModel(BaseModel):
    report_id: str
    probabilities: dict[str, float]
    predicted: list[str]
    advice: str | None = None


class SessionCreated(BaseModel):
    session_id: str


class MessageRequest(BaseModel):
    text: str


class AssistantReply(BaseModel):
    kind: str
    text: str
    state: str


class TurnModel(BaseModel):
    role: str
    text: str


class TranscriptResponse(BaseModel):
    session_id: str
    state: str
    turns: list[TurnModel]
    result: DiagnosisModel | None = None


class ModelInfo(BaseModel):
    label_names: list[str]
    n_features: int
    manifest: dict[str, str | int | None]
    mode: str


def create_app(tp: TrainedPipeline, config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    tp.check_digests()
    store = SessionStore(
        ttl_seconds=config.session_ttl_seconds,
        snapshot_path=config.session_snapshot_file,
    )
    policy = ConsultPolicy(
        min_user_turns=config.min_user_turns,
        max_user_turns=config.max_user_turns,
    )
    app = FastAPI(title="healthtriage", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def on_validation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(HealthTriageError)
    async def on_domain_error(request: Request, exc: HealthTriageError):
        if isinstance(exc, UnknownSession):
            status = 404
        elif isinstance(exc, (Busy, SessionClosed, NotPredicted)):
            status = 409
        elif isinstance(exc, (EmptyMessage, EmptyDialogue)):
            status = 400
        else:
            status = 500
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/model/info", response_model=ModelInfo)
    def model_info():
        return ModelInfo(
            label_names=tp.model.label_names,
            n_features=len(tp.model.feature_names),
            manifest=tp.manifest,
            mode=tp.config.mode.kind,
        )

    @app.post("/v1/predict", response_model=DiagnosisModel)
    def predict(body: PredictRequest):
        if not body.narrative.strip():
            return JSONResponse(status_code=400, content={"detail": "narrative is empty"})
        demo = body.demographics or DemographicsModel()
        epr = EPR(
            report_id="api-request",
            narrative=body.narrative,
            demographics=Demographics(age=demo.age, sex=demo.sex),
            source="report",
        )
        return DiagnosisModel(**predict_report(tp, epr).to_dict())

    @app.post("/v1/sessions", response_model=SessionCreated, status_code=200)
    def open_session():
        session = store.open_session()
        return SessionCreated(session_id=session.session_id)

    @app.post("/v1/sessions/{session_id}/messages", response_model=AssistantReply)
    def send_message(session_id: str, body: MessageRequest):
        session = store.get(session_id)
        reply = post_message(session, body.text, tp, policy)
        store.snapshot(session)
        return AssistantReply(kind=reply.kind, text=reply.text, state=session.state)

    @app.get("/v1/sessions/{session_id}", response_model=TranscriptResponse)
    def get_session(session_id: str):
        session = store.get(session_id)
        return TranscriptResponse(
            session_id=session.session_id,
            state=session.state,
            turns=[TurnModel(role=t.role, text=t.text) for t in session.turns],
            result=DiagnosisModel(**session.result.to_dict()) if session.result else None,
        )

    @app.post("/v1/sessions/{session_id}/finalize", response_model=DiagnosisModel)
    def finalize_session(session_id: str):
        session = store.get(session_id)
        result = finalize(session)
        store.snapshot(session)
        return DiagnosisModel(**result.to_dict())

    return app
