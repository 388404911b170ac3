"""Turn-by-turn consultation sessions over the trained pipeline.

A session gathers user messages, asks follow-up questions until a readiness
check passes (bounded by turn limits), then runs the same ingest/predict/
advise path as batch prediction and delivers the result.
"""
from __future__ import annotations

import json
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field

from . import prompts
from .errors import Busy, EmptyMessage, NoPrediction, NotPredicted, SessionClosed, UnknownSession
from .pipeline import DiagnosisResult, TrainedPipeline, generate_advice, ingest_dialog, predict_report
from .providers import PromptRequest

log = logging.getLogger(__name__)

DISCLAIMER = "Automated guidance, not a medical diagnosis; consult a clinician."

GATHERING = "gathering"
PREDICTED = "predicted"
CLOSED = "closed"


@dataclass
class Turn:
    role: str  # user | assistant
    text: str
    timestamp: float


@dataclass
class ConsultSession:
    session_id: str
    state: str = GATHERING
    turns: list[Turn] = field(default_factory=list)
    result: DiagnosisResult | None = None
    touched: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def user_turn_count(self) -> int:
        return sum(1 for t in self.turns if t.role == "user")

    def transcript(self) -> str:
        return "\n".join(f"{t.role}: {t.text}" for t in self.turns)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "state": self.state,
            "turns": [{"role": t.role, "text": t.text, "timestamp": t.timestamp} for t in self.turns],
            "result": self.result.to_dict() if self.result else None,
        }


@dataclass(frozen=True)
class ConsultPolicy:
    min_user_turns: int = 2
    max_user_turns: int = 8


@dataclass(frozen=True)
class Reply:
    kind: str  # follow_up | prediction
    text: str


class SessionStore:
    """In-memory session registry with idle TTL and optional file snapshots."""

    def __init__(self, ttl_seconds: float = 3600.0, snapshot_path=None):
        self.ttl_seconds = ttl_seconds
        self.snapshot_path = snapshot_path
        self._sessions: dict[str, ConsultSession] = {}
        self._lock = threading.Lock()

    def open_session(self) -> ConsultSession:
        session = ConsultSession(session_id=secrets.token_urlsafe(16))
        with self._lock:
            self._sessions[session.session_id] = session
        self.snapshot(session)
        return session

    def get(self, session_id: str) -> ConsultSession:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None and time.time() - session.touched > self.ttl_seconds:
                del self._sessions[session_id]
                session = None
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session

    def snapshot(self, session: ConsultSession) -> None:
        if self.snapshot_path is None:
            return
        with self._lock:
            with open(self.snapshot_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(session.to_dict()) + "\n")

    def load_snapshots(self) -> None:
        """Restore the latest snapshot per session id from the backing file."""
        if self.snapshot_path is None:
            return
        try:
            with open(self.snapshot_path, encoding="utf-8") as fh:
                lines = [line for line in fh if line.strip()]
        except OSError:
            return
        for line in lines:
            rec = json.loads(line)
            session = ConsultSession(
                session_id=rec["session_id"],
                state=rec["state"],
                turns=[Turn(**t) for t in rec["turns"]],
                result=DiagnosisResult(**rec["result"]) if rec.get("result") else None,
            )
            self._sessions[session.session_id] = session


def _is_ready(answer: str) -> bool:
    text = answer.strip().lower()
    return "ready" in text and "not ready" not in text


def post_message(
    session: ConsultSession,
    user_text: str,
    tp: TrainedPipeline,
    policy: ConsultPolicy = ConsultPolicy(),
) -> Reply:
    """Append a user turn and reply with either a follow-up or the prediction."""
    if session.state != GATHERING:
        raise SessionClosed(f"session is {session.state}")
    if not user_text.strip():
        raise EmptyMessage("message text is empty")
    if not session.lock.acquire(blocking=False):
        raise Busy("another message is in flight for this session")
    try:
        session.turns.append(Turn(role="user", text=user_text.strip(), timestamp=time.time()))
        session.touched = time.time()
        n_user = session.user_turn_count()
        ready = False
        if n_user >= policy.min_user_turns:
            readiness = tp.provider.complete(PromptRequest(
                system_text=prompts.READINESS_SYSTEM,
                user_text=session.transcript(),
            ))
            ready = _is_ready(readiness.text) or n_user >= policy.max_user_turns
        if not ready:
            follow_up = tp.provider.complete(PromptRequest(
                system_text=prompts.FOLLOWUP_SYSTEM,
                user_text=session.transcript(),
            ))
            reply = Reply(kind="follow_up", text=follow_up.text)
        else:
            reply = _predict_and_reply(session, tp)
        session.turns.append(Turn(role="assistant", text=reply.text, timestamp=time.time()))
        session.touched = time.time()
        return reply
    finally:
        session.lock.release()


def _predict_and_reply(session: ConsultSession, tp: TrainedPipeline) -> Reply:
    epr = ingest_dialog(
        [(t.role, t.text) for t in session.turns],
        tp.model.label_names,
        report_id=f"session-{session.session_id}",
        source="session",
    )
    result = predict_report(tp, epr)
    if result.predicted:
        advice = generate_advice(result, epr, tp.index, tp.provider)
        if advice is None:
            advice = "Possible conditions: " + prompts.format_condition_names(result.predicted) + "."
    else:
        advice = "No condition crossed the decision threshold; consider a clinical visit."
    result.advice = f"{DISCLAIMER}\n{advice}"
    session.result = result
    session.state = PREDICTED
    return Reply(kind="prediction", text=result.advice)


def finalize(session: ConsultSession) -> DiagnosisResult:
    """Return the stored result and close the session; idempotent once closed."""
    if session.state == GATHERING:
        raise NotPredicted("session has no prediction yet")
    session.state = CLOSED
    session.touched = time.time()
    return session.result
