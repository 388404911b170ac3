import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from case_study import USER_TURN_1, USER_TURN_2, session_narrative
from healthtriage.consult import (
    CLOSED,
    DISCLAIMER,
    GATHERING,
    PREDICTED,
    ConsultPolicy,
    SessionStore,
    finalize,
    post_message,
)
from healthtriage.errors import (
    Busy,
    EmptyMessage,
    NotPredicted,
    SessionClosed,
    UnknownSession,
)
from healthtriage.pipeline import ingest_dialog, predict_report


class TestSessionStore:
    def test_open_gives_distinct_ids(self):
        store = SessionStore()
        a, b = store.open_session(), store.open_session()
        assert a.session_id != b.session_id
        assert len(a.session_id) >= 16

    def test_new_session_state(self):
        session = SessionStore().open_session()
        assert session.state == GATHERING
        assert session.result is None
        assert session.turns == []

    def test_unknown_session(self):
        with pytest.raises(UnknownSession):
            SessionStore().get("nope")

    def test_ttl_expiry(self):
        store = SessionStore(ttl_seconds=0.01)
        session = store.open_session()
        session.touched -= 1.0
        with pytest.raises(UnknownSession):
            store.get(session.session_id)

    def test_snapshot_restore(self, tmp_path):
        path = tmp_path / "sessions.jsonl"
        store = SessionStore(snapshot_path=path)
        session = store.open_session()
        session.state = PREDICTED
        store.snapshot(session)
        fresh = SessionStore(snapshot_path=path)
        fresh.load_snapshots()
        assert fresh.get(session.session_id).state == PREDICTED


class TestWalkthrough:
    def test_first_message_is_follow_up(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = SessionStore().open_session()
        reply = post_message(session, USER_TURN_1, tp)
        assert reply.kind == "follow_up"
        assert session.state == GATHERING
        assert [t.role for t in session.turns] == ["user", "assistant"]

    def test_case_study_prediction_names_both_conditions(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = SessionStore().open_session()
        post_message(session, USER_TURN_1, tp)
        reply = post_message(session, USER_TURN_2, tp)
        assert reply.kind == "prediction"
        assert "Gastrointestinal dysfunction" in reply.text
        assert "Diarrhea" in reply.text
        assert session.state == PREDICTED
        assert reply.text.startswith(DISCLAIMER)

    def test_session_epr_matches_batch_path(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = SessionStore().open_session()
        post_message(session, USER_TURN_1, tp)
        post_message(session, USER_TURN_2, tp)
        epr = ingest_dialog(
            [(t.role, t.text) for t in session.turns[:3]],  # turns before the prediction reply
            tp.model.label_names,
            report_id="replay",
        )
        assert epr.narrative == session_narrative()
        direct = predict_report(tp, epr)
        assert direct.probabilities == session.result.probabilities

    def test_message_to_predicted_session_rejected(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = SessionStore().open_session()
        post_message(session, USER_TURN_1, tp)
        post_message(session, USER_TURN_2, tp)
        with pytest.raises(SessionClosed):
            post_message(session, "one more thing", tp)

    def test_empty_message(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = SessionStore().open_session()
        with pytest.raises(EmptyMessage):
            post_message(session, "   ", tp)

    def test_max_turns_forces_prediction(self, case_study_pipeline):
        tp, _ = case_study_pipeline

        class NeverReady:
            """Provider wrapper answering 'not ready' to readiness checks."""

            def __init__(self, inner):
                self.inner = inner
                self.config = inner.config

            def complete(self, request):
                from healthtriage import prompts
                from healthtriage.providers import CompletionText, request_digest

                if request.system_text == prompts.READINESS_SYSTEM:
                    return CompletionText("not ready", "wrap", request_digest(request))
                return self.inner.complete(request)

            def embed(self, text):
                return self.inner.embed(text)

        import copy

        wrapped = copy.copy(tp)
        wrapped.provider = NeverReady(tp.provider)
        session = SessionStore().open_session()
        policy = ConsultPolicy(min_user_turns=2, max_user_turns=3)
        assert post_message(session, USER_TURN_1, wrapped, policy).kind == "follow_up"
        assert post_message(session, USER_TURN_2, wrapped, policy).kind == "follow_up"
        reply = post_message(session, "still the same symptoms", wrapped, policy)
        assert reply.kind == "prediction"


class TestFinalize:
    def predicted_session(self, tp):
        session = SessionStore().open_session()
        post_message(session, USER_TURN_1, tp)
        post_message(session, USER_TURN_2, tp)
        return session

    def test_finalize_returns_result_and_closes(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = self.predicted_session(tp)
        result = finalize(session)
        assert session.state == CLOSED
        assert set(result.predicted) == {"gastrointestinal dysfunction", "diarrhea"}

    def test_finalize_idempotent(self, case_study_pipeline):
        tp, _ = case_study_pipeline
        session = self.predicted_session(tp)
        first = finalize(session)
        second = finalize(session)
        assert first is second
        assert session.state == CLOSED

    def test_finalize_while_gathering(self, case_study_pipeline):
        session = SessionStore().open_session()
        with pytest.raises(NotPredicted):
            finalize(session)


class TestConcurrency:
    def test_busy_on_concurrent_posts(self, case_study_pipeline):
        tp, _ = case_study_pipeline

        class Slow:
            def __init__(self, inner):
                self.inner = inner
                self.config = inner.config

            def complete(self, request):
                time.sleep(0.2)
                return self.inner.complete(request)

            def embed(self, text):
                return self.inner.embed(text)

        import copy

        slow_tp = copy.copy(tp)
        slow_tp.provider = Slow(tp.provider)
        session = SessionStore().open_session()
        errors = []

        def send(text):
            try:
                post_message(session, text, slow_tp)
            except Busy as exc:
                errors.append(exc)

        threads = [threading.Thread(target=send, args=(f"message {i}",)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(errors) == 1


class TestStateMachineProperty:
    @given(st.lists(st.sampled_from(["post", "finalize"]), min_size=1, max_size=12))
    @settings(max_examples=30, deadline=None)
    def test_random_operation_sequences_stay_legal(self, case_study_pipeline, ops):
        tp, _ = case_study_pipeline
        session = SessionStore().open_session()
        turn_counter = 0
        for op in ops:
            before_len = len(session.turns)
            before_turns = list(session.turns)
            try:
                if op == "post":
                    turn_counter += 1
                    post_message(session, f"symptom update {turn_counter}, stools loose again", tp)
                else:
                    finalize(session)
            except (SessionClosed, NotPredicted):
                pass
            # append-only transcript
            assert len(session.turns) >= before_len
            assert session.turns[:before_len] == before_turns
            # result presence matches state
            if session.state == GATHERING:
                assert session.result is None
            else:
                assert session.result is not None
