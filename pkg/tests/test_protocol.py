import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipost.protocol import (
    AuthToken,
    DetectionEvent,
    Engine,
    Journal,
    Rejected,
    SettlementRecord,
    replay_ledger,
    settle,
    validate_token,
)
from ipost.recognizers import MatchResult

PRICES = {"apple": 199, "bread": 350, "banana": 25}
TTL = 60_000


def accepted(name="alice"):
    return MatchResult(name, 0.1, 1 / 1.1, name)


def pick(label, t, conf=0.9):
    return DetectionEvent("item_pick", t, label, conf)


def putback(label, t, conf=0.9):
    return DetectionEvent("item_putback", t, label, conf)


@pytest.fixture
def engine():
    return Engine(PRICES, ttl_ms=TTL)


def test_entry_issues_distinct_tokens(engine):
    t1 = engine.request_entry(accepted(), 0)
    t2 = engine.request_entry(accepted(), 5)
    assert t1.token_id != t2.token_id
    assert len(engine.sessions) == 2
    assert validate_token(t1, 0)


def test_unknown_face_rejected(engine):
    with pytest.raises(Rejected) as exc:
        engine.request_entry(MatchResult(None, 2.0, 1 / 3, "alice"), 0)
    assert exc.value.reason == "face_unknown"
    assert not engine.sessions


def test_validate_token_boundaries():
    tok = AuthToken("t", "s", 100, 50)
    assert validate_token(tok, 100)
    assert validate_token(tok, 149)
    assert not validate_token(tok, 150)
    tok.state = "consumed"
    assert not validate_token(tok, 100)


def test_pick_and_putback(engine):
    tok = engine.request_entry(accepted(), 0)
    engine.record_event(tok.token_id, pick("banana", 1), 1)
    s = engine.record_event(tok.token_id, pick("banana", 2), 2)
    assert s.quantities() == {"banana": 2}
    s = engine.record_event(tok.token_id, putback("banana", 3), 3)
    assert s.quantities() == {"banana": 1}


def test_putback_on_empty_is_atomic(engine):
    tok = engine.request_entry(accepted(), 0)
    s = engine.sessions[tok.token_id]
    before = (dict(s.ledger), len(s.event_log))
    with pytest.raises(Rejected) as exc:
        engine.record_event(s, putback("apple", 1), 1)
    assert exc.value.reason == "below_zero"
    assert (dict(s.ledger), len(s.event_log)) == before


@pytest.mark.parametrize("event,reason", [
    (pick("caviar", 1), "unknown_item"),
    (pick("apple", 1, conf=0.2), "low_confidence"),
    (DetectionEvent("exit_request", 1), "unsupported_event"),
])
def test_rejections(engine, event, reason):
    tok = engine.request_entry(accepted(), 0)
    with pytest.raises(Rejected) as exc:
        engine.record_event(tok.token_id, event, 1)
    assert exc.value.reason == reason
    assert engine.sessions[tok.token_id].ledger == {}


def test_out_of_order_rejected(engine):
    tok = engine.request_entry(accepted(), 10)
    engine.record_event(tok.token_id, pick("apple", 20), 20)
    with pytest.raises(Rejected) as exc:
        engine.record_event(tok.token_id, pick("apple", 15), 21)
    assert exc.value.reason == "out_of_order"


def test_expired_token(engine):
    tok = engine.request_entry(accepted(), 0)
    with pytest.raises(Rejected) as exc:
        engine.record_event(tok.token_id, pick("apple", TTL), TTL)
    assert exc.value.reason == "token_expired"
    assert tok.state == "expired"


def test_checkout_total_748(engine):
    tok = engine.request_entry(accepted(), 0)
    for t, label in enumerate(["apple", "bread", "apple"], start=1):
        engine.record_event(tok.token_id, pick(label, t), t)
    receipt, record = engine.checkout(tok.token_id, 10)
    assert receipt.total == 2 * 199 + 350 == 748
    assert [(l.label, l.quantity, l.line_total) for l in receipt.lines] == [("apple", 2, 398), ("bread", 1, 350)]
    assert record.idempotency_key == receipt.receipt_id
    assert record.amount == 748
    assert tok.state == "consumed"
    assert engine.sessions[tok.token_id].status == "checked_out"


def test_empty_checkout_and_zero_lines_omitted(engine):
    tok = engine.request_entry(accepted(), 0)
    engine.record_event(tok.token_id, pick("apple", 1), 1)
    engine.record_event(tok.token_id, putback("apple", 2), 2)
    receipt, _ = engine.checkout(tok.token_id, 3)
    assert receipt.total == 0 and receipt.lines == ()


def test_double_checkout(engine):
    tok = engine.request_entry(accepted(), 0)
    engine.checkout(tok.token_id, 1)
    with pytest.raises(Rejected) as exc:
        engine.checkout(tok.token_id, 2)
    assert exc.value.reason == "already_settled"
    assert len(engine.journal) == 1
    with pytest.raises(Rejected):
        engine.record_event(tok.token_id, pick("apple", 3), 3)


def test_expired_checkout_voids(engine):
    tok = engine.request_entry(accepted(), 0)
    engine.record_event(tok.token_id, pick("apple", 1), 1)
    with pytest.raises(Rejected) as exc:
        engine.checkout(tok.token_id, TTL + 1)
    assert exc.value.reason == "token_expired"
    assert engine.sessions[tok.token_id].status == "voided"
    assert not engine.receipts and len(engine.journal) == 0


def test_journal_idempotent_and_ordered(tmp_path):
    r1 = SettlementRecord("rcpt-000001", "a", 100, 5)
    r2 = SettlementRecord("rcpt-000002", "b", 0, 6)
    j = Journal()
    settle(j, r1)
    settle(j, r1)
    assert len(j) == 1 and j.duplicates == 1
    settle(j, r2)
    assert j.records == [r1, r2]
    path = tmp_path / "journal.tsv"
    j.write(path)
    again = Journal.read(path)
    assert again.records == j.records
    assert again.dumps().encode() == path.read_bytes()


def test_bad_prices():
    with pytest.raises(ValueError):
        Engine({"apple": 1.5})
    with pytest.raises(ValueError):
        Engine({"apple": -1})


def _fold_total(events):
    """Independent oracle: +price per pick, -price per putback."""
    sign = {"item_pick": 1, "item_putback": -1}
    return sum(sign[e.kind] * PRICES[e.label] for e in events if e.kind in sign)


def test_fuzz_state_machine():
    rng = np.random.default_rng(2024)
    labels = list(PRICES) + ["caviar"]
    for _ in range(1000):
        engine = Engine(PRICES, ttl_ms=int(rng.integers(50, 400)))
        tok = engine.request_entry(accepted(f"s{rng.integers(5)}"), 0)
        sid = tok.token_id
        clock = 0
        states = [tok.state]
        for _ in range(int(rng.integers(0, 25))):
            clock += int(rng.integers(0, 40))
            action = rng.random()
            before = {k: e.quantity for k, e in engine.sessions[sid].ledger.items()}
            try:
                if action < 0.85:
                    ev = (pick if rng.random() < 0.6 else putback)(
                        labels[rng.integers(len(labels))], clock, float(rng.random()))
                    engine.record_event(sid, ev, clock)
                else:
                    engine.checkout(sid, clock)
            except Rejected:
                after = {k: e.quantity for k, e in engine.sessions[sid].ledger.items()}
                assert after == before  # atomic rejection
            states.append(tok.state)
            s = engine.sessions[sid]
            assert all(e.quantity >= 0 for e in s.ledger.values())
        # terminal states never change afterwards
        for a, b in zip(states, states[1:]):
            if a != "active":
                assert b == a
        s = engine.sessions[sid]
        assert {k: e.quantity for k, e in replay_ledger(s.event_log, PRICES).items()} == \
            {k: e.quantity for k, e in s.ledger.items()}
        # bijection between consumed tokens and receipts
        assert (tok.state == "consumed") == (s.receipt is not None) == (len(engine.journal) == 1)
        if s.receipt is not None:
            assert s.receipt.total == _fold_total(s.event_log)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["item_pick", "item_putback"]),
                          st.sampled_from(sorted(PRICES))), max_size=30))
def test_receipt_equals_event_fold(ops):
    engine = Engine(PRICES, ttl_ms=10**9)
    tok = engine.request_entry(accepted(), 0)
    for t, (kind, label) in enumerate(ops, start=1):
        try:
            engine.record_event(tok.token_id, DetectionEvent(kind, t, label), t)
        except Rejected as exc:
            assert exc.reason == "below_zero"
    receipt, _ = engine.checkout(tok.token_id, len(ops) + 1)
    assert receipt.total == _fold_total(engine.sessions[tok.token_id].event_log)
