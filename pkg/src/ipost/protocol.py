"""Shopper session protocol: entry token, item ledger, checkout, settlement.

All money is integer minor units (cents). Every operation takes the current
time as an explicit integer ``clock`` in milliseconds; nothing here reads the
wall clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .recognizers import MatchResult

DEFAULT_TTL_MS = 30 * 60 * 1000
DEFAULT_CONFIDENCE_FLOOR = 0.5

ITEM_KINDS = ("item_pick", "item_putback")
EVENT_KINDS = ("entry_request", "face_authenticated") + ITEM_KINDS + ("exit_request",)


class Rejected(Exception):
    """An operation was refused. ``reason`` is a short machine-readable code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class AuthToken:
    token_id: str
    shopper_id: str
    issued_at: int
    ttl: int
    state: str = "active"  # active, expired, consumed

    def _move(self, new_state: str):
        if self.state != "active":
            raise RuntimeError(f"token {self.token_id} is {self.state}; cannot become {new_state}")
        self.state = new_state


def validate_token(token: AuthToken, clock: int) -> bool:
    return token.state == "active" and clock - token.issued_at < token.ttl


@dataclass
class ItemEntry:
    label: str
    unit_price: int
    quantity: int = 0


@dataclass(frozen=True)
class DetectionEvent:
    kind: str
    timestamp: int
    label: str = ""
    confidence: float = 1.0
    shopper_id: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class ReceiptLine:
    label: str
    quantity: int
    unit_price: int
    line_total: int


@dataclass(frozen=True)
class Receipt:
    receipt_id: str
    session_id: str
    shopper_id: str
    lines: tuple[ReceiptLine, ...]
    total: int
    issued_at: int


@dataclass(frozen=True)
class SettlementRecord:
    receipt_id: str
    shopper_id: str
    amount: int
    timestamp: int

    @property
    def idempotency_key(self) -> str:
        return self.receipt_id

    def line(self) -> str:
        return f"{self.receipt_id}\t{self.shopper_id}\t{self.amount}\t{self.timestamp}\n"

    @classmethod
    def parse(cls, line: str) -> "SettlementRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise ValueError(f"journal line needs 4 tab-separated fields, got {len(parts)}")
        return cls(parts[0], parts[1], int(parts[2]), int(parts[3]))


@dataclass
class Session:
    session_id: str
    token: AuthToken
    ledger: dict[str, ItemEntry] = field(default_factory=dict)
    status: str = "active"  # active, checked_out, voided
    event_log: list[DetectionEvent] = field(default_factory=list)
    receipt: Receipt | None = None

    def quantities(self) -> dict[str, int]:
        return {label: e.quantity for label, e in sorted(self.ledger.items())}

    @property
    def last_timestamp(self) -> int:
        return self.event_log[-1].timestamp if self.event_log else self.token.issued_at


class Journal:
    """Append-only settlement log, idempotent on ``receipt_id``."""

    def __init__(self):
        self.records: list[SettlementRecord] = []
        self._keys: set[str] = set()
        self.duplicates = 0

    def __len__(self):
        return len(self.records)

    def settle(self, record: SettlementRecord) -> bool:
        """Append ``record`` unless its key was seen. Returns whether it was appended."""
        if record.idempotency_key in self._keys:
            self.duplicates += 1
            return False
        self._keys.add(record.idempotency_key)
        self.records.append(record)
        return True

    def dumps(self) -> str:
        return "".join(r.line() for r in self.records)

    def write(self, path):
        Path(path).write_bytes(self.dumps().encode("utf-8"))

    @classmethod
    def loads(cls, text: str) -> "Journal":
        journal = cls()
        for line in text.splitlines():
            if line:
                journal.settle(SettlementRecord.parse(line))
        return journal

    @classmethod
    def read(cls, path) -> "Journal":
        return cls.loads(Path(path).read_bytes().decode("utf-8"))


def settle(journal: Journal, record: SettlementRecord) -> Journal:
    journal.settle(record)
    return journal


def apply_item_event(ledger: dict[str, ItemEntry], event: DetectionEvent, prices: dict[str, int]):
    """Fold one item event into ``ledger``; raises Rejected and leaves the
    ledger untouched when the event is invalid."""
    if event.label not in prices:
        raise Rejected("unknown_item", event.label)
    entry = ledger.get(event.label)
    if event.kind == "item_pick":
        if entry is None:
            entry = ledger[event.label] = ItemEntry(event.label, prices[event.label])
        entry.quantity += 1
    else:
        if entry is None or entry.quantity == 0:
            raise Rejected("below_zero", event.label)
        entry.quantity -= 1


def replay_ledger(events, prices: dict[str, int]) -> dict[str, ItemEntry]:
    ledger: dict[str, ItemEntry] = {}
    for ev in events:
        if ev.kind in ITEM_KINDS:
            apply_item_event(ledger, ev, prices)
    return ledger


class Engine:
    """Owns the sessions of one store and the settlement journal."""

    def __init__(self, prices: dict[str, int], ttl_ms: int = DEFAULT_TTL_MS,
                 confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR, journal: Journal | None = None):
        for label, price in prices.items():
            if int(price) != price or price < 0:
                raise ValueError(f"price for {label!r} must be a non-negative integer")
        self.prices = dict(prices)
        self.ttl_ms = ttl_ms
        self.confidence_floor = confidence_floor
        self.journal = journal if journal is not None else Journal()
        self.sessions: dict[str, Session] = {}
        self.receipts: dict[str, Receipt] = {}
        self._token_seq = 0
        self._receipt_seq = 0

    def _session(self, session) -> Session:
        if isinstance(session, Session):
            return session
        try:
            return self.sessions[session]
        except KeyError:
            raise Rejected("unknown_session", str(session)) from None

    def request_entry(self, match: MatchResult, clock: int) -> AuthToken:
        """Issue a token and open a session for an accepted face match."""
        if not match.accepted:
            raise Rejected("face_unknown")
        self._token_seq += 1
        token = AuthToken(f"tok-{self._token_seq:06d}", match.identity, clock, self.ttl_ms)
        session = Session(token.token_id, token)
        session.event_log.append(DetectionEvent("entry_request", clock, shopper_id=match.identity))
        session.event_log.append(DetectionEvent("face_authenticated", clock, shopper_id=match.identity))
        self.sessions[session.session_id] = session
        return token

    def _require_live(self, session: Session, clock: int):
        if session.status == "checked_out":
            raise Rejected("already_settled", session.session_id)
        if session.status != "active":
            raise Rejected("session_closed", session.session_id)
        if not validate_token(session.token, clock):
            if session.token.state == "active":
                session.token._move("expired")
            raise Rejected("token_expired", session.session_id)

    def record_event(self, session, event: DetectionEvent, clock: int) -> Session:
        """Apply an item detection to the session ledger."""
        session = self._session(session)
        self._require_live(session, clock)
        if event.kind not in ITEM_KINDS:
            raise Rejected("unsupported_event", event.kind)
        if event.timestamp < session.last_timestamp:
            raise Rejected("out_of_order", f"{event.timestamp} < {session.last_timestamp}")
        if event.confidence < self.confidence_floor:
            raise Rejected("low_confidence", f"{event.confidence:.3f}")
        apply_item_event(session.ledger, event, self.prices)
        session.event_log.append(event)
        return session

    def checkout(self, session, clock: int) -> tuple[Receipt, SettlementRecord]:
        """Total the ledger, consume the token and settle the payment.

        An expired token voids the session instead.
        """
        session = self._session(session)
        try:
            self._require_live(session, clock)
        except Rejected as exc:
            if exc.reason == "token_expired":
                session.status = "voided"
            raise
        if clock < session.last_timestamp:
            raise Rejected("out_of_order", f"{clock} < {session.last_timestamp}")
        self._receipt_seq += 1
        lines = tuple(ReceiptLine(e.label, e.quantity, e.unit_price, e.quantity * e.unit_price)
                      for _, e in sorted(session.ledger.items()) if e.quantity > 0)
        receipt = Receipt(f"rcpt-{self._receipt_seq:06d}", session.session_id, session.token.shopper_id,
                          lines, sum(l.line_total for l in lines), clock)
        record = SettlementRecord(receipt.receipt_id, receipt.shopper_id, receipt.total, clock)
        session.event_log.append(DetectionEvent("exit_request", clock, shopper_id=receipt.shopper_id))
        session.token._move("consumed")
        session.status = "checked_out"
        session.receipt = receipt
        self.receipts[receipt.receipt_id] = receipt
        self.journal.settle(record)
        return receipt, record
