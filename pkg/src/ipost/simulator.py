"""Discrete-event shopper simulation driving the full pipeline.

Each shopper arrives, shows a face to the entry camera, picks and puts back
items, and walks out. Faces and items are rendered as synthetic glyphs and go
through the real networks; the resulting detections drive an
:class:`~ipost.protocol.Engine`. Protocol invariants are checked as the
simulation runs and every breach is counted in the report.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import NetworkGraph
from .protocol import (
    DEFAULT_CONFIDENCE_FLOOR,
    DEFAULT_TTL_MS,
    DetectionEvent,
    Engine,
    Journal,
    Rejected,
    SettlementRecord,
    replay_ledger,
)
from .recognizers import EmbeddingGallery, classify_items, embed_faces, match_embeddings
from .synthetic import render_face, render_item, to_float


def default_prices(labels) -> dict[str, int]:
    return {label: 149 + 100 * i for i, label in enumerate(labels)}


@dataclass
class ScenarioConfig:
    shoppers: int = 100
    seed: int = 0
    mean_arrival_gap_ms: float = 45_000
    picks_min: int = 0
    picks_max: int = 6
    mean_pick_gap_ms: float = 180_000
    putback_prob: float = 0.15
    unknown_fraction: float = 0.1
    prices: dict[str, int] = field(default_factory=lambda: {"cross": 199, "disc": 350})
    ttl_ms: int = DEFAULT_TTL_MS
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR
    noise: float = 0.1
    identities: list[str] | None = None  # defaults to every enrolled identity

    def __post_init__(self):
        if self.shoppers < 0:
            raise ValueError("shoppers must be >= 0")
        for name in ("putback_prob", "unknown_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0 <= self.picks_min <= self.picks_max:
            raise ValueError("need 0 <= picks_min <= picks_max")
        if not self.prices:
            raise ValueError("price table is empty")
        if any(int(p) != p or p < 0 for p in self.prices.values()):
            raise ValueError("prices must be non-negative integers")


@dataclass
class ShopperPlan:
    index: int
    identity: str
    known: bool
    arrival: int
    actions: list[tuple[int, str, str]]  # (time_ms, kind, true label)
    exit: int


@dataclass
class SimulationReport:
    shoppers: int = 0
    sessions_created: int = 0
    checked_out: int = 0
    voided: int = 0
    rejected_entries: int = 0
    revenue: int = 0
    violations: int = 0
    false_accepts: int = 0
    false_rejects: int = 0
    misclassified_items: int = 0
    rejected_events: dict[str, int] = field(default_factory=dict)
    violation_log: list[str] = field(default_factory=list)
    receipts: list[dict] = field(default_factory=list)
    sessions: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _gap(rng, mean) -> int:
    return max(1, int(round(rng.exponential(mean))))


def plan_shoppers(scenario: ScenarioConfig, identities: list[str]) -> list[ShopperPlan]:
    """Draw arrivals, identities and true pick/put-back sequences."""
    rng = np.random.default_rng([scenario.seed, 0])
    labels = sorted(scenario.prices)
    plans = []
    t = 0
    for i in range(scenario.shoppers):
        t += _gap(rng, scenario.mean_arrival_gap_ms)
        known = rng.random() >= scenario.unknown_fraction
        if known:
            identity = identities[int(rng.integers(len(identities)))]
        else:
            identity = f"visitor-{scenario.seed}-{i}"
        actions = []
        held: list[str] = []
        clock = t
        for _ in range(int(rng.integers(scenario.picks_min, scenario.picks_max + 1))):
            clock += _gap(rng, scenario.mean_pick_gap_ms)
            label = labels[int(rng.integers(len(labels)))]
            actions.append((clock, "item_pick", label))
            held.append(label)
            if rng.random() < scenario.putback_prob:
                clock += _gap(rng, scenario.mean_pick_gap_ms)
                actions.append((clock, "item_putback", held.pop(int(rng.integers(len(held))))))
        exit_at = clock + _gap(rng, scenario.mean_pick_gap_ms)
        plans.append(ShopperPlan(i, identity, bool(known), t, actions, exit_at))
    return plans


def planned_total(plan: ShopperPlan, prices: dict[str, int]) -> int:
    return sum(prices[label] * (1 if kind == "item_pick" else -1) for _, kind, label in plan.actions)


def event_fold_total(events, prices: dict[str, int]) -> int:
    """Receipt total recomputed straight from an event log."""
    total = 0
    for ev in events:
        if ev.kind == "item_pick":
            total += prices[ev.label]
        elif ev.kind == "item_putback":
            total -= prices[ev.label]
    return total


class _Checker:
    def __init__(self, report: SimulationReport):
        self.report = report

    def __call__(self, ok: bool, message: str):
        if not ok:
            self.report.violations += 1
            self.report.violation_log.append(message)


def simulate(scenario: ScenarioConfig, item_net: NetworkGraph, face_net: NetworkGraph,
             gallery: EmbeddingGallery, journal_path=None) -> SimulationReport:
    enrolled = gallery.identities()
    identities = list(scenario.identities) if scenario.identities is not None else enrolled
    missing = sorted(set(identities) - set(enrolled))
    if missing:
        raise ValueError(f"scenario identities not enrolled in gallery: {missing}")
    if scenario.unknown_fraction < 1.0 and scenario.shoppers and not identities:
        raise ValueError("scenario has known shoppers but the gallery is empty")
    unpriced = sorted(set(scenario.prices) - set(item_net.labels or []))
    if unpriced:
        raise ValueError(f"price table labels {unpriced} are not item classifier classes")

    item_net.eval()
    face_net.eval()
    plans = plan_shoppers(scenario, identities)
    report = SimulationReport(shoppers=len(plans))
    check = _Checker(report)
    engine = Engine(scenario.prices, scenario.ttl_ms, scenario.confidence_floor, Journal())

    # render and recognise everything up front, in plan order
    img_rng = np.random.default_rng([scenario.seed, 1])
    fc, fh, _ = face_net.input_shape
    ic, ih, _ = item_net.input_shape
    matches, predictions = [], []
    if plans:
        faces = np.stack([render_face(p.identity, fh, img_rng, scenario.noise, fc) for p in plans])
        matches = match_embeddings(gallery, embed_faces(face_net, to_float(faces)))
        items = [render_item(label, ih, img_rng, scenario.noise, ic)
                 for p in plans for _, _, label in p.actions]
        if items:
            predictions = classify_items(item_net, to_float(np.stack(items)))

    queue = []
    k = 0
    for p in plans:
        heapq.heappush(queue, (p.arrival, p.index, 0, "entry", None))
        for j, (t, kind, label) in enumerate(p.actions, 1):
            heapq.heappush(queue, (t, p.index, j, kind, (label, predictions[k])))
            k += 1
        heapq.heappush(queue, (p.exit, p.index, len(p.actions) + 1, "exit", None))

    session_of: dict[int, str] = {}
    token_states: dict[str, str] = {}

    def rejected(reason):
        report.rejected_events[reason] = report.rejected_events.get(reason, 0) + 1

    def watch_token(session):
        tok = session.token
        before = token_states.get(tok.token_id, "active")
        check(before == "active" or before == tok.state,
              f"{tok.token_id}: token left terminal state {before} for {tok.state}")
        token_states[tok.token_id] = tok.state

    while queue:
        clock, idx, _, kind, payload = heapq.heappop(queue)
        plan = plans[idx]
        if kind == "entry":
            match = matches[idx]
            try:
                token = engine.request_entry(match, clock)
            except Rejected:
                report.rejected_entries += 1
                if plan.known:
                    report.false_rejects += 1
                continue
            report.sessions_created += 1
            check(plan.known, f"shopper {idx}: unknown face admitted as {token.shopper_id}")
            if not plan.known:
                report.false_accepts += 1
            session_of[idx] = token.token_id
            watch_token(engine.sessions[token.token_id])
            continue
        if idx not in session_of:
            continue
        session = engine.sessions[session_of[idx]]

        if kind == "exit":
            try:
                receipt, _ = engine.checkout(session, clock)
            except Rejected as exc:
                rejected(exc.reason)
                check(session.receipt is None, f"{session.session_id}: receipt on failed checkout")
                watch_token(session)
                continue
            watch_token(session)
            check(session.token.state == "consumed", f"{session.session_id}: token not consumed at checkout")
            check(receipt.total == sum(l.line_total for l in receipt.lines),
                  f"{receipt.receipt_id}: total != sum of lines")
            check(all(l.line_total == l.quantity * l.unit_price for l in receipt.lines),
                  f"{receipt.receipt_id}: line total != qty * price")
            check(receipt.total == event_fold_total(session.event_log, scenario.prices),
                  f"{receipt.receipt_id}: total disagrees with event-log fold")
            replayed = {l: e.quantity for l, e in sorted(replay_ledger(session.event_log, scenario.prices).items())}
            check(replayed == session.quantities(), f"{session.session_id}: event-log replay != ledger")
            continue

        true_label, pred = payload
        if pred.label != true_label:
            report.misclassified_items += 1
        event = DetectionEvent(kind, clock, pred.label, pred.probability, session.token.shopper_id)
        before = (session.quantities(), len(session.event_log))
        try:
            engine.record_event(session, event, clock)
        except Rejected as exc:
            rejected(exc.reason)
            check((session.quantities(), len(session.event_log)) == before,
                  f"{session.session_id}: rejected event changed session state")
            watch_token(session)
            continue
        check(all(q >= 0 for q in session.quantities().values()),
              f"{session.session_id}: negative ledger quantity")
        watch_token(session)

    # end-of-run consistency
    consumed = {s.token.token_id for s in engine.sessions.values() if s.token.state == "consumed"}
    receipted = [r.session_id for r in engine.receipts.values()]
    check(sorted(receipted) == sorted(consumed) and len(set(receipted)) == len(receipted),
          "consumed tokens and receipts are not in one-to-one correspondence")
    check(len(engine.journal) == len(engine.receipts), "journal size != receipt count")
    text = engine.journal.dumps()
    check(Journal.loads(text).dumps() == text, "journal replay is not byte-identical")

    for sid in sorted(engine.sessions):
        s = engine.sessions[sid]
        if s.status == "checked_out":
            report.checked_out += 1
        elif s.status == "voided":
            report.voided += 1
        report.sessions.append({
            "session_id": sid,
            "shopper_id": s.token.shopper_id,
            "status": s.status,
            "token_state": s.token.state,
            "events": [[e.kind, e.timestamp, e.label] for e in s.event_log],
            "receipt_id": s.receipt.receipt_id if s.receipt else None,
        })
    for r in engine.receipts.values():
        report.receipts.append({
            "receipt_id": r.receipt_id,
            "session_id": r.session_id,
            "shopper_id": r.shopper_id,
            "lines": [[l.label, l.quantity, l.unit_price, l.line_total] for l in r.lines],
            "total": r.total,
            "issued_at": r.issued_at,
        })
    report.revenue = sum(r.total for r in engine.receipts.values())
    check(report.revenue == sum(rec.amount for rec in engine.journal.records), "revenue != journal sum")

    if journal_path is not None:
        engine.journal.write(journal_path)
    return report


def verify_journal(text: str) -> list[str]:
    """Problems found replaying a journal; empty when it is consistent."""
    problems = []
    keys = set()
    for n, line in enumerate(text.splitlines(), 1):
        try:
            rec = SettlementRecord.parse(line)
        except ValueError as exc:
            problems.append(f"line {n}: {exc}")
            continue
        if rec.receipt_id in keys:
            problems.append(f"line {n}: duplicate settlement for {rec.receipt_id}")
        keys.add(rec.receipt_id)
        if rec.amount < 0:
            problems.append(f"line {n}: negative amount")
    if text and not text.endswith("\n"):
        problems.append("journal does not end with a newline")
    if not problems and Journal.loads(text).dumps() != text:
        problems.append("replayed journal does not re-serialize byte-identically")
    return problems
