"""
Entry, shopping and checkout
============================

The protocol engine never reads the wall clock; every call takes an integer
millisecond clock. Prices are integer cents.
"""

from ipost.protocol import DetectionEvent, Engine, Rejected
from ipost.recognizers import MatchResult

engine = Engine({"apple": 199, "bread": 350, "milk": 120}, ttl_ms=30 * 60 * 1000)

# an accepted face match opens a session with a fresh token
token = engine.request_entry(MatchResult("alice", 0.21, 1 / 1.21, "alice"), clock=0)
print("token:", token.token_id, token.state)

for t, kind, label in [(1000, "item_pick", "apple"), (2000, "item_pick", "bread"),
                       (3000, "item_pick", "apple"), (4000, "item_putback", "bread"),
                       (5000, "item_pick", "bread")]:
    engine.record_event(token.token_id, DetectionEvent(kind, t, label, confidence=0.97), t)
print("basket:", engine.sessions[token.token_id].quantities())

# a put-back of something not in the basket is refused and changes nothing
try:
    engine.record_event(token.token_id, DetectionEvent("item_putback", 6000, "milk", 0.9), 6000)
except Rejected as exc:
    print("rejected:", exc.reason, "| basket still", engine.sessions[token.token_id].quantities())

# a low-confidence detection is refused as well
try:
    engine.record_event(token.token_id, DetectionEvent("item_pick", 7000, "milk", 0.3), 7000)
except Rejected as exc:
    print("rejected:", exc.reason)

receipt, record = engine.checkout(token.token_id, clock=8000)
for line in receipt.lines:
    print(f"  {line.label:6s} {line.quantity} x {line.unit_price} = {line.line_total}")
print("total:", receipt.total, "token now", token.state)
print("journal line:", record.line().rstrip())

# a second checkout cannot charge twice
try:
    engine.checkout(token.token_id, clock=9000)
except Rejected as exc:
    print("second checkout:", exc.reason, "| journal records:", len(engine.journal))

# unknown faces never get a token
try:
    engine.request_entry(MatchResult(None, 1.3, 1 / 2.3, "alice"), clock=10_000)
except Rejected as exc:
    print("stranger:", exc.reason)
