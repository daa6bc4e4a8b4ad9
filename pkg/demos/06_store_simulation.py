"""
A simulated store
=================

Shoppers arrive, are recognised at the door, pick and put back items that
the item classifier has to identify, and leave. Every protocol invariant is
checked as the simulation runs. Training both networks takes about half a
minute.
"""

import tempfile
from pathlib import Path

from ipost.pipeline import FaceRecipe, train_face_embedder, train_item_classifier
from ipost.protocol import Journal
from ipost.simulator import ScenarioConfig, simulate, verify_journal

item_net, _ = train_item_classifier()
face_net, gallery, _ = train_face_embedder(FaceRecipe(extra_enroll=20))

journal_path = Path(tempfile.mkdtemp()) / "journal.tsv"
report = simulate(ScenarioConfig(shoppers=500, seed=1), item_net, face_net, gallery, journal_path)

print(f"shoppers {report.shoppers}, turned away {report.rejected_entries}")
print(f"checked out {report.checked_out}, voided by token expiry {report.voided}")
print(f"revenue {report.revenue} cents, invariant violations {report.violations}")
print("rejected events:", report.rejected_events)
print("first receipt:", report.receipts[0])

text = journal_path.read_text()
print("journal records:", len(text.splitlines()), "| problems:", verify_journal(text))
print("replay byte-identical:", Journal.loads(text).dumps() == text)
