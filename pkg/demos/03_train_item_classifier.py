"""
Training the item classifier
============================

Two glyph classes, Adam and binary cross-entropy. The metrics file has one
row per epoch and is ready for plotting.
"""

import tempfile
from pathlib import Path

from ipost.pipeline import ItemRecipe, train_item_classifier
from ipost.recognizers import classify_items
from ipost.synthetic import SyntheticDatasetSpec, make_dataset
from ipost.training import read_metrics, smoothed

out = Path(tempfile.mkdtemp())
net, history = train_item_classifier(ItemRecipe(epochs=6), metrics_path=out / "metrics.tsv")

print("epoch  train_loss  test_acc")
for m in read_metrics(out / "metrics.tsv"):
    print(f"{m.epoch:5d}  {m.train_loss:10.4f}  {m.val_acc:8.3f}")
print("loss after 2-epoch smoothing:", smoothed([m.train_loss for m in history]).round(4))

# classify a few fresh glyphs
fresh = make_dataset(SyntheticDatasetSpec("items", ["cross", "disc"], samples=3, seed=99))
for pred, label in zip(classify_items(net, fresh.images), fresh.labels):
    print(f"true {fresh.classes[label]:6s} predicted {pred.label:6s} p={pred.probability:.3f}")
