"""
The command-line tool
=====================

The same workflow through ``ipost`` subcommands, with small settings so it
finishes in a few seconds. Each command prints a one-line summary.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp())


def ipost(*args):
    cmd = [sys.executable, "-m", "ipost", *map(str, args)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    print("$ ipost", " ".join(map(str, args[:1])), "->", proc.returncode, proc.stdout.strip())
    return proc


ipost("gen-data", "--task", "items", "--samples", 100, "--out", work / "items")
ipost("train", "--data", work / "items", "--epochs", 3, "--val-fraction", 0.2,
      "--out", work / "item.ckpt", "--metrics", work / "metrics.tsv")
ipost("eval", "--checkpoint", work / "item.ckpt", "--data", work / "items")

ipost("gen-data", "--task", "faces", "--classes", "ann,bob,cy", "--size", 32, "--samples", 10,
      "--out", work / "faces")
ipost("train", "--data", work / "faces", "--embedding-dim", 32, "--hidden", 256, "--dropout", 0,
      "--margin", 1.5, "--lr", 1e-4, "--epochs", 30, "--batch-size", 15, "--out", work / "face.ckpt")
for name in ("ann", "bob", "cy"):
    ipost("enroll", "--checkpoint", work / "face.ckpt", "--gallery", work / "gallery.txt",
          "--identity", name, "--images", *sorted((work / "faces" / name).glob("*.pgm")))
ipost("match", "--checkpoint", work / "face.ckpt", "--gallery", work / "gallery.txt",
      "--image", sorted((work / "faces" / "bob").glob("*.pgm"))[0])

ipost("simulate", "--item-checkpoint", work / "item.ckpt", "--face-checkpoint", work / "face.ckpt",
      "--gallery", work / "gallery.txt", "--shoppers", 100, "--unknown-fraction", 0,
      "--journal", work / "journal.tsv", "--report", work / "report.json")
ipost("journal-verify", "--journal", work / "journal.tsv")
ipost("train", "--no-such-flag")  # usage error, exit 2
