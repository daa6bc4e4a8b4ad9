"""
Face embeddings and the enrolled gallery
========================================

A triplet-trained embedder maps each synthetic face to a point on the unit
sphere. Probes within the acceptance radius of an enrolled embedding are
accepted; everyone else is unknown. Training takes roughly 20 seconds.
"""

import numpy as np

from ipost.pipeline import FaceRecipe, face_data, train_face_embedder
from ipost.recognizers import embed_faces, match_embeddings
from ipost.synthetic import SyntheticDatasetSpec, make_dataset

recipe = FaceRecipe()
net, gallery, history = train_face_embedder(recipe)
print("enrolled:", {k: len(v) for k, v in gallery.entries.items()})
print("final batch-hard triplet loss:", round(history[-1].train_loss, 4))

probes = face_data(recipe, seed_offset=1, samples=10)
results = match_embeddings(gallery, embed_faces(net, probes.images))
hits = [r.identity == recipe.identities[k] for r, k in zip(results, probes.labels)]
print(f"known probes matched: {sum(hits)}/{len(hits)}")
print("largest known distance:", round(max(r.best_distance for r in results), 3))

strangers = make_dataset(SyntheticDatasetSpec("faces", [f"walk-in-{i}" for i in range(20)],
                                              size=recipe.size, samples=1, seed=7))
unknown = match_embeddings(gallery, embed_faces(net, strangers.images))
print("strangers accepted:", sum(r.accepted for r in unknown), "of", len(unknown))
print("closest stranger distance:", round(min(r.best_distance for r in unknown), 3),
      "threshold", gallery.accept_threshold)
print("similarity of the first probe:", round(results[0].similarity, 3),
      "=", "1/(1+%.3f)" % results[0].best_distance)
