"""Ready-made training recipes for the item classifier and face embedder.

The face recipe is wider and slower-learning than the item one: an
embedding that only has to separate five enrolled people must still leave
strangers outside the acceptance radius, and a narrow or fast-trained head
tends to pull every glyph toward some enrolled cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .layers import NetworkGraph, build_ipost_cnn
from .recognizers import DEFAULT_THRESHOLD, EmbeddingGallery, enroll
from .synthetic import SyntheticDatasetSpec, make_dataset
from .training import Dataset, EpochMetrics, TrainConfig, fit

ITEM_CLASSES = ["cross", "disc"]
FACE_IDENTITIES = [f"id{i:02d}" for i in range(5)]


@dataclass
class ItemRecipe:
    classes: list[str] = field(default_factory=lambda: list(ITEM_CLASSES))
    size: int = 32
    train_samples: int = 250  # per class
    test_samples: int = 50
    noise: float = 0.1
    data_seed: int = 0
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    dropout_rate: float = 0.5
    hidden: int = 64


@dataclass
class FaceRecipe:
    identities: list[str] = field(default_factory=lambda: list(FACE_IDENTITIES))
    size: int = 48
    samples: int = 20  # per identity
    noise: float = 0.1
    data_seed: int = 100
    seed: int = 0
    epochs: int = 60
    batch_size: int = 25
    learning_rate: float = 1e-4
    margin: float = 1.5
    hidden: int = 1024
    embedding_dim: int = 256
    threshold: float = DEFAULT_THRESHOLD
    extra_enroll: int = 0  # fresh images per identity enrolled beside the training set


def item_data(recipe: ItemRecipe) -> tuple[Dataset, Dataset]:
    """Train and test sets drawn with different seeds."""
    def spec(samples, seed):
        return SyntheticDatasetSpec("items", recipe.classes, size=recipe.size, samples=samples,
                                    noise=recipe.noise, seed=seed)
    return (make_dataset(spec(recipe.train_samples, recipe.data_seed)),
            make_dataset(spec(recipe.test_samples, recipe.data_seed + 1)))


def train_item_classifier(recipe: ItemRecipe | None = None, metrics_path=None
                          ) -> tuple[NetworkGraph, list[EpochMetrics]]:
    """Binary cross-entropy (or categorical for >2 classes) with Adam."""
    recipe = recipe or ItemRecipe()
    train, test = item_data(recipe)
    net = build_ipost_cnn((1, recipe.size, recipe.size), len(recipe.classes), hidden=recipe.hidden,
                          dropout_rate=recipe.dropout_rate, seed=recipe.seed, labels=recipe.classes)
    config = TrainConfig(epochs=recipe.epochs, batch_size=recipe.batch_size, seed=recipe.seed,
                         learning_rate=recipe.learning_rate,
                         loss="bce" if len(recipe.classes) == 2 else "cce",
                         dropout_rate=recipe.dropout_rate)
    history = fit(net, train, config, test, metrics_path)
    return net, history


def face_data(recipe: FaceRecipe, seed_offset: int = 0, samples: int | None = None) -> Dataset:
    return make_dataset(SyntheticDatasetSpec("faces", recipe.identities, size=recipe.size,
                                             samples=samples or recipe.samples, noise=recipe.noise,
                                             seed=recipe.data_seed + seed_offset))


def train_face_embedder(recipe: FaceRecipe | None = None, metrics_path=None
                        ) -> tuple[NetworkGraph, EmbeddingGallery, list[EpochMetrics]]:
    """Triplet-train an embedder and enroll its training images, plus
    ``recipe.extra_enroll`` freshly rendered ones per identity."""
    recipe = recipe or FaceRecipe()
    data = face_data(recipe)
    net = build_ipost_cnn((1, recipe.size, recipe.size), embedding_dim=recipe.embedding_dim,
                          hidden=recipe.hidden, dropout_rate=0.0, seed=recipe.seed)
    config = TrainConfig(epochs=recipe.epochs, batch_size=recipe.batch_size, seed=recipe.seed,
                         learning_rate=recipe.learning_rate, loss="triplet", margin=recipe.margin,
                         dropout_rate=0.0)
    history = fit(net, data, config, metrics_path=metrics_path)
    gallery = EmbeddingGallery(accept_threshold=recipe.threshold)
    for k, name in enumerate(data.classes):
        enroll(gallery, name, data.images[data.labels == k], net)
    if recipe.extra_enroll:
        enroll_fresh(gallery, net, recipe, recipe.extra_enroll)
    return net, gallery, history


def enroll_fresh(gallery: EmbeddingGallery, net: NetworkGraph, recipe: FaceRecipe, samples: int
                 ) -> EmbeddingGallery:
    """Enroll ``samples`` newly rendered images per identity. More views per
    identity tighten matches for enrolled shoppers."""
    extra = face_data(recipe, seed_offset=50, samples=samples)
    for k, name in enumerate(extra.classes):
        enroll(gallery, name, extra.images[extra.labels == k], net)
    return gallery
