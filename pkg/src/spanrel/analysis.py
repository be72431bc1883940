"""Task relatedness via attention-map similarity.

Two models are compared by running both over the same sentence set and
measuring, per attention head, the negative mean Frobenius distance between
their attention maps: 0 means identical attention, more negative means more
divergent. The per-head grid can be written as CSV (rows = layers, columns =
heads) with an optional heatmap image, and head-averaged similarities can be
correlated against observed transfer results.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoder import NoAttentionLayers
from .trainer import ModelBundle


class SentenceSetMismatch(ValueError):
    pass


class DegenerateVariance(ValueError):
    pass


@dataclass
class AttentionProfile:
    task: str
    sentences: list[list[str]]
    maps: list[np.ndarray]  # per sentence: (layers, heads, n, n)

    @property
    def layers(self) -> int:
        return self.maps[0].shape[0]

    @property
    def heads(self) -> int:
        return self.maps[0].shape[1]


def extract_attention(bundle: ModelBundle, task: str,
                      sentences: list[list[str]]) -> AttentionProfile:
    """Eval-mode attention maps of a trained model over a sentence set."""
    config = bundle.encoder_config
    if config.attn_layers < 1:
        raise NoAttentionLayers("model was built without self-attention layers")
    model = bundle.model()
    maps = []
    for tokens in sentences:
        g = ad.Graph()
        bound = ad.BoundParams(g, bundle.params)
        enc = model.encoder.run(g, bound, tokens, train=False)
        n = len(tokens)
        stacked = np.empty((config.attn_layers, config.attn_heads, n, n))
        for li, layer in enumerate(enc.attention_maps):
            for hi, head_map in enumerate(layer):
                stacked[li, hi] = head_map.data
        maps.append(stacked)
    return AttentionProfile(task=task, sentences=[list(s) for s in sentences],
                            maps=maps)


def _check_comparable(a: AttentionProfile, b: AttentionProfile) -> None:
    if a.sentences != b.sentences:
        raise SentenceSetMismatch("profiles were computed over different sentences")
    if a.maps and b.maps and a.maps[0].shape[:2] != b.maps[0].shape[:2]:
        raise SentenceSetMismatch("profiles have different layer/head geometry")


def attention_similarity(a: AttentionProfile, b: AttentionProfile,
                         layer: int, head: int) -> float:
    """Negative mean Frobenius distance for one head; 0 iff identical."""
    _check_comparable(a, b)
    total = 0.0
    for ma, mb in zip(a.maps, b.maps):
        diff = ma[layer, head] - mb[layer, head]
        total += float(np.sqrt((diff * diff).sum()))
    return -total / len(a.maps)


def similarity_matrix(a: AttentionProfile, b: AttentionProfile) -> np.ndarray:
    """(layers, heads) grid of per-head similarities."""
    _check_comparable(a, b)
    grid = np.empty((a.layers, a.heads))
    for layer in range(a.layers):
        for head in range(a.heads):
            grid[layer, head] = attention_similarity(a, b, layer, head)
    return grid


def mean_similarity(grid: np.ndarray) -> float:
    """Head-averaged similarity used to rank source tasks."""
    return float(grid.mean())


def write_similarity_csv(grid: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, grid, delimiter=",", fmt="%.17g")


def read_similarity_csv(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def write_similarity_heatmap(grid: np.ndarray, path: str | Path) -> bool:
    """Render the grid as a PNG; returns False if matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(1 + grid.shape[1] * 0.6, 1 + grid.shape[0] * 0.6))
    image = ax.imshow(grid, cmap="viridis", aspect="auto")
    ax.set_xlabel("head")
    ax.set_ylabel("layer")
    fig.colorbar(image, ax=ax, label="similarity")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def pearson_correlation(xs, ys) -> float:
    """Standard Pearson r; both inputs need at least 2 points and variance."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.size < 2:
        raise ValueError("need two same-length series of at least 2 points")
    xd = xs - xs.mean()
    yd = ys - ys.mean()
    denom = np.sqrt((xd * xd).sum() * (yd * yd).sum())
    if denom == 0.0:
        raise DegenerateVariance("an input series has zero variance")
    return float((xd * yd).sum() / denom)
