"""Sparse token features and the two emission scorers.

Feature templates, per position: lowercased identity and character shape for
the token and every window neighbor (offset marker inside the name, "w0",
"w+1", "shape-2", ...), prefixes/suffixes of length 1-3 and a digit flag for
the center token only.  Out-of-window positions contribute identity pseudo
features "w-1=<BOS>" / "w+1=<EOS>".  The vocabulary is built once, then
frozen; unknown strings map to the reserved UNK id 0.

Emission scorers turn a FeatureVector sequence into CRF emission rows and
push d_emissions back into parameter gradients.  The linear scorer is a
single weight matrix; the shared scorer squashes one tanh hidden layer shared
by all heads, with one output layer per head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Iterable, Sequence

import numpy as np

UNK_ID = 0
BOS = "<BOS>"
EOS = "<EOS>"


@lru_cache(maxsize=65536)
def word_shape(token: str) -> str:
    """Case/digit pattern: upper -> X, lower -> x, digit -> d, rest kept."""
    return "".join(
        "X" if c.isupper() else "x" if c.islower() else "d" if c.isdigit() else c
        for c in token
    )


def feature_strings(tokens: Sequence[str], i: int, radius: int = 2) -> list[str]:
    """Template features for position i.  Pure; depends only on the window."""
    if not 0 <= i < len(tokens):
        raise ValueError(f"position {i} outside sequence of length {len(tokens)}")
    tok = tokens[i]
    low = tok.lower()
    feats = [f"w0={low}", f"shape0={word_shape(tok)}"]
    for k in (1, 2, 3):
        if len(tok) >= k:
            feats.append(f"pre{k}={low[:k]}")
            feats.append(f"suf{k}={low[-k:]}")
    if any(c.isdigit() for c in tok):
        feats.append("digit")
    for off in range(-radius, radius + 1):
        if off == 0:
            continue
        mark = f"+{off}" if off > 0 else str(off)
        j = i + off
        if j < 0:
            feats.append(f"w{mark}={BOS}")
        elif j >= len(tokens):
            feats.append(f"w{mark}={EOS}")
        else:
            feats.append(f"w{mark}={tokens[j].lower()}")
            feats.append(f"shape{mark}={word_shape(tokens[j])}")
    return feats


@dataclass
class FeatureVector:
    """Sparse indicator vector: strictly increasing ids, parallel values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be parallel 1-d arrays")
        if self.indices.size:
            if self.indices[0] < 0:
                raise ValueError("negative feature id")
            if (np.diff(self.indices) <= 0).any():
                raise ValueError("feature ids must be strictly increasing")

    def to_bytes(self) -> bytes:
        return (
            struct.pack("<I", len(self.indices))
            + self.indices.astype("<i8").tobytes()
            + self.values.astype("<f8").tobytes()
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )


class FeatureVocabulary:
    """Feature-string -> id map.  Id 0 is reserved for unknowns after freeze."""

    def __init__(self) -> None:
        self._ids: dict[str, int] = {}
        self.frozen = False

    @property
    def size(self) -> int:
        return len(self._ids) + 1  # UNK included

    def id_of(self, feature: str) -> int:
        got = self._ids.get(feature)
        if got is not None:
            return got
        if self.frozen:
            return UNK_ID
        new = len(self._ids) + 1
        self._ids[feature] = new
        return new

    def freeze(self) -> None:
        self.frozen = True

    def vectorize(self, features: Iterable[str]) -> FeatureVector:
        acc: dict[int, float] = {}
        for s in features:
            fid = self.id_of(s)
            acc[fid] = acc.get(fid, 0.0) + 1.0
        ids = sorted(acc)
        return FeatureVector(
            np.fromiter(ids, dtype=np.int64, count=len(ids)),
            np.fromiter((acc[i] for i in ids), dtype=np.float64, count=len(ids)),
        )

    def strings_by_id(self) -> list[str]:
        """Id-ordered table, UNK slot first; inverse of id_of for known ids."""
        table = ["<UNK>"] * self.size
        for s, i in self._ids.items():
            table[i] = s
        return table

    @classmethod
    def from_strings(cls, table: Sequence[str]) -> "FeatureVocabulary":
        vocab = cls()
        for s in table[1:]:
            vocab.id_of(s)
        vocab.freeze()
        return vocab


def extract_features(
    tokens: Sequence[str], i: int, vocab: FeatureVocabulary, radius: int = 2
) -> FeatureVector:
    return vocab.vectorize(feature_strings(tokens, i, radius))


def _check_ids(f: FeatureVector, feature_count: int) -> None:
    if f.indices.size and f.indices[-1] >= feature_count:
        raise ValueError(
            f"feature id {int(f.indices[-1])} out of bounds for {feature_count} features"
        )


class LinearEmissionModel:
    """Emission row = weights . f + bias."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray) -> None:
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (y_count, feature_count), bias (y_count,)")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("parameters must be finite")

    @classmethod
    def zeros(cls, y_count: int, feature_count: int) -> "LinearEmissionModel":
        return cls(np.zeros((y_count, feature_count)), np.zeros(y_count))

    @property
    def feature_count(self) -> int:
        return self.weights.shape[1]

    def score_row(self, f: FeatureVector) -> np.ndarray:
        _check_ids(f, self.feature_count)
        return self.weights[:, f.indices] @ f.values + self.bias

    def emissions(self, fs: Sequence[FeatureVector]) -> tuple[np.ndarray, None]:
        out = np.empty((len(fs), self.weights.shape[0]))
        for i, f in enumerate(fs):
            out[i] = self.score_row(f)
        return out, None

    def backprop(
        self,
        fs: Sequence[FeatureVector],
        d_emissions: np.ndarray,
        cache: None,
        out: dict[str, np.ndarray],
    ) -> None:
        y, _ = self.weights.shape
        if d_emissions.shape != (len(fs), y):
            raise ValueError("d_emissions shape mismatch")
        d_w = out["weights"]
        for i, f in enumerate(fs):
            d_w[:, f.indices] += np.outer(d_emissions[i], f.values)
        out["bias"] += d_emissions.sum(axis=0)

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}


class SharedEmissionModel:
    """One tanh hidden layer shared by every head, one linear layer per head."""

    def __init__(
        self,
        shared_weights: np.ndarray,
        shared_bias: np.ndarray,
        heads: dict[str, tuple[np.ndarray, np.ndarray]],
    ) -> None:
        self.shared_weights = np.asarray(shared_weights, dtype=np.float64)
        self.shared_bias = np.asarray(shared_bias, dtype=np.float64)
        h = self.shared_weights.shape[0]
        if self.shared_weights.ndim != 2 or h < 1 or self.shared_bias.shape != (h,):
            raise ValueError("shared layer shapes inconsistent")
        self.heads = {}
        for name, (w, b) in heads.items():
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or w.shape[1] != h or b.shape != (w.shape[0],):
                raise ValueError(f"head {name} shapes inconsistent")
            self.heads[name] = (w, b)

    @classmethod
    def create(
        cls,
        hidden_dim: int,
        feature_count: int,
        head_sizes: dict[str, int],
        rng: np.random.Generator,
    ) -> "SharedEmissionModel":
        # Random shared weights break hidden-unit symmetry; heads start at zero.
        shared_w = rng.uniform(-0.1, 0.1, size=(hidden_dim, feature_count))
        heads = {
            name: (np.zeros((y, hidden_dim)), np.zeros(y))
            for name, y in head_sizes.items()
        }
        return cls(shared_w, np.zeros(hidden_dim), heads)

    @property
    def feature_count(self) -> int:
        return self.shared_weights.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.shared_weights.shape[0]

    def _head(self, head: str) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.heads[head]
        except KeyError:
            raise ValueError(f"unknown head {head!r}") from None

    def score_row(self, f: FeatureVector, head: str) -> np.ndarray:
        head_w, head_b = self._head(head)
        _check_ids(f, self.feature_count)
        hidden = np.tanh(self.shared_weights[:, f.indices] @ f.values + self.shared_bias)
        return head_w @ hidden + head_b

    def emissions(
        self, fs: Sequence[FeatureVector], head: str
    ) -> tuple[np.ndarray, np.ndarray]:
        head_w, head_b = self._head(head)
        hidden = np.empty((len(fs), self.hidden_dim))
        for i, f in enumerate(fs):
            _check_ids(f, self.feature_count)
            hidden[i] = self.shared_weights[:, f.indices] @ f.values + self.shared_bias
        hidden = np.tanh(hidden)
        return hidden @ head_w.T + head_b, hidden

    def backprop(
        self,
        fs: Sequence[FeatureVector],
        head: str,
        d_emissions: np.ndarray,
        hidden: np.ndarray,
        out: dict[str, np.ndarray],
    ) -> None:
        head_w, _ = self._head(head)
        if d_emissions.shape != (len(fs), head_w.shape[0]):
            raise ValueError("d_emissions shape mismatch")
        out[f"head:{head}:weights"] += d_emissions.T @ hidden
        out[f"head:{head}:bias"] += d_emissions.sum(axis=0)
        d_hidden = (d_emissions @ head_w) * (1.0 - hidden * hidden)
        d_sw = out["shared_weights"]
        for i, f in enumerate(fs):
            d_sw[:, f.indices] += np.outer(d_hidden[i], f.values)
        out["shared_bias"] += d_hidden.sum(axis=0)

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {
            "shared_weights": self.shared_weights,
            "shared_bias": self.shared_bias,
        }
        for name, (w, b) in self.heads.items():
            out[f"head:{name}:weights"] = w
            out[f"head:{name}:bias"] = b
        return out


def zero_gradients(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def emission_cache(model: Any, fs: Sequence[FeatureVector], head: str | None):
    """Uniform (emissions, cache) view over both scorer types."""
    if isinstance(model, SharedEmissionModel):
        if head is None:
            raise ValueError("shared scorer needs a head name")
        return model.emissions(fs, head)
    return model.emissions(fs)


def emission_backprop(
    model: Any,
    fs: Sequence[FeatureVector],
    head: str | None,
    d_emissions: np.ndarray,
    cache: Any,
    out: dict[str, np.ndarray],
) -> None:
    if isinstance(model, SharedEmissionModel):
        model.backprop(fs, head, d_emissions, cache, out)
    else:
        model.backprop(fs, d_emissions, cache, out)
