"""Explicit-interaction teacher networks and shallow comparison baselines.

Teachers are the networks the student is distilled from: a compressed
interaction network (CIN) that crosses each layer's feature map with the
raw embeddings, and a full-matrix cross network whose layers compute
``x_{t+1} = x_0 * (W_t x_t + b_t) + x_t``. The baselines (FwFM, FmFM,
tiny MLP) are lightweight students used for comparison only.

All models share the :class:`~dagfm.interactions.Model` surface: embeddings
in a ParamStore, ``forward(idx) -> logits``, ``backward(dlogits) -> grads``
with hand-derived gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interactions import EmbeddingTable, MlpTower, Model
from .numcore import ConfigurationError


def upper_pairs(m: int) -> tuple[tuple[int, int], ...]:
    """Unordered field pairs ``(i, j)`` with ``i < j``, lexicographic."""
    return tuple((i, j) for i in range(m) for j in range(i + 1, m))


# ---------------------------------------------------------------------------
# CIN
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CinSpec:
    """Compressed interaction network: layer k maps ``H_{k-1}`` rows to
    ``H_k`` rows via ``x^k_h = sum_{i,j} W^k_{h,i,j} (x^{k-1}_i * x^0_j)``,
    each layer is sum-pooled over the embedding axis, and a linear head
    reads the ``sum(H_k)`` pooled values."""

    num_fields: int
    embed_dim: int
    layer_sizes: tuple[int, ...] = (200, 200, 200)

    def __post_init__(self):
        if self.num_fields < 2:
            raise ConfigurationError(f"need at least 2 fields, got {self.num_fields}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not self.layer_sizes or any(h < 1 for h in self.layer_sizes):
            raise ConfigurationError(f"bad layer sizes {self.layer_sizes}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def pooled_width(self) -> int:
        return sum(self.layer_sizes)


class CinModel(Model):
    kind = "cin"

    def _build(self, rng) -> None:
        spec = self.spec
        self.embedding = EmbeddingTable(self.store, self.vocab_sizes, spec.embed_dim, rng)
        prev = spec.num_fields
        for k, h in enumerate(spec.layer_sizes):
            scale = 1.0 / np.sqrt(prev * spec.num_fields)
            self.store.add(f"cin.W{k}", rng.normal(scale=scale, size=(h, prev, spec.num_fields)))
            prev = h
        self.store.add("head.w", rng.normal(scale=1.0 / np.sqrt(spec.pooled_width),
                                            size=spec.pooled_width))
        self.store.add("head.b", np.zeros(1))
        self._cache = None

    def forward(self, idx: np.ndarray) -> np.ndarray:
        E = self.embedding.lookup(idx)
        B, m, d = E.shape
        maps = [E]
        for k in range(self.spec.num_layers):
            W = self.store[f"cin.W{k}"]
            prev = maps[-1]
            nxt = np.empty((B, W.shape[0], d), dtype=self.store.dtype)
            # slice over the embedding axis to keep the (B, H, m) intermediate small
            for e in range(d):
                A = np.einsum("bi,hij->bhj", prev[:, :, e], W)
                nxt[:, :, e] = np.einsum("bhj,bj->bh", A, E[:, :, e])
            maps.append(nxt)
        feats = np.concatenate([x.sum(axis=2) for x in maps[1:]], axis=1)
        logits = feats @ self.store["head.w"] + self.store["head.b"][0]
        self._cache = (np.asarray(idx), E, maps, feats)
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        idx, E, maps, feats = self._cache
        B, m, d = E.shape
        dlogits = np.asarray(dlogits, dtype=self.store.dtype)
        grads = {
            "head.w": feats.T @ dlogits,
            "head.b": np.array([dlogits.sum()], dtype=self.store.dtype),
        }
        dfeat = dlogits[:, None] * self.store["head.w"][None, :]
        sizes = self.spec.layer_sizes
        offsets = np.cumsum((0, *sizes))
        d_maps = [np.zeros_like(x) for x in maps]
        for k in range(self.spec.num_layers):
            span = dfeat[:, offsets[k] : offsets[k + 1]]
            d_maps[k + 1] += span[:, :, None]
        dE = np.zeros_like(E)
        for k in range(self.spec.num_layers - 1, -1, -1):
            W = self.store[f"cin.W{k}"]
            prev = maps[k]
            dW = np.zeros_like(W)
            for e in range(d):
                dn_e = d_maps[k + 1][:, :, e]
                M = np.einsum("bh,bj->bhj", dn_e, E[:, :, e])
                dW += np.einsum("bhj,bi->hij", M, prev[:, :, e])
                A = np.einsum("bh,hij->bij", dn_e, W)
                d_maps[k][:, :, e] += np.einsum("bij,bj->bi", A, E[:, :, e])
                dE[:, :, e] += np.einsum("bij,bi->bj", A, prev[:, :, e])
            grads[f"cin.W{k}"] = dW
        dE += d_maps[0]
        grads.update(self.embedding.grads(idx, dE))
        return grads


# ---------------------------------------------------------------------------
# cross network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossNetSpec:
    """Full-matrix cross network over the flattened embedding vector
    (width ``m * d`` at every layer), linear head on the final state."""

    num_fields: int
    embed_dim: int
    num_layers: int = 3

    def __post_init__(self):
        if self.num_fields < 2:
            raise ConfigurationError(f"need at least 2 fields, got {self.num_fields}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.num_layers < 1:
            raise ConfigurationError(f"need at least 1 layer, got {self.num_layers}")

    @property
    def width(self) -> int:
        return self.num_fields * self.embed_dim


class CrossNetModel(Model):
    kind = "crossnet"

    def _build(self, rng) -> None:
        spec = self.spec
        n = spec.width
        self.embedding = EmbeddingTable(self.store, self.vocab_sizes, spec.embed_dim, rng)
        for t in range(spec.num_layers):
            self.store.add(f"cross.W{t}", rng.normal(scale=1.0 / np.sqrt(n), size=(n, n)))
            self.store.add(f"cross.b{t}", np.zeros(n))
        self.store.add("head.w", rng.normal(scale=1.0 / np.sqrt(n), size=n))
        self.store.add("head.b", np.zeros(1))
        self._cache = None

    def forward(self, idx: np.ndarray) -> np.ndarray:
        E = self.embedding.lookup(idx)
        B = E.shape[0]
        x0 = E.reshape(B, -1)
        xs = [x0]
        us = []
        for t in range(self.spec.num_layers):
            u = xs[-1] @ self.store[f"cross.W{t}"].T + self.store[f"cross.b{t}"]
            us.append(u)
            xs.append(x0 * u + xs[-1])
        logits = xs[-1] @ self.store["head.w"] + self.store["head.b"][0]
        self._cache = (np.asarray(idx), E, xs, us)
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        idx, E, xs, us = self._cache
        x0 = xs[0]
        dlogits = np.asarray(dlogits, dtype=self.store.dtype)
        grads = {
            "head.w": xs[-1].T @ dlogits,
            "head.b": np.array([dlogits.sum()], dtype=self.store.dtype),
        }
        dx = dlogits[:, None] * self.store["head.w"][None, :]
        dx0 = np.zeros_like(x0)
        for t in range(self.spec.num_layers - 1, -1, -1):
            du = dx * x0
            dx0 += dx * us[t]
            grads[f"cross.b{t}"] = du.sum(axis=0)
            grads[f"cross.W{t}"] = du.T @ xs[t]
            dx = dx + du @ self.store[f"cross.W{t}"]
        dx0 += dx
        grads.update(self.embedding.grads(idx, dx0.reshape(E.shape)))
        return grads


# ---------------------------------------------------------------------------
# shallow baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FwfmSpec:
    """Field-pair weight *vectors*: logit = bias + sum_i u_i . e_i
    + sum_{i<j} sum(w_ij * e_i * e_j)."""

    num_fields: int
    embed_dim: int

    def __post_init__(self):
        if self.num_fields < 2:
            raise ConfigurationError(f"need at least 2 fields, got {self.num_fields}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")


@dataclass(frozen=True)
class FmfmSpec:
    """Field-pair weight *matrices*: pairwise term sum((e_i W_ij) * e_j)."""

    num_fields: int
    embed_dim: int

    def __post_init__(self):
        if self.num_fields < 2:
            raise ConfigurationError(f"need at least 2 fields, got {self.num_fields}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")


class _PairwiseModel(Model):
    def _build_common(self, rng) -> None:
        spec = self.spec
        self.pairs = upper_pairs(spec.num_fields)
        self._pi = np.array([i for i, _ in self.pairs])
        self._pj = np.array([j for _, j in self.pairs])
        self.embedding = EmbeddingTable(self.store, self.vocab_sizes, spec.embed_dim, rng)
        self.store.add("linear.u", np.zeros((spec.num_fields, spec.embed_dim)))
        self.store.add("head.b", np.zeros(1))

    def _linear_term(self, E: np.ndarray) -> np.ndarray:
        return np.einsum("bmd,md->b", E, self.store["linear.u"])

    def _linear_grads(self, dlogits, E, dE, grads) -> None:
        grads["linear.u"] = np.einsum("b,bmd->md", dlogits, E)
        grads["head.b"] = np.array([dlogits.sum()], dtype=self.store.dtype)
        dE += dlogits[:, None, None] * self.store["linear.u"][None, :, :]


class FwfmModel(_PairwiseModel):
    kind = "fwfm"

    def _build(self, rng) -> None:
        self._build_common(rng)
        self.store.add("fwfm.w", np.ones((len(self.pairs), self.spec.embed_dim)))
        self._cache = None

    def forward(self, idx: np.ndarray) -> np.ndarray:
        E = self.embedding.lookup(idx)
        Ei, Ej = E[:, self._pi, :], E[:, self._pj, :]
        prod = Ei * Ej
        logits = (
            np.einsum("bpd,pd->b", prod, self.store["fwfm.w"])
            + self._linear_term(E)
            + self.store["head.b"][0]
        )
        self._cache = (np.asarray(idx), E, Ei, Ej, prod)
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        idx, E, Ei, Ej, prod = self._cache
        dlogits = np.asarray(dlogits, dtype=self.store.dtype)
        grads: dict[str, np.ndarray] = {}
        w = self.store["fwfm.w"]
        grads["fwfm.w"] = np.einsum("b,bpd->pd", dlogits, prod)
        dE = np.zeros_like(E)
        scaled = dlogits[:, None, None] * w[None, :, :]
        np.add.at(dE, (slice(None), self._pi), scaled * Ej)
        np.add.at(dE, (slice(None), self._pj), scaled * Ei)
        self._linear_grads(dlogits, E, dE, grads)
        grads.update(self.embedding.grads(idx, dE))
        return grads


class FmfmModel(_PairwiseModel):
    kind = "fmfm"

    def _build(self, rng) -> None:
        self._build_common(rng)
        d = self.spec.embed_dim
        self.store.add("fmfm.W", np.broadcast_to(np.eye(d), (len(self.pairs), d, d)).copy())
        self._cache = None

    def forward(self, idx: np.ndarray) -> np.ndarray:
        E = self.embedding.lookup(idx)
        Ei, Ej = E[:, self._pi, :], E[:, self._pj, :]
        T = np.einsum("bpd,pde->bpe", Ei, self.store["fmfm.W"])
        logits = np.einsum("bpe,bpe->b", T, Ej) + self._linear_term(E) + self.store["head.b"][0]
        self._cache = (np.asarray(idx), E, Ei, Ej, T)
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        idx, E, Ei, Ej, T = self._cache
        dlogits = np.asarray(dlogits, dtype=self.store.dtype)
        grads: dict[str, np.ndarray] = {}
        W = self.store["fmfm.W"]
        M = dlogits[:, None, None] * Ej
        grads["fmfm.W"] = np.einsum("bpd,bpe->pde", Ei, M)
        dE = np.zeros_like(E)
        np.add.at(dE, (slice(None), self._pi), np.einsum("bpe,pde->bpd", M, W))
        np.add.at(dE, (slice(None), self._pj), dlogits[:, None, None] * T)
        self._linear_grads(dlogits, E, dE, grads)
        grads.update(self.embedding.grads(idx, dE))
        return grads


@dataclass(frozen=True)
class TinyMlpSpec:
    """Fully connected net over the concatenated embeddings."""

    num_fields: int
    embed_dim: int
    hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "relu"

    def __post_init__(self):
        if self.num_fields < 2:
            raise ConfigurationError(f"need at least 2 fields, got {self.num_fields}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not self.hidden:
            raise ConfigurationError("hidden must name at least one layer")
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")


class TinyMlpModel(Model):
    kind = "tinymlp"

    def _build(self, rng) -> None:
        spec = self.spec
        self.embedding = EmbeddingTable(self.store, self.vocab_sizes, spec.embed_dim, rng)
        widths = [spec.num_fields * spec.embed_dim, *spec.hidden, 1]
        self.mlp = MlpTower(self.store, widths, spec.activation, rng, zero_final=False)
        self._cache = None

    def forward(self, idx: np.ndarray) -> np.ndarray:
        E = self.embedding.lookup(idx)
        B = E.shape[0]
        logits = self.mlp.forward(E.reshape(B, -1))
        self._cache = (np.asarray(idx), E)
        return logits

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        idx, E = self._cache
        grads: dict[str, np.ndarray] = {}
        dx = self.mlp.backward(np.asarray(dlogits, dtype=self.store.dtype), grads)
        grads.update(self.embedding.grads(idx, dx.reshape(E.shape)))
        return grads
