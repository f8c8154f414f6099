"""Pairwise interaction combiners and the DAG-propagation student model.

The student assigns one graph node per feature field, seeds node ``i`` with
its embedding ``e_i``, and propagates along directed edges ``j -> i``
(``j <= i``, self-edges always present). At every layer each node aggregates

    h_i^(t+1) = sum_{j <= i} phi(h_j^t, e_i)

where ``phi`` is one of four combiners: plain elementwise product
(``basic-inner``), a per-edge weight vector (``inner``), a per-edge matrix
(``kernel``), or the rank-1 factorization of the kernel matrix (``outer``,
which costs O(d) per edge instead of O(d^2)). Every state set is sum-pooled
per node and a linear head maps the concatenated pooled vector to a logit.

With identity-valued weights and the full lower-triangular edge set, node
``i`` at layer ``t`` is exactly the sum of all order-``t`` products of
embeddings whose largest field index is ``i``; the ``oracle`` module checks
this by brute-force enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import ConfigurationError, ParamStore, ShapeError, stable_sigmoid

KINDS = ("basic-inner", "inner", "kernel", "outer")


# ---------------------------------------------------------------------------
# single-pair combiners
# ---------------------------------------------------------------------------

def _check_vec(name: str, v: np.ndarray, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (d,):
        raise ShapeError(f"{name}: expected shape ({d},), got {v.shape}")
    return v


def phi_basic_inner(a, b):
    """Elementwise product of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"a: expected a vector, got shape {a.shape}")
    b = _check_vec("b", b, a.shape[0])
    return a * b


def phi_inner(a, b, w):
    """Weighted elementwise product ``w * a * b``."""
    a = np.asarray(a, dtype=np.float64)
    b = _check_vec("b", b, a.shape[0])
    w = _check_vec("w", w, a.shape[0])
    return w * a * b


def phi_kernel(a, b, W):
    """Matrix-weighted product ``(a W) * b`` with ``W`` of shape (d, d)."""
    a = np.asarray(a, dtype=np.float64)
    b = _check_vec("b", b, a.shape[0])
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (a.shape[0], a.shape[0]):
        raise ShapeError(f"W: expected shape ({a.shape[0]}, {a.shape[0]}), got {W.shape}")
    return (a @ W) * b


def phi_outer(a, b, p, q):
    """Rank-1 kernel product ``(a . p) * (q * b)``; O(d) per pair.

    Equals :func:`phi_kernel` with ``W = outer(p, q)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = _check_vec("b", b, a.shape[0])
    p = _check_vec("p", p, a.shape[0])
    q = _check_vec("q", q, a.shape[0])
    return (a @ p) * (q * b)


# ---------------------------------------------------------------------------
# specs and embeddings
# ---------------------------------------------------------------------------

def full_dag_pairs(m: int) -> tuple[tuple[int, int], ...]:
    """All edges ``(j, i)`` with ``j <= i``, ordered by target then source."""
    return tuple((j, i) for i in range(m) for j in range(i + 1))


@dataclass(frozen=True)
class DagfmSpec:
    """Hyperparameters of the DAG student.

    ``num_layers`` counts propagation steps, so a model exposes
    ``num_layers + 1`` state sets (the embeddings plus one per step).
    ``edges=None`` means the full lower-triangular DAG; an explicit edge list
    is for ablation only and must keep every self-edge ``(i, i)``.
    """

    kind: str
    num_fields: int
    embed_dim: int
    num_layers: int
    edges: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown interaction kind {self.kind!r}; pick from {KINDS}")
        if self.num_fields < 2:
            raise ConfigurationError(f"need at least 2 fields, got {self.num_fields}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.num_layers < 1:
            raise ConfigurationError(f"need at least 1 propagation layer, got {self.num_layers}")
        if self.edges is not None:
            for j, i in self.edges:
                if not (0 <= j <= i < self.num_fields):
                    raise ConfigurationError(f"edge ({j}, {i}) is not forward-directed in range")
            present = set(self.edges)
            for i in range(self.num_fields):
                if (i, i) not in present:
                    raise ConfigurationError(f"self-edge ({i}, {i}) must be present")

    def pairs(self) -> tuple[tuple[int, int], ...]:
        if self.edges is None:
            return full_dag_pairs(self.num_fields)
        return tuple(sorted(set(self.edges), key=lambda ji: (ji[1], ji[0])))

    @property
    def is_full_dag(self) -> bool:
        return self.edges is None or set(self.edges) == set(full_dag_pairs(self.num_fields))

    @property
    def num_states(self) -> int:
        return self.num_layers + 1


EMBED_INIT_STD = 0.1  # embeddings start small so the zero head gives sigma(0)=0.5


class EmbeddingTable:
    """Per-field embedding matrices registered in a ParamStore.

    ``vocab_sizes`` are row counts per field *including* the OOV bucket
    (i.e. ``FieldSchema.vocab_sizes()``). Lookup of index ``j`` for field
    ``i`` is row ``j`` of that field's matrix.
    """

    def __init__(self, store: ParamStore, vocab_sizes, dim: int, rng, prefix: str = "emb"):
        if dim < 1:
            raise ConfigurationError(f"embedding dim must be >= 1, got {dim}")
        self.store = store
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.dim = int(dim)
        self.names: list[str] = []
        for i, rows in enumerate(self.vocab_sizes):
            name = f"{prefix}.f{i}"
            store.add(name, rng.normal(scale=EMBED_INIT_STD, size=(rows, dim)))
            self.names.append(name)

    @property
    def num_fields(self) -> int:
        return len(self.names)

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        if idx.ndim != 2 or idx.shape[1] != self.num_fields:
            raise ShapeError(f"index matrix must be (batch, {self.num_fields}), got {idx.shape}")
        out = np.empty((idx.shape[0], self.num_fields, self.dim), dtype=self.store.dtype)
        for i, name in enumerate(self.names):
            table = self.store[name]
            col = idx[:, i]
            if col.size and (col.min() < 0 or col.max() >= table.shape[0]):
                bad = col[(col < 0) | (col >= table.shape[0])][0]
                raise IndexError(
                    f"field {i}: index {bad} outside vocab range [0, {table.shape[0]})"
                )
            out[:, i, :] = table[col]
        return out

    def grads(self, idx: np.ndarray, d_emb: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for i, name in enumerate(self.names):
            g = np.zeros_like(self.store[name])
            np.add.at(g, idx[:, i], d_emb[:, i, :])
            out[name] = g
        return out


class Model:
    """Common surface: a ParamStore plus forward/backward over index batches."""

    kind = "?"

    def __init__(self, spec, vocab_sizes, seed: int = 0, dtype=np.float64):
        if len(vocab_sizes) != spec.num_fields:
            raise ConfigurationError(
                f"{len(vocab_sizes)} vocab sizes for {spec.num_fields} fields"
            )
        self.spec = spec
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.store = ParamStore(dtype)
        self._build(np.random.default_rng(seed))

    def _build(self, rng) -> None:
        raise NotImplementedError

    def forward(self, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @property
    def num_fields(self) -> int:
        return self.spec.num_fields

    @property
    def embed_dim(self) -> int:
        return self.spec.embed_dim

    def predict_proba(self, idx: np.ndarray) -> np.ndarray:
        return stable_sigmoid(self.forward(idx))

    def embedding_names(self) -> list[str]:
        return list(self.embedding.names)


# ---------------------------------------------------------------------------
# the student model
# ---------------------------------------------------------------------------

@dataclass
class PropagationTrace:
    """All node states and pooled values of one forward pass.

    ``node_states[t]`` is the state set after ``t`` propagation steps
    (``node_states[0]`` are the embeddings), each of shape (batch, m, d).
    ``pooled[b, t, i]`` sums ``node_states[t][b, i, :]`` over the embedding
    axis; ``pooled_concat`` flattens ``pooled`` state-major to length
    ``m * (num_layers + 1)``.
    """

    node_states: list[np.ndarray]
    pooled: np.ndarray
    pooled_concat: np.ndarray


class DagfmModel(Model):
    """DAG-propagation factorization machine (the distillation student)."""

    kind = "dagfm"

    def _build(self, rng) -> None:
        spec = self.spec
        m, d, L = spec.num_fields, spec.embed_dim, spec.num_layers
        self.pairs = spec.pairs()
        self._jj = np.array([j for j, _ in self.pairs])
        self._ii = np.array([i for _, i in self.pairs])
        self.embedding = EmbeddingTable(self.store, self.vocab_sizes, d, rng)
        P = len(self.pairs)
        for t in range(L):
            if spec.kind == "inner":
                self.store.add(f"dag.w{t}", np.ones((P, d)))
            elif spec.kind == "kernel":
                self.store.add(f"dag.K{t}", np.broadcast_to(np.eye(d), (P, d, d)).copy())
            elif spec.kind == "outer":
                scale = 1.0 / np.sqrt(d)
                self.store.add(f"dag.p{t}", rng.normal(scale=scale, size=(P, d)))
                self.store.add(f"dag.q{t}", rng.normal(scale=scale, size=(P, d)))
        self.store.add("head.w", np.zeros(m * spec.num_states))
        self.store.add("head.b", np.zeros(1))
        maskf = np.zeros((m, m))
        maskf[self._jj, self._ii] = 1.0
        self._maskf = maskf
        self._cache = None

    # -- weight scatter helpers ------------------------------------------------

    def _dense(self, compact: np.ndarray) -> np.ndarray:
        m = self.num_fields
        dense = np.zeros((m, m, *compact.shape[1:]), dtype=self.store.dtype)
        dense[self._jj, self._ii] = compact
        return dense

    def set_identity_edge_weights(self) -> None:
        """Reset edge weights to the values that reduce every combiner to the
        plain elementwise product (ones / identity matrix; for the rank-1
        ``outer`` combiner this only exists at d=1)."""
        d = self.embed_dim
        P = len(self.pairs)
        for t in range(self.spec.num_layers):
            if self.spec.kind == "inner":
                self.store.set(f"dag.w{t}", np.ones((P, d)))
            elif self.spec.kind == "kernel":
                self.store.set(f"dag.K{t}", np.broadcast_to(np.eye(d), (P, d, d)).copy())
            elif self.spec.kind == "outer":
                if d != 1:
                    raise ConfigurationError(
                        "outer weights are rank-1 and cannot express the identity "
                        f"matrix for embed_dim={d}; identity exists only at d=1"
                    )
                self.store.set(f"dag.p{t}", np.ones((P, 1)))
                self.store.set(f"dag.q{t}", np.ones((P, 1)))

    # -- forward ----------------------------------------------------------------

    def propagate(self, states_t: np.ndarray, initial: np.ndarray, t: int) -> np.ndarray:
        """One propagation step: next state set from (current states, embeddings)."""
        if not (0 <= t < self.spec.num_layers):
            raise ConfigurationError(
                f"layer index {t} out of range [0, {self.spec.num_layers})"
            )
        agg, _ = self._aggregate(states_t, t)
        return agg * initial

    def _aggregate(self, h: np.ndarray, t: int):
        kind = self.spec.kind
        if kind == "basic-inner":
            agg = np.einsum("bjd,ji->bid", h, self._maskf)
            return agg, None
        if kind == "inner":
            Wd = self._dense(self.store[f"dag.w{t}"])
            agg = np.einsum("bjd,jid->bid", h, Wd)
            return agg, Wd
        if kind == "kernel":
            Kd = self._dense(self.store[f"dag.K{t}"])
            agg = np.einsum("bjd,jide->bie", h, Kd, optimize=True)
            return agg, Kd
        pd = self._dense(self.store[f"dag.p{t}"])
        qd = self._dense(self.store[f"dag.q{t}"])
        S = np.einsum("bjd,jid->bji", h, pd)
        agg = np.einsum("bji,jie->bie", S, qd)
        return agg, (pd, qd, S)

    def forward_trace(self, idx: np.ndarray) -> tuple[np.ndarray, PropagationTrace]:
        E = self.embedding.lookup(idx)
        states = [E]
        layer_caches = []
        for t in range(self.spec.num_layers):
            agg, cache = self._aggregate(states[-1], t)
            states.append(agg * E)
            layer_caches.append((agg, cache))
        pooled = np.stack([s.sum(axis=2) for s in states], axis=1)
        pvec = pooled.reshape(len(E), -1)
        logits = pvec @ self.store["head.w"] + self.store["head.b"][0]
        self._cache = (np.asarray(idx), E, states, layer_caches, pvec)
        return logits, PropagationTrace(states, pooled, pvec)

    def forward(self, idx: np.ndarray) -> np.ndarray:
        return self.forward_trace(idx)[0]

    # -- backward ---------------------------------------------------------------

    def backward(self, dlogits: np.ndarray, extra_dstates=None) -> dict[str, np.ndarray]:
        """Analytic gradients for every parameter given d(loss)/d(logit).

        ``extra_dstates`` lets a wrapper (the MLP-augmented variant) inject
        additional gradient into each state set before the layer walk.
        """
        idx, E, states, layer_caches, pvec = self._cache
        B, m, d = E.shape
        dlogits = np.asarray(dlogits, dtype=self.store.dtype)
        grads: dict[str, np.ndarray] = {
            "head.w": pvec.T @ dlogits,
            "head.b": np.array([dlogits.sum()], dtype=self.store.dtype),
        }
        dpool = (dlogits[:, None] * self.store["head.w"][None, :]).reshape(
            B, self.spec.num_states, m
        )
        dstates = [
            np.repeat(dpool[:, t, :, None], d, axis=2) for t in range(self.spec.num_states)
        ]
        if extra_dstates is not None:
            for t, extra in enumerate(extra_dstates):
                if extra is not None:
                    dstates[t] += extra
        dE = np.zeros_like(E)
        for t in range(self.spec.num_layers - 1, -1, -1):
            dh_next = dstates[t + 1]
            agg, cache = layer_caches[t]
            dU = dh_next * E
            dE += dh_next * agg
            self._aggregate_backward(t, states[t], dU, cache, dstates[t], grads)
        dE += dstates[0]
        grads.update(self.embedding.grads(idx, dE))
        return grads

    def _aggregate_backward(self, t, h, dU, cache, dh_out, grads) -> None:
        kind = self.spec.kind
        jj, ii = self._jj, self._ii
        if kind == "basic-inner":
            dh_out += np.einsum("bid,ji->bjd", dU, self._maskf)
            return
        if kind == "inner":
            Wd = cache
            dh_out += np.einsum("bid,jid->bjd", dU, Wd)
            dWd = np.einsum("bjd,bid->jid", h, dU)
            grads[f"dag.w{t}"] = dWd[jj, ii]
            return
        if kind == "kernel":
            Kd = cache
            dh_out += np.einsum("bie,jide->bjd", dU, Kd, optimize=True)
            dKd = np.einsum("bjd,bie->jide", h, dU, optimize=True)
            grads[f"dag.K{t}"] = dKd[jj, ii]
            return
        pd, qd, S = cache
        dS = np.einsum("bie,jie->bji", dU, qd)
        dqd = np.einsum("bji,bie->jie", S, dU)
        dh_out += np.einsum("bji,jid->bjd", dS, pd)
        dpd = np.einsum("bji,bjd->jid", dS, h)
        grads[f"dag.p{t}"] = dpd[jj, ii]
        grads[f"dag.q{t}"] = dqd[jj, ii]


# ---------------------------------------------------------------------------
# MLP-augmented variant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DagfmPlusSpec:
    """DAG student plus an MLP tower over concatenated node states.

    ``mlp_feed`` selects whether the tower sees every state set
    (``"all-states"``, input width ``m * (num_layers + 1) * d``) or only the
    last one (``"final-state"``, width ``m * d``).
    """

    dagfm: DagfmSpec
    mlp_hidden: tuple[int, ...] = (128, 128, 128)
    activation: str = "relu"
    mlp_feed: str = "all-states"

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.mlp_feed not in ("all-states", "final-state"):
            raise ConfigurationError(f"unknown mlp_feed {self.mlp_feed!r}")
        if not self.mlp_hidden:
            raise ConfigurationError("mlp_hidden must name at least one layer")

    @property
    def num_fields(self) -> int:
        return self.dagfm.num_fields

    @property
    def embed_dim(self) -> int:
        return self.dagfm.embed_dim

    @property
    def mlp_input_width(self) -> int:
        m, d = self.dagfm.num_fields, self.dagfm.embed_dim
        if self.mlp_feed == "all-states":
            return m * self.dagfm.num_states * d
        return m * d


def mlp_widths(spec) -> list[int]:
    return [spec.mlp_input_width, *spec.mlp_hidden, 1]


class MlpTower:
    """Plain fully connected tower. With ``zero_final`` the output layer
    starts at zero so the tower is an additive no-op until trained."""

    def __init__(self, store: ParamStore, widths: list[int], activation: str, rng,
                 prefix: str = "mlp", zero_final: bool = True):
        self.store = store
        self.widths = widths
        self.activation = activation
        self.names: list[tuple[str, str]] = []
        for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            wname, bname = f"{prefix}.W{k}", f"{prefix}.b{k}"
            last = k == len(widths) - 2
            if last and zero_final:
                W = np.zeros((n_in, n_out))
            else:
                gain = 2.0 if activation == "relu" and not last else 1.0
                W = rng.normal(scale=np.sqrt(gain / n_in), size=(n_in, n_out))
            store.add(wname, W)
            store.add(bname, np.zeros(n_out))
            self.names.append((wname, bname))

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def forward(self, x: np.ndarray) -> np.ndarray:
        acts = [x]
        pre = []
        for k, (wname, bname) in enumerate(self.names):
            z = acts[-1] @ self.store[wname] + self.store[bname]
            pre.append(z)
            acts.append(z if k == len(self.names) - 1 else self._act(z))
        self._cache = (acts, pre)
        return acts[-1][:, 0]

    def backward(self, dout: np.ndarray, grads: dict[str, np.ndarray]) -> np.ndarray:
        acts, pre = self._cache
        delta = dout[:, None]
        for k in range(len(self.names) - 1, -1, -1):
            wname, bname = self.names[k]
            grads[wname] = acts[k].T @ delta
            grads[bname] = delta.sum(axis=0)
            delta = delta @ self.store[wname].T
            if k > 0:
                z = pre[k - 1]
                if self.activation == "relu":
                    delta = delta * (z > 0)
                else:
                    delta = delta * (1.0 - np.tanh(z) ** 2)
        return delta


class DagfmPlusModel(DagfmModel):
    """DAG student with an MLP tower added to the logit (for distilling
    teachers that also carry implicit interactions)."""

    kind = "dagfm+"

    def __init__(self, spec: DagfmPlusSpec, vocab_sizes, seed: int = 0, dtype=np.float64):
        self.plus_spec = spec
        super().__init__(spec.dagfm, vocab_sizes, seed=seed, dtype=dtype)

    def _build(self, rng) -> None:
        super()._build(rng)
        self.mlp = MlpTower(
            self.store, mlp_widths(self.plus_spec), self.plus_spec.activation, rng
        )

    def _mlp_input(self, states: list[np.ndarray]) -> np.ndarray:
        B = states[0].shape[0]
        if self.plus_spec.mlp_feed == "all-states":
            return np.concatenate([s.reshape(B, -1) for s in states], axis=1)
        return states[-1].reshape(B, -1)

    def forward_trace(self, idx: np.ndarray):
        logits, trace = super().forward_trace(idx)
        x = self._mlp_input(trace.node_states)
        if x.shape[1] != self.plus_spec.mlp_input_width:
            raise ConfigurationError(
                f"MLP input width {x.shape[1]} != configured {self.plus_spec.mlp_input_width}"
            )
        logits = logits + self.mlp.forward(x)
        return logits, trace

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        _, E, states, _, _ = self._cache
        B, m, d = E.shape
        grads: dict[str, np.ndarray] = {}
        dx = self.mlp.backward(np.asarray(dlogits, dtype=self.store.dtype), grads)
        n_states = self.spec.num_states
        extra = [None] * n_states
        if self.plus_spec.mlp_feed == "all-states":
            width = m * d
            for t in range(n_states):
                extra[t] = dx[:, t * width : (t + 1) * width].reshape(B, m, d)
        else:
            extra[-1] = dx.reshape(B, m, d)
        base = super().backward(dlogits, extra_dstates=extra)
        base.update(grads)
        return base
