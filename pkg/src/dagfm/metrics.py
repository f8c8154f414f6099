"""Ranking metrics and efficiency accounting (params, FLOPs, latency).

FLOPs convention, applied uniformly:

* one multiplication = 1, one addition = 1, no fused ops;
* embedding lookups, copies, concatenations, and activations cost 0;
* pairwise terms are costed naively, i.e. as if every enabled pair (and for
  the compressed interaction network every output row) recomputes its own
  products — matching the per-pair formulas, not a shared-subexpression
  implementation;
* sum-pooling the *initial* node states costs 0 (those scalars are a
  per-feature lookup, precomputable like the embedding itself), pooling of
  every propagated state is counted;
* vector biases are counted, scalar biases feeding the final logit are not.

``count_flops`` gives the closed form per model spec;
``instrumented_flops`` re-executes the model arithmetic under an op counter
and must agree exactly — that is the oracle the closed forms are tested
against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .interactions import DagfmModel, DagfmPlusModel, DagfmPlusSpec, DagfmSpec, mlp_widths
from .numcore import ConfigurationError
from .teachers import (
    CinModel,
    CinSpec,
    CrossNetModel,
    CrossNetSpec,
    FmfmModel,
    FmfmSpec,
    FwfmModel,
    FwfmSpec,
    TinyMlpModel,
    TinyMlpSpec,
)


class UndefinedMetricError(ValueError):
    """The requested metric has no defined value on this input."""


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------

def auc(labels, scores) -> float:
    """Probability a random positive outranks a random negative (ties 0.5).

    Computed from rank sums with average ranks on tied scores, so it is
    exact and invariant under strictly increasing score transforms.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ConfigurationError(
            f"labels {labels.shape} and scores {scores.shape} must be equal-length vectors"
        )
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined: {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1)
    # average the ranks within each tied run
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(sorted_scores[1:] != sorted_scores[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [scores.size]))
    for s, e in zip(starts, ends):
        if e - s > 1:
            ranks[order[s:e]] = 0.5 * (s + 1 + e)
    rank_sum_pos = ranks[pos].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(labels, probs, eps: float = 1e-12) -> float:
    """Mean binary cross entropy against predicted probabilities."""
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)
    if labels.shape != probs.shape or labels.ndim != 1:
        raise ConfigurationError(
            f"labels {labels.shape} and probs {probs.shape} must be equal-length vectors"
        )
    return float(-np.mean(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)))


# ---------------------------------------------------------------------------
# parameter counting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamCount:
    non_embedding: int
    embedding: int

    @property
    def total(self) -> int:
        return self.non_embedding + self.embedding


def _mlp_param_count(widths) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(widths[:-1], widths[1:]))


def count_params(spec, vocab_sizes) -> ParamCount:
    """Closed-form parameter counts for a model spec; must match an
    exhaustive walk of the built model's ParamStore exactly."""
    known = (DagfmPlusSpec, DagfmSpec, CinSpec, CrossNetSpec, FwfmSpec, FmfmSpec, TinyMlpSpec)
    if not isinstance(spec, known):
        raise ConfigurationError(f"no parameter formula for spec type {type(spec).__name__}")
    emb = int(sum(vocab_sizes)) * spec.embed_dim
    if isinstance(spec, DagfmPlusSpec):
        inner = count_params(spec.dagfm, vocab_sizes)
        return ParamCount(inner.non_embedding + _mlp_param_count(mlp_widths(spec)), emb)
    if isinstance(spec, DagfmSpec):
        P = len(spec.pairs())
        L, d, m = spec.num_layers, spec.embed_dim, spec.num_fields
        per_edge = {"basic-inner": 0, "inner": d, "kernel": d * d, "outer": 2 * d}[spec.kind]
        return ParamCount(L * P * per_edge + m * (L + 1) + 1, emb)
    if isinstance(spec, CinSpec):
        sizes = (spec.num_fields, *spec.layer_sizes)
        kernels = sum(h * hp * spec.num_fields for hp, h in zip(sizes[:-1], sizes[1:]))
        return ParamCount(kernels + spec.pooled_width + 1, emb)
    if isinstance(spec, CrossNetSpec):
        n = spec.width
        return ParamCount(spec.num_layers * (n * n + n) + n + 1, emb)
    if isinstance(spec, FwfmSpec):
        P = spec.num_fields * (spec.num_fields - 1) // 2
        return ParamCount(P * spec.embed_dim + spec.num_fields * spec.embed_dim + 1, emb)
    if isinstance(spec, FmfmSpec):
        P = spec.num_fields * (spec.num_fields - 1) // 2
        d = spec.embed_dim
        return ParamCount(P * d * d + spec.num_fields * d + 1, emb)
    if isinstance(spec, TinyMlpSpec):
        widths = [spec.num_fields * spec.embed_dim, *spec.hidden, 1]
        return ParamCount(_mlp_param_count(widths), emb)
    raise ConfigurationError(f"no parameter formula for spec type {type(spec).__name__}")


def count_params_store(model) -> ParamCount:
    """Exhaustive ParamStore walk (the oracle for :func:`count_params`)."""
    emb_names = set(model.embedding_names())
    emb = model.store.n_scalars(emb_names)
    other = model.store.n_scalars() - emb
    return ParamCount(other, emb)


# ---------------------------------------------------------------------------
# FLOPs closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlopCount:
    mults: int
    adds: int

    @property
    def total(self) -> int:
        return self.mults + self.adds

    def __add__(self, other: "FlopCount") -> "FlopCount":
        return FlopCount(self.mults + other.mults, self.adds + other.adds)


# per-pair combiner costs: (mults, adds) for one enabled edge at dimension d
def _pair_cost(kind: str, d: int) -> tuple[int, int]:
    return {
        "basic-inner": (d, 0),
        "inner": (2 * d, 0),
        "kernel": (d * d + d, d * (d - 1)),
        "outer": (3 * d, d - 1),
    }[kind]


def _mlp_flops(widths, final_scalar_bias: bool = True) -> FlopCount:
    mults = adds = 0
    for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = k == len(widths) - 2
        mults += n_in * n_out
        adds += (n_in - 1) * n_out
        if not (last and final_scalar_bias and n_out == 1):
            adds += n_out
    return FlopCount(mults, adds)


def count_flops(spec) -> FlopCount:
    """Forward-pass cost of one instance under the documented convention."""
    if isinstance(spec, DagfmPlusSpec):
        base = count_flops(spec.dagfm)
        return base + _mlp_flops(mlp_widths(spec)) + FlopCount(0, 1)
    if isinstance(spec, DagfmSpec):
        m, d, L = spec.num_fields, spec.embed_dim, spec.num_layers
        P = len(spec.pairs())
        pm, pa = _pair_cost(spec.kind, d)
        layer_mults = P * pm
        layer_adds = P * pa + (P - m) * d + m * (d - 1)
        head = FlopCount(m * (L + 1), m * (L + 1) - 1)
        return FlopCount(L * layer_mults, L * layer_adds) + head
    if isinstance(spec, CinSpec):
        m, d = spec.num_fields, spec.embed_dim
        mults = adds = 0
        prev = m
        for h in spec.layer_sizes:
            mults += 2 * d * h * prev * m
            adds += h * (prev * m - 1) * d  # double-sum reduction per output row
            adds += h * (d - 1)  # sum-pool the new feature map
            prev = h
        return FlopCount(mults, adds) + FlopCount(spec.pooled_width, spec.pooled_width - 1)
    if isinstance(spec, CrossNetSpec):
        n = spec.width
        per_layer = FlopCount(n * n + n, n * n + n)  # matvec+elementwise / bias+residual
        head = FlopCount(n, n - 1)
        return FlopCount(
            spec.num_layers * per_layer.mults, spec.num_layers * per_layer.adds
        ) + head
    if isinstance(spec, FwfmSpec):
        m, d = spec.num_fields, spec.embed_dim
        P = m * (m - 1) // 2
        return FlopCount(2 * d * P + m * d, P * d + m * d - 1)
    if isinstance(spec, FmfmSpec):
        m, d = spec.num_fields, spec.embed_dim
        P = m * (m - 1) // 2
        return FlopCount((d * d + d) * P + m * d, P * d * d + m * d - 1)
    if isinstance(spec, TinyMlpSpec):
        widths = [spec.num_fields * spec.embed_dim, *spec.hidden, 1]
        return _mlp_flops(widths)
    raise ConfigurationError(f"no FLOPs formula for spec type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# instrumented execution (the FLOPs oracle)
# ---------------------------------------------------------------------------

class OpCounter:
    """Executes numpy arithmetic while counting scalar mults/adds."""

    def __init__(self):
        self.mults = 0
        self.adds = 0

    def mul(self, a, b):
        out = np.multiply(a, b)
        self.mults += out.size
        return out

    def add(self, a, b, counted: bool = True):
        out = np.add(a, b)
        if counted:
            self.adds += out.size
        return out

    def dot(self, a, b) -> float:
        self.mults += a.size
        self.adds += a.size - 1
        return float(np.dot(a, b))

    def matvec(self, W, x):
        self.mults += W.size
        self.adds += W.shape[0] * (W.shape[1] - 1)
        return W @ x

    def sum_last(self, a, counted: bool = True):
        out = a.sum(axis=-1)
        if counted:
            self.adds += (a.shape[-1] - 1) * out.size
        return out

    def reduce(self, arrays):
        total = arrays[0]
        for a in arrays[1:]:
            total = self.add(total, a)
        return total

    @property
    def count(self) -> FlopCount:
        return FlopCount(self.mults, self.adds)


def _instr_dagfm(model: DagfmModel, E: np.ndarray, cnt: OpCounter):
    """Single-instance student forward under the counter; E is (m, d).

    Also returns the per-state node tensors so the MLP-augmented variant can
    reuse them.
    """
    spec = model.spec
    m, d = E.shape
    pairs = model.pairs
    states = [E]
    for t in range(spec.num_layers):
        h = states[-1]
        phis = []
        for p_idx, (j, i) in enumerate(pairs):
            a, b = h[j], E[i]
            if spec.kind == "basic-inner":
                phis.append(cnt.mul(a, b))
            elif spec.kind == "inner":
                w = model.store[f"dag.w{t}"][p_idx]
                phis.append(cnt.mul(cnt.mul(w, a), b))
            elif spec.kind == "kernel":
                K = model.store[f"dag.K{t}"][p_idx]
                phis.append(cnt.mul(cnt.matvec(K.T, a), b))
            else:
                p = model.store[f"dag.p{t}"][p_idx]
                q = model.store[f"dag.q{t}"][p_idx]
                s = cnt.dot(a, p)
                phis.append(cnt.mul(s, cnt.mul(q, b)))
        nxt = np.empty_like(E)
        for i in range(m):
            incoming = [phi for (j, ii), phi in zip(pairs, phis) if ii == i]
            nxt[i] = cnt.reduce(incoming)
        states.append(nxt)
    pooled = [cnt.sum_last(s, counted=(t > 0)) for t, s in enumerate(states)]
    pvec = np.concatenate(pooled)
    logit = cnt.dot(model.store["head.w"], pvec)
    logit = cnt.add(logit, model.store["head.b"][0], counted=False)
    return logit, states


def _instr_mlp(tower, x: np.ndarray, cnt: OpCounter) -> float:
    a = x
    for k, (wname, bname) in enumerate(tower.names):
        W, b = tower.store[wname], tower.store[bname]
        z = cnt.matvec(W.T, a)
        last = k == len(tower.names) - 1
        z = cnt.add(z, b, counted=not (last and b.size == 1))
        a = z if last else (np.maximum(z, 0.0) if tower.activation == "relu" else np.tanh(z))
    return float(a[0])


def instrumented_flops(model, idx_row: np.ndarray) -> tuple[float, FlopCount]:
    """Re-executes ``model``'s forward pass for one instance, counting every
    scalar mult/add per the documented convention. Returns (logit, counts).
    """
    cnt = OpCounter()
    idx_row = np.asarray(idx_row).reshape(1, -1)
    E = model.embedding.lookup(idx_row)[0]
    if isinstance(model, DagfmPlusModel):
        logit, states = _instr_dagfm(model, E, cnt)
        feed = model.plus_spec.mlp_feed
        x = (
            np.concatenate([s.reshape(-1) for s in states])
            if feed == "all-states"
            else states[-1].reshape(-1)
        )
        logit = cnt.add(logit, _instr_mlp(model.mlp, x, cnt))
        return float(logit), cnt.count
    if isinstance(model, DagfmModel):
        logit, _ = _instr_dagfm(model, E, cnt)
        return float(logit), cnt.count
    if isinstance(model, CinModel):
        maps = [E]
        for k in range(model.spec.num_layers):
            W = model.store[f"cin.W{k}"]
            prev = maps[-1]
            rows = []
            for h in range(W.shape[0]):
                # the double sum is costed naively: each output row recomputes
                # the pair products
                pair = cnt.mul(prev[:, None, :], E[None, :, :])
                weighted = cnt.mul(W[h][:, :, None], pair)
                rows.append(cnt.reduce(list(weighted.reshape(-1, E.shape[1]))))
            maps.append(np.stack(rows))
        pooled = np.concatenate([cnt.sum_last(x) for x in maps[1:]])
        logit = cnt.dot(model.store["head.w"], pooled)
        logit = cnt.add(logit, model.store["head.b"][0], counted=False)
        return float(logit), cnt.count
    if isinstance(model, CrossNetModel):
        x0 = E.reshape(-1)
        x = x0
        for t in range(model.spec.num_layers):
            u = cnt.matvec(model.store[f"cross.W{t}"], x)
            u = cnt.add(u, model.store[f"cross.b{t}"])
            x = cnt.add(cnt.mul(x0, u), x)
        logit = cnt.dot(model.store["head.w"], x)
        logit = cnt.add(logit, model.store["head.b"][0], counted=False)
        return float(logit), cnt.count
    if isinstance(model, (FwfmModel, FmfmModel)):
        terms = []
        for p_idx, (i, j) in enumerate(model.pairs):
            if isinstance(model, FwfmModel):
                prod = cnt.mul(cnt.mul(E[i], E[j]), model.store["fwfm.w"][p_idx])
                terms.append(cnt.sum_last(prod))
            else:
                W = model.store["fmfm.W"][p_idx]
                terms.append(cnt.dot(cnt.matvec(W.T, E[i]), E[j]))
        pair_term = cnt.reduce(terms)
        linear = cnt.dot(model.store["linear.u"].reshape(-1), E.reshape(-1))
        logit = cnt.add(pair_term, linear)
        logit = cnt.add(logit, model.store["head.b"][0], counted=False)
        return float(logit), cnt.count
    if isinstance(model, TinyMlpModel):
        return _instr_mlp(model.mlp, E.reshape(-1), cnt), cnt.count
    raise ConfigurationError(f"no instrumented forward for {type(model).__name__}")


# ---------------------------------------------------------------------------
# latency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyStats:
    mean_us: float
    median_us: float
    p99_us: float
    iterations: int


def bench_latency(model, iterations: int = 1000, warmup: int = 100,
                  idx_row: np.ndarray | None = None) -> LatencyStats:
    """Wall time of single-instance forward passes in the calling thread."""
    if iterations < 1:
        raise ConfigurationError(f"iterations must be >= 1, got {iterations}")
    if idx_row is None:
        idx_row = np.zeros((1, model.num_fields), dtype=np.int64)
    else:
        idx_row = np.asarray(idx_row).reshape(1, -1)
    for _ in range(warmup):
        model.forward(idx_row)
    times = np.empty(iterations)
    for k in range(iterations):
        t0 = time.perf_counter_ns()
        model.forward(idx_row)
        times[k] = time.perf_counter_ns() - t0
    times /= 1000.0
    return LatencyStats(
        mean_us=float(times.mean()),
        median_us=float(np.median(times)),
        p99_us=float(np.percentile(times, 99)),
        iterations=iterations,
    )


@dataclass(frozen=True)
class EfficiencyReport:
    params: ParamCount
    flops: FlopCount
    latency: LatencyStats | None = None

    def as_dict(self) -> dict:
        out = {
            "params": {
                "non_embedding": self.params.non_embedding,
                "embedding": self.params.embedding,
                "total": self.params.total,
            },
            "flops": {"mults": self.flops.mults, "adds": self.flops.adds,
                      "total": self.flops.total},
        }
        if self.latency is not None:
            out["latency_us"] = {
                "mean": self.latency.mean_us,
                "median": self.latency.median_us,
                "p99": self.latency.p99_us,
                "iterations": self.latency.iterations,
            }
        return out


def efficiency_report(model, with_latency: bool = False,
                      iterations: int = 1000) -> EfficiencyReport:
    spec = model.plus_spec if isinstance(model, DagfmPlusModel) else model.spec
    params = count_params(spec, model.vocab_sizes)
    flops = count_flops(spec)
    latency = bench_latency(model, iterations=iterations) if with_latency else None
    return EfficiencyReport(params, flops, latency)
