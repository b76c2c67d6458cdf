"""Self-attention encoder over the recurrent features plus the value head.

The encoder has no positional encoding, so permuting obstacle rows permutes
the output rows without changing their contents; the value head reads only
row 0 (the robot's row) concatenated with the raw 7 ego fields.

Three forward paths share one parameter set:
  * state_value / value_tensor: single snapshot on the autodiff tape,
  * batch_values: many snapshots row-stacked into one tape graph with
    block-diagonal attention masking (the training path),
  * values: plain-numpy inference that only evaluates the attention row the
    value head reads; used for action lookahead and target networks.
The batched and numpy paths are verified against the single path in tests.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .env_model import (AdaptiveGruStack, StackOutput, halt_depth,
                        GATE_HIDDEN, HALT_EPS, HIDDEN_DIM, INPUT_DIM, MAX_DEPTH)

MODEL_DIM = 150
N_HEADS = 2
AGENT_DIM = 7
HEAD_HIDDEN = (150, 100, 100)


def default_hyper(**overrides) -> dict:
    hyper = {
        "input_dim": INPUT_DIM,
        "hidden_dim": HIDDEN_DIM,
        "gate_hidden": GATE_HIDDEN,
        "max_depth": MAX_DEPTH,
        "halt_eps": HALT_EPS,
        "shared_gru": False,
        "model_dim": MODEL_DIM,
        "n_heads": N_HEADS,
        "tf_residual": False,
        "agent_dim": AGENT_DIM,
        "head_hidden": list(HEAD_HIDDEN),
        "world_frame": False,
        "persistent_hidden": False,
    }
    unknown = set(overrides) - set(hyper)
    if unknown:
        raise ValueError(f"unknown hyper keys: {sorted(unknown)}")
    hyper.update(overrides)
    return hyper


class AttentionHead:
    def __init__(self, rng, model_dim: int, head_dim: int, name: str):
        self.head_dim = head_dim
        self.wq, self.bq = ad.init_linear(rng, model_dim, head_dim, f"{name}.q")
        self.wk, self.bk = ad.init_linear(rng, model_dim, head_dim, f"{name}.k")
        self.wv, self.bv = ad.init_linear(rng, model_dim, head_dim, f"{name}.v")

    def parameters(self) -> list[ad.Parameter]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv]


class SelfAttentionEncoder:
    """Input projection, multi-head scaled dot-product attention, output
    projection and a feed-forward layer; optionally the conventional
    residual + layer-norm wiring behind tf_residual."""

    def __init__(self, rng, in_dim: int, model_dim: int, n_heads: int,
                 residual: bool = False):
        if model_dim % n_heads != 0:
            raise ValueError(f"n_heads {n_heads} must divide model_dim {model_dim}")
        self.model_dim = model_dim
        self.head_dim = model_dim // n_heads
        self.residual = residual
        self.w_in, self.b_in = ad.init_linear(rng, in_dim, model_dim, "tf.embed")
        self.heads = [AttentionHead(rng, model_dim, self.head_dim, f"tf.h{i}")
                      for i in range(n_heads)]
        self.w_out, self.b_out = ad.init_linear(rng, model_dim, model_dim, "tf.out")
        self.w_ff, self.b_ff = ad.init_linear(rng, model_dim, model_dim, "tf.ff")
        if residual:
            self.g1 = ad.Parameter(np.ones((1, model_dim)), "tf.norm1.g")
            self.c1 = ad.Parameter(np.zeros((1, model_dim)), "tf.norm1.b")
            self.g2 = ad.Parameter(np.ones((1, model_dim)), "tf.norm2.g")
            self.c2 = ad.Parameter(np.zeros((1, model_dim)), "tf.norm2.b")

    def encode(self, y: ad.Tensor, return_weights: bool = False):
        """Encode the rows of one snapshot (order preserving)."""
        e = ad.add(ad.matmul(y, self.w_in), self.b_in)
        inv_sqrt = 1.0 / math.sqrt(self.head_dim)
        outputs, weights = [], []
        for head in self.heads:
            q = ad.add(ad.matmul(e, head.wq), head.bq)
            k = ad.add(ad.matmul(e, head.wk), head.bk)
            v = ad.add(ad.matmul(e, head.wv), head.bv)
            scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt)
            attn = ad.softmax_rows(scores)
            weights.append(attn.data.copy())
            outputs.append(ad.matmul(attn, v))
        merged = ad.add(ad.matmul(ad.concat_cols(outputs), self.w_out), self.b_out)
        if self.residual:
            x1 = ad.layer_norm_rows(ad.add(e, merged), self.g1, self.c1)
            ff = ad.relu(ad.add(ad.matmul(x1, self.w_ff), self.b_ff))
            encoded = ad.layer_norm_rows(ad.add(x1, ff), self.g2, self.c2)
        else:
            encoded = ad.relu(ad.add(ad.matmul(merged, self.w_ff), self.b_ff))
        if return_weights:
            return encoded, weights
        return encoded

    def encode_blocks_row0(self, y: ad.Tensor, lengths: list[int],
                           starts: list[int]) -> ad.Tensor:
        """Row-0 encodings for row-stacked snapshots, one output row each.

        Attention keys/values span each block; only the block's first row is
        used as a query, matching what the value head reads. Produces the
        same numbers as encode() row 0 applied per snapshot.
        """
        e = ad.add(ad.matmul(y, self.w_in), self.b_in)
        e0 = ad.gather_rows(e, starts)
        inv_sqrt = 1.0 / math.sqrt(self.head_dim)
        outputs = []
        for head in self.heads:
            q0 = ad.add(ad.matmul(e0, head.wq), head.bq)
            k = ad.add(ad.matmul(e, head.wk), head.bk)
            v = ad.add(ad.matmul(e, head.wv), head.bv)
            outputs.append(ad.block_attention_row0(q0, k, v, lengths, inv_sqrt))
        merged = ad.add(ad.matmul(ad.concat_cols(outputs), self.w_out), self.b_out)
        if self.residual:
            x1 = ad.layer_norm_rows(ad.add(e0, merged), self.g1, self.c1)
            ff = ad.relu(ad.add(ad.matmul(x1, self.w_ff), self.b_ff))
            return ad.layer_norm_rows(ad.add(x1, ff), self.g2, self.c2)
        return ad.relu(ad.add(ad.matmul(merged, self.w_ff), self.b_ff))

    def parameters(self) -> list[ad.Parameter]:
        out = [self.w_in, self.b_in]
        for head in self.heads:
            out.extend(head.parameters())
        out.extend([self.w_out, self.b_out, self.w_ff, self.b_ff])
        if self.residual:
            out.extend([self.g1, self.c1, self.g2, self.c2])
        return out


class ValueHead:
    """MLP over [encoded row 0, raw ego fields] down to one scalar."""

    def __init__(self, rng, in_dim: int, hidden: tuple[int, ...]):
        dims = [in_dim, *hidden, 1]
        self.layers = [ad.init_linear(rng, dims[i], dims[i + 1], f"value.l{i}")
                       for i in range(len(dims) - 1)]

    def apply(self, x: ad.Tensor) -> ad.Tensor:
        for i, (w, b) in enumerate(self.layers):
            x = ad.add(ad.matmul(x, w), b)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x

    def parameters(self) -> list[ad.Parameter]:
        return [p for pair in self.layers for p in pair]


class ValueNetwork:
    def __init__(self, hyper: dict | None = None, seed: int = 0):
        self.hyper = default_hyper() if hyper is None else dict(hyper)
        h = self.hyper
        rng = np.random.default_rng(seed)
        self.stack = AdaptiveGruStack(
            rng, input_dim=h["input_dim"], hidden_dim=h["hidden_dim"],
            gate_hidden=h["gate_hidden"], max_depth=h["max_depth"],
            eps=h["halt_eps"], shared_weights=h["shared_gru"])
        self.encoder = SelfAttentionEncoder(
            rng, in_dim=h["hidden_dim"], model_dim=h["model_dim"],
            n_heads=h["n_heads"], residual=h["tf_residual"])
        self.head = ValueHead(
            rng, in_dim=h["model_dim"] + h["agent_dim"],
            hidden=tuple(h["head_hidden"]))
        self._params = (self.stack.parameters() + self.encoder.parameters()
                        + self.head.parameters())
        names = [p.name for p in self._params]
        if len(set(names)) != len(names):
            raise RuntimeError("duplicate parameter names")

    # ------------------------------------------------------------------
    # parameter plumbing

    def parameters(self) -> list[ad.Parameter]:
        return self._params

    def param_arrays(self) -> dict[str, np.ndarray]:
        """Live views of every parameter; updates in place track training."""
        return {p.name: p.data for p in self._params}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self._params}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self._params:
            src = arrays[p.name]
            if src.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{src.shape} vs {p.data.shape}")
            p.data[...] = src

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.param_arrays(), self.hyper)

    @classmethod
    def load(cls, path) -> "ValueNetwork":
        hyper, arrays = ad.load_checkpoint(path)
        net = cls(hyper=hyper, seed=0)
        net.load_arrays(arrays)
        return net

    # ------------------------------------------------------------------
    # single-snapshot tape path

    def value_tensor(self, joint_state, fixed_depth: int | None = None,
                     h0: np.ndarray | None = None,
                     return_weights: bool = False):
        """Scalar value tensor for one joint state, on the autodiff tape."""
        s = np.asarray(joint_state, dtype=np.float64)
        out: StackOutput = self.stack.forward(s, fixed_depth=fixed_depth, h0=h0)
        if return_weights:
            encoded, weights = self.encoder.encode(out.features, return_weights=True)
        else:
            encoded = self.encoder.encode(out.features)
        row0 = ad.gather_rows(encoded, [0])
        ego = ad.Tensor(s[0:1, :self.hyper["agent_dim"]])
        value = self.head.apply(ad.concat_cols([row0, ego]))
        if return_weights:
            return value, out, weights
        return value, out

    def state_value(self, joint_state, fixed_depth: int | None = None,
                    h0: np.ndarray | None = None) -> float:
        with ad.no_grad():
            value, _ = self.value_tensor(joint_state, fixed_depth=fixed_depth, h0=h0)
        return value.item()

    # ------------------------------------------------------------------
    # row-stacked tape path (training)

    def batch_values(self, states: list[np.ndarray],
                     fixed_depth: int | None = None) -> ad.Tensor:
        """Values for a batch of snapshots as one (B, 1) tape tensor.

        Snapshots are stacked row-wise; attention is confined to each
        snapshot's rows by an additive block mask, and the halting pooling
        uses per-snapshot weights, so the result matches the single path.
        """
        h = self.hyper
        lengths = [s.shape[0] for s in states]
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int)
        total = int(np.sum(lengths))
        b = len(states)

        x = ad.Tensor(np.vstack([np.asarray(s, dtype=np.float64) for s in states]))
        seg_avg = np.zeros((b, total))
        seg_expand = np.zeros((total, b))
        for i, (st, ln) in enumerate(zip(starts, lengths)):
            seg_avg[i, st:st + ln] = 1.0 / ln
            seg_expand[st:st + ln, i] = 1.0
        avg_t = ad.Tensor(seg_avg)
        expand_t = ad.Tensor(seg_expand)

        hidden = ad.Tensor(np.zeros((total, h["hidden_dim"])))
        hiddens: list[ad.Tensor] = []
        seg_probs: list[ad.Tensor] = []
        threshold = 1.0 - h["halt_eps"]
        run_depth = h["max_depth"] if fixed_depth is None else fixed_depth
        cumulative = np.zeros(b)
        for n in range(run_depth):
            hidden = self.stack.cell(n).step(hidden, x)
            p_seg = ad.matmul(avg_t, self.stack.halting.prob_rows(hidden))
            hiddens.append(hidden)
            seg_probs.append(p_seg)
            cumulative += p_seg.data[:, 0]
            if fixed_depth is None and np.all(cumulative >= threshold):
                break

        executed = len(hiddens)
        if fixed_depth is not None:
            depths = np.full(b, fixed_depth, dtype=int)
        else:
            prob_mat = np.hstack([p.data for p in seg_probs])
            depths = np.array([halt_depth(prob_mat[i], h["halt_eps"], executed)
                               for i in range(b)])

        pooled = None
        for n in range(executed):
            gate = np.where(n < depths, 1.0 / depths, 0.0).reshape(-1, 1)
            w_rows = ad.matmul(expand_t, ad.mul(seg_probs[n], ad.Tensor(gate)))
            term = ad.mul_columns(hiddens[n], w_rows)
            pooled = term if pooled is None else ad.add(pooled, term)

        row0 = self.encoder.encode_blocks_row0(pooled, lengths, list(starts))
        ego = ad.Tensor(np.vstack([np.asarray(s)[0:1, :h["agent_dim"]]
                                   for s in states]))
        return self.head.apply(ad.concat_cols([row0, ego]))

    # ------------------------------------------------------------------
    # plain-numpy inference path

    def values(self, states: list[np.ndarray], arrays: dict | None = None,
               fixed_depth: int | None = None, return_depths: bool = False,
               h0: np.ndarray | None = None):
        """Values for a batch of snapshots without building a tape.

        arrays defaults to the live parameters; pass a snapshot() to
        evaluate a frozen copy (the target network).
        """
        p = arrays if arrays is not None else self.param_arrays()
        return _numpy_values(p, self.hyper, states, fixed_depth=fixed_depth,
                             return_depths=return_depths, h0=h0)


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _np_layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray,
                   eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gate(p: dict, name: str, x: np.ndarray) -> np.ndarray:
    h = np.maximum(x @ p[f"{name}.l1.w"] + p[f"{name}.l1.b"], 0.0)
    return h @ p[f"{name}.l2.w"] + p[f"{name}.l2.b"]


def _numpy_values(p: dict, hyper: dict, states: list[np.ndarray],
                  fixed_depth: int | None = None, return_depths: bool = False,
                  h0: np.ndarray | None = None):
    lengths = [s.shape[0] for s in states]
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int)
    bounds = list(zip(starts, np.cumsum(lengths).astype(int)))
    b = len(states)
    x = np.vstack([np.asarray(s, dtype=np.float64) for s in states])

    def cell_name(n: int) -> str:
        return "gru0" if hyper["shared_gru"] else f"gru{n}"

    if h0 is None:
        hidden = np.zeros((x.shape[0], hyper["hidden_dim"]))
    else:
        hidden = np.vstack([h0 for _ in range(b)])
    hiddens: list[np.ndarray] = []
    prob_cols: list[np.ndarray] = []
    threshold = 1.0 - hyper["halt_eps"]
    run_depth = hyper["max_depth"] if fixed_depth is None else fixed_depth
    cumulative = np.zeros(b)
    for n in range(run_depth):
        name = cell_name(n)
        hs = np.hstack([hidden, x])
        z = _np_sigmoid(_gate(p, f"{name}.z", hs))
        r = _np_sigmoid(_gate(p, f"{name}.r", hs))
        q = np.tanh(_gate(p, f"{name}.q", np.hstack([r * hidden, x])))
        hidden = (1.0 - z) * hidden + z * q
        p_rows = _np_sigmoid(hidden @ p["halt.w"] + p["halt.b"])[:, 0]
        p_seg = np.add.reduceat(p_rows, starts) / np.asarray(lengths, dtype=float)
        hiddens.append(hidden)
        prob_cols.append(p_seg)
        cumulative += p_seg
        if fixed_depth is None and np.all(cumulative >= threshold):
            break

    executed = len(hiddens)
    if fixed_depth is not None:
        depths = np.full(b, fixed_depth, dtype=int)
    else:
        prob_mat = np.column_stack(prob_cols)
        depths = np.array([halt_depth(prob_mat[i], hyper["halt_eps"], executed)
                           for i in range(b)])

    pooled = np.zeros_like(hiddens[0])
    for n in range(executed):
        gate = np.where(n < depths, prob_cols[n] / depths, 0.0)
        pooled += hiddens[n] * np.repeat(gate, lengths).reshape(-1, 1)

    e = pooled @ p["tf.embed.w"] + p["tf.embed.b"]
    inv_sqrt = 1.0 / math.sqrt(hyper["model_dim"] // hyper["n_heads"])
    row0 = np.empty((b, hyper["model_dim"]))
    # only the robot row of the encoder output feeds the value head, so we
    # evaluate attention for that query alone
    for i, (st, en) in enumerate(bounds):
        seg = e[st:en]
        parts = []
        for hd in range(hyper["n_heads"]):
            hn = f"tf.h{hd}"
            q0 = seg[0:1] @ p[f"{hn}.q.w"] + p[f"{hn}.q.b"]
            k = seg @ p[f"{hn}.k.w"] + p[f"{hn}.k.b"]
            v = seg @ p[f"{hn}.v.w"] + p[f"{hn}.v.b"]
            scores = (q0 @ k.T) * inv_sqrt
            scores -= scores.max()
            w = np.exp(scores)
            w /= w.sum()
            parts.append(w @ v)
        merged = np.hstack(parts) @ p["tf.out.w"] + p["tf.out.b"]
        if hyper["tf_residual"]:
            x1 = _np_layer_norm(seg[0:1] + merged, p["tf.norm1.g"], p["tf.norm1.b"])
            ff = np.maximum(x1 @ p["tf.ff.w"] + p["tf.ff.b"], 0.0)
            row0[i] = _np_layer_norm(x1 + ff, p["tf.norm2.g"], p["tf.norm2.b"])
        else:
            row0[i] = np.maximum(merged @ p["tf.ff.w"] + p["tf.ff.b"], 0.0)

    ego = np.vstack([np.asarray(s)[0:1, :hyper["agent_dim"]] for s in states])
    feat = np.hstack([row0, ego])
    n_layers = len(hyper["head_hidden"]) + 1
    for i in range(n_layers):
        feat = feat @ p[f"value.l{i}.w"] + p[f"value.l{i}.b"]
        if i < n_layers - 1:
            feat = np.maximum(feat, 0.0)
    values = feat[:, 0]
    if return_depths:
        return values, depths.tolist()
    return values
