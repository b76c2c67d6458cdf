"""Stacked GRU environment encoder with confidence-gated early stopping.

A stack of up to three GRU layers re-encodes the joint state; after each
layer a sigmoidal halting unit emits a confidence score, and iteration stops
as soon as the cumulative confidence crosses 1 - eps. The returned feature
is the confidence-weighted mean of the executed layers' hidden states, so
gradients reach both the gates and the halting unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

INPUT_DIM = 12
HIDDEN_DIM = 50
GATE_HIDDEN = 100
MAX_DEPTH = 3
HALT_EPS = 0.05


def halt_depth(probs, eps: float, max_depth: int = MAX_DEPTH) -> int:
    """Smallest n with cumulative confidence >= 1 - eps, capped at max_depth."""
    total = 0.0
    for i, p in enumerate(probs):
        total += p
        if total >= 1.0 - eps:
            return i + 1
    return max_depth


class GateMlp:
    """Two linear layers with a relu between them."""

    def __init__(self, rng, in_dim: int, hidden: int, out_dim: int, name: str):
        self.w1, self.b1 = ad.init_linear(rng, in_dim, hidden, f"{name}.l1")
        self.w2, self.b2 = ad.init_linear(rng, hidden, out_dim, f"{name}.l2")

    def apply(self, x: ad.Tensor) -> ad.Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def parameters(self) -> list[ad.Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


class GruCell:
    """Gated recurrent cell whose three gates are each a two-layer MLP over
    the concatenated [previous hidden, raw input] rows."""

    def __init__(self, rng, input_dim: int, hidden_dim: int, gate_hidden: int,
                 name: str):
        self.hidden_dim = hidden_dim
        in_dim = hidden_dim + input_dim
        self.update = GateMlp(rng, in_dim, gate_hidden, hidden_dim, f"{name}.z")
        self.reset = GateMlp(rng, in_dim, gate_hidden, hidden_dim, f"{name}.r")
        self.candidate = GateMlp(rng, in_dim, gate_hidden, hidden_dim, f"{name}.q")

    def step(self, h_prev: ad.Tensor, s: ad.Tensor) -> ad.Tensor:
        if h_prev.shape != (s.shape[0], self.hidden_dim):
            raise ValueError(f"hidden state shape {h_prev.shape} does not match "
                             f"input rows {s.shape[0]} x {self.hidden_dim}")
        hs = ad.concat_cols([h_prev, s])
        z = ad.sigmoid(self.update.apply(hs))
        r = ad.sigmoid(self.reset.apply(hs))
        q = ad.tanh(self.candidate.apply(ad.concat_cols([ad.mul(r, h_prev), s])))
        # h = (1 - z) * h_prev + z * q, written without a ones constant
        return ad.add(ad.sub(h_prev, ad.mul(z, h_prev)), ad.mul(z, q))

    def parameters(self) -> list[ad.Parameter]:
        return (self.update.parameters() + self.reset.parameters()
                + self.candidate.parameters())


class HaltingUnit:
    """Single shared linear->sigmoid scorer over hidden rows."""

    def __init__(self, rng, hidden_dim: int, name: str = "halt"):
        self.w, self.b = ad.init_linear(rng, hidden_dim, 1, name)

    def prob_rows(self, h: ad.Tensor) -> ad.Tensor:
        return ad.sigmoid(ad.add(ad.matmul(h, self.w), self.b))

    def parameters(self) -> list[ad.Parameter]:
        return [self.w, self.b]


@dataclass
class StackOutput:
    features: ad.Tensor          # (N+1) x hidden
    depth: int                   # layers executed
    halt_probs: list[float]      # one confidence per executed layer


class AdaptiveGruStack:
    """Up to max_depth GRU layers with distinct parameters (or one shared
    cell, for the weight-sharing ablation) plus the halting unit."""

    def __init__(self, rng, input_dim: int = INPUT_DIM, hidden_dim: int = HIDDEN_DIM,
                 gate_hidden: int = GATE_HIDDEN, max_depth: int = MAX_DEPTH,
                 eps: float = HALT_EPS, shared_weights: bool = False):
        if not 0.0 < eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.max_depth = max_depth
        self.eps = eps
        self.shared_weights = shared_weights
        n_cells = 1 if shared_weights else max_depth
        self.cells = [GruCell(rng, input_dim, hidden_dim, gate_hidden, f"gru{i}")
                      for i in range(n_cells)]
        self.halting = HaltingUnit(rng, hidden_dim)

    def cell(self, n: int) -> GruCell:
        return self.cells[0 if self.shared_weights else n]

    def forward(self, s, fixed_depth: int | None = None,
                h0: np.ndarray | None = None) -> StackOutput:
        """Iterate the stack over one joint-state snapshot.

        fixed_depth bypasses the stopping rule and forces that many layers
        (the fixed-depth ablation); pooling is unchanged. h0 seeds the
        recurrence for the episode-persistent variant, default zeros.
        """
        if fixed_depth is not None and not 1 <= fixed_depth <= self.max_depth:
            raise ValueError(f"fixed_depth must be in [1, {self.max_depth}]")
        s_t = s if isinstance(s, ad.Tensor) else ad.Tensor(np.asarray(s))
        rows = s_t.shape[0]
        h = ad.Tensor(np.zeros((rows, self.hidden_dim)) if h0 is None else h0)

        hiddens: list[ad.Tensor] = []
        confidences: list[ad.Tensor] = []
        probs: list[float] = []
        cumulative = 0.0
        for n in range(self.max_depth):
            h = self.cell(n).step(h, s_t)
            p = ad.mean_all(self.halting.prob_rows(h))
            hiddens.append(h)
            confidences.append(p)
            probs.append(p.item())
            cumulative += p.item()
            if fixed_depth is not None:
                if n + 1 == fixed_depth:
                    break
            elif cumulative >= 1.0 - self.eps:
                break

        depth = len(hiddens)
        pooled = ad.scale_by(hiddens[0], confidences[0])
        for n in range(1, depth):
            pooled = ad.add(pooled, ad.scale_by(hiddens[n], confidences[n]))
        pooled = ad.scale(pooled, 1.0 / depth)
        return StackOutput(features=pooled, depth=depth, halt_probs=probs)

    def parameters(self) -> list[ad.Parameter]:
        out: list[ad.Parameter] = []
        for cell in self.cells:
            out.extend(cell.parameters())
        out.extend(self.halting.parameters())
        return out
