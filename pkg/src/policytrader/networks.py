"""Policy and Q-network function approximators.

Both networks share a sequential feature extractor (1-D CNN or two stacked
LSTMs) over the ``3 x n`` price window and a bias-free linear decision
layer over ``[features, previous action]``. The policy squashes the
decision output with tanh; the Q-network first embeds ``[window,
previous action, action]`` back into a ``3 x n`` tensor so the same
extractor can consume it.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

import numpy as np

from .autodiff import (
    BatchNormState,
    Parameter,
    ShapeError,
    Tensor,
    batchnorm1d,
    concat,
    conv1d,
    dense,
    dropout,
    flatten,
    kaiming_normal,
    leaky_relu,
    lstm_cell,
    maxpool1d,
)
from .autodiff.serialize import read_arrays, write_arrays
from .environment import AgentState

CNN = "CNN"
LSTM = "LSTM"
SEQ_KINDS = (CNN, LSTM)
LEAKY_SLOPE = 0.01


class Module:
    """Owns named parameters and (optionally) batch-norm running statistics."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._bn: dict[str, BatchNormState] = {}

    def add_param(self, name: str, value: np.ndarray) -> Parameter:
        p = Parameter(value)
        self._params[name] = p
        return p

    def add_module(self, prefix: str, module: "Module") -> "Module":
        for name, p in module._params.items():
            self._params[f"{prefix}.{name}"] = p
        for name, s in module._bn.items():
            self._bn[f"{prefix}.{name}"] = s
        return module

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        """Every persistent array: parameters plus running statistics."""
        out = {name: p.data for name, p in self._params.items()}
        for name, s in self._bn.items():
            out[f"{name}.running_mean"] = s.mean
            out[f"{name}.running_var"] = s.var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {arrays[name].shape}")
            p.data = np.array(arrays[name], dtype=np.float64, copy=True)
        for name, s in self._bn.items():
            s.mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64, copy=True)
            s.var = np.array(arrays[f"{name}.running_var"], dtype=np.float64, copy=True)

    def snapshot(self) -> dict:
        """Deep copy of parameters, running stats and optimizer moments."""
        return {
            "arrays": {k: v.copy() for k, v in self.arrays().items()},
            "adam": {
                k: (p.adam_m.copy(), p.adam_v.copy(), p.step_count) for k, p in self._params.items()
            },
        }

    def restore(self, snap: dict) -> None:
        self.load_arrays(snap["arrays"])
        for k, (m, v, n) in snap["adam"].items():
            p = self._params[k]
            p.adam_m, p.adam_v, p.step_count = m.copy(), v.copy(), n


class SeqCNN(Module):
    kind = CNN

    def __init__(self, n_obs: int, rng: np.random.Generator, dropout_rng: np.random.Generator,
                 channels: int = 32, p_drop: float = 0.2):
        super().__init__()
        if n_obs < 6:
            raise ShapeError(f"CNN extractor needs at least 6 stacked observations, got {n_obs}")
        self.n_obs = n_obs
        self.p_drop = p_drop
        self.dropout_rng = dropout_rng
        self.conv1_w = self.add_param("conv1.weight", kaiming_normal((channels, 3, 3), 3 * 3, rng))
        self.conv1_b = self.add_param("conv1.bias", np.zeros(channels))
        self.bn1_g = self.add_param("bn1.gamma", np.ones(channels))
        self.bn1_b = self.add_param("bn1.beta", np.zeros(channels))
        self.bn1 = self._bn["bn1"] = BatchNormState(channels)
        self.conv2_w = self.add_param("conv2.weight", kaiming_normal((channels, channels, 3), channels * 3, rng))
        self.conv2_b = self.add_param("conv2.bias", np.zeros(channels))
        self.bn2_g = self.add_param("bn2.gamma", np.ones(channels))
        self.bn2_b = self.add_param("bn2.beta", np.zeros(channels))
        self.bn2 = self._bn["bn2"] = BatchNormState(channels)
        self.out_features = channels * ((n_obs - 4) // 2)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        if x.ndim != 3 or x.shape[1:] != (3, self.n_obs):
            raise ShapeError(f"expected input (B, 3, {self.n_obs}), got {x.shape}")
        h = conv1d(x, self.conv1_w, self.conv1_b)
        h = batchnorm1d(h, self.bn1_g, self.bn1_b, self.bn1, mode)
        h = dropout(leaky_relu(h, LEAKY_SLOPE), self.p_drop, mode, self.dropout_rng)
        h = conv1d(h, self.conv2_w, self.conv2_b)
        h = batchnorm1d(h, self.bn2_g, self.bn2_b, self.bn2, mode)
        h = dropout(leaky_relu(h, LEAKY_SLOPE), self.p_drop, mode, self.dropout_rng)
        return flatten(maxpool1d(h, 2, 2))


class SeqLSTM(Module):
    kind = LSTM

    def __init__(self, n_obs: int, rng: np.random.Generator, dropout_rng: np.random.Generator,
                 hidden: int = 128, p_drop: float = 0.2, n_features: int = 3):
        super().__init__()
        if n_obs < 1:
            raise ShapeError("LSTM extractor needs a non-empty sequence")
        self.n_obs = n_obs
        self.hidden = hidden
        self.p_drop = p_drop
        self.dropout_rng = dropout_rng
        fan1 = hidden + n_features
        self.w1 = self.add_param("lstm1.weight", kaiming_normal((4 * hidden, fan1), fan1, rng))
        self.b1 = self.add_param("lstm1.bias", np.zeros(4 * hidden))
        self.w2 = self.add_param("lstm2.weight", kaiming_normal((4 * hidden, 2 * hidden), 2 * hidden, rng))
        self.b2 = self.add_param("lstm2.bias", np.zeros(4 * hidden))
        self.out_features = hidden

    def forward(self, x: Tensor, mode: str) -> Tensor:
        if x.ndim != 3 or x.shape[1] != 3 or x.shape[2] == 0:
            raise ShapeError(f"expected input (B, 3, n) with n >= 1, got {x.shape}")
        batch, _, steps = x.shape
        zero = Tensor(np.zeros((batch, self.hidden)))
        h, c = zero, zero
        layer1 = []
        for t in range(steps):
            h, c = lstm_cell(x[:, :, t], h, c, self.w1, self.b1)
            layer1.append(dropout(h, self.p_drop, mode, self.dropout_rng))
        h, c = zero, zero
        for h_in in layer1:
            h, c = lstm_cell(h_in, h, c, self.w2, self.b2)
        return dropout(h, self.p_drop, mode, self.dropout_rng)


def make_seq(kind: str, n_obs: int, rng, dropout_rng, p_drop: float = 0.2) -> Module:
    if kind == CNN:
        return SeqCNN(n_obs, rng, dropout_rng, p_drop=p_drop)
    if kind == LSTM:
        return SeqLSTM(n_obs, rng, dropout_rng, p_drop=p_drop)
    raise ValueError(f"unknown sequential layer kind {kind!r}; expected one of {SEQ_KINDS}")


def decision_forward(g: Tensor, prev_action, weight: Tensor) -> Tensor:
    """``weight . [g, prev_action]`` per batch row."""
    prev = prev_action if isinstance(prev_action, Tensor) else Tensor(np.asarray(prev_action, dtype=float))
    # product-then-sum reduces each row identically, whatever the batch size
    if g.ndim == 1:
        return (concat([g, prev.reshape(1)], axis=0) * weight).sum()
    return (concat([g, prev.reshape(-1, 1)], axis=1) * weight).sum(axis=1)


def _windows(windows) -> Tensor:
    if isinstance(windows, Tensor):
        return windows if windows.ndim == 3 else windows.reshape(1, *windows.shape)
    arr = np.asarray(windows, dtype=float)
    return Tensor(arr[None] if arr.ndim == 2 else arr)


def _batch_states(states: Sequence[AgentState]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.window for s in states]), np.array([s.prev_action for s in states])


class PolicyNet(Module):
    """Maps (window, previous action) to a position in (-1, 1)."""

    def __init__(self, kind: str, n_obs: int = 20, rng=None, dropout_rng=None, p_drop: float = 0.2):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.kind = kind
        self.n_obs = n_obs
        self.p_drop = p_drop
        self.seq = self.add_module("seq", make_seq(kind, n_obs, rng, dropout_rng or np.random.default_rng(), p_drop))
        fan = self.seq.out_features + 1
        self.w_dec = self.add_param("decision.weight", kaiming_normal((fan,), fan, rng))

    def features(self, windows, mode: str = "eval") -> Tensor:
        return self.seq.forward(_windows(windows), mode)

    def decide(self, g: Tensor, prev_actions) -> Tensor:
        return decision_forward(g, prev_actions, self.w_dec)

    def forward(self, windows, prev_actions, mode: str = "eval") -> Tensor:
        return self.decide(self.features(windows, mode), prev_actions).tanh()

    def forward_states(self, states: Sequence[AgentState], mode: str = "eval") -> Tensor:
        w, p = _batch_states(states)
        return self.forward(w, p, mode)

    def mean_from_features(self, g: np.ndarray, prev_action: float) -> float:
        """Policy mean from one precomputed feature row, without building a graph."""
        return float(np.tanh((np.append(g, prev_action) * self.w_dec.data).sum()))

    def act(self, state: AgentState, mode: str = "eval") -> float:
        g = self.features(state.window, mode).data[0]
        return self.mean_from_features(g, state.prev_action)


class QNet(Module):
    """Maps (window, previous action, action) to an unbounded action value."""

    def __init__(self, kind: str, n_obs: int = 20, rng=None, dropout_rng=None, p_drop: float = 0.2):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.kind = kind
        self.n_obs = n_obs
        self.p_drop = p_drop
        self.dropout_rng = dropout_rng or np.random.default_rng()
        width = 3 * n_obs
        self.w_embed = self.add_param("embed.weight", kaiming_normal((width, width + 2), width + 2, rng))
        self.b_embed = self.add_param("embed.bias", np.zeros(width))
        self.seq = self.add_module("seq", make_seq(kind, n_obs, rng, self.dropout_rng, p_drop))
        fan = self.seq.out_features + 1
        self.w_dec = self.add_param("decision.weight", kaiming_normal((fan,), fan, rng))

    def embed(self, windows, prev_actions, actions, mode: str = "eval") -> Tensor:
        x = _windows(windows)
        batch = x.shape[0]
        prev = prev_actions if isinstance(prev_actions, Tensor) else Tensor(np.asarray(prev_actions, dtype=float))
        act = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, dtype=float))
        z = concat([flatten(x), prev.reshape(batch, 1), act.reshape(batch, 1)], axis=1)
        z = dropout(leaky_relu(dense(z, self.w_embed, self.b_embed), LEAKY_SLOPE), self.p_drop, mode, self.dropout_rng)
        return z.reshape(batch, 3, self.n_obs)

    def forward(self, windows, prev_actions, actions, mode: str = "eval") -> Tensor:
        g = self.seq.forward(self.embed(windows, prev_actions, actions, mode), mode)
        return decision_forward(g, prev_actions, self.w_dec)

    def forward_states(self, states: Sequence[AgentState], actions, mode: str = "eval") -> Tensor:
        w, p = _batch_states(states)
        return self.forward(w, p, actions, mode)


# -- persistence ----------------------------------------------------------------

def save_network(net: Module, directory: str) -> None:
    """Write ``params.bin`` and ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    arrays = net.arrays()
    manifest = {
        "network": type(net).__name__,
        "seq_kind": net.kind,
        "n_obs": net.n_obs,
        "dropout": net.p_drop,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        write_arrays(fh, arrays.values())
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_network(directory: str) -> Module:
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    cls = {"PolicyNet": PolicyNet, "QNet": QNet}[manifest["network"]]
    net = cls(manifest["seq_kind"], manifest["n_obs"], rng=np.random.default_rng(0), p_drop=manifest["dropout"])
    with open(os.path.join(directory, "params.bin"), "rb") as fh:
        values = read_arrays(fh)
    names = [e["name"] for e in manifest["arrays"]]
    if len(values) != len(names):
        raise ValueError(f"manifest lists {len(names)} arrays, file holds {len(values)}")
    net.load_arrays(dict(zip(names, values)))
    return net
