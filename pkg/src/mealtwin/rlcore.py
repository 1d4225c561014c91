"""From-scratch deep Q-learning machinery on numpy float64.

Value networks are small dense stacks, optionally fronted by a shared
courier-embedding layer: a single weight triple applied window-3/stride-3
without bias across the courier section of the input, producing one scalar
embedding per courier.  Forward, backward, Adam, replay and the double-network
TD update are all implemented here; no autograd framework is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, NumericalError

QNET_SCHEMA = "mealtwin-qnet/1"
MASKED_Q = -1e9  # huge negative stands in for invalid actions

# Published training hyperparameters.
LEARNING_RATE = 5e-4
GAMMA = 0.8
REPLAY_CAPACITY = 1000
BATCH_SIZE = 300
TARGET_SYNC_DECISIONS = 100
LEARN_PERIOD_STEPS = 5
GRAD_CLIP = 0.5
EPSILON_START = 0.95
EPSILON_DECAY = 0.99
EPSILON_FLOOR = 0.005

ACT_RELU = "relu"
ACT_LINEAR = "linear"


@dataclass(frozen=True)
class NetSpec:
    """Architecture description; serialized alongside weights."""

    input_dim: int
    layer_dims: Tuple[int, ...]
    activations: Tuple[str, ...]
    head_dim: int = 0  # passthrough scalars ahead of the embedded triples
    embed_groups: int = 0  # courier triples consumed by the shared embedding

    def __post_init__(self) -> None:
        if len(self.layer_dims) != len(self.activations):
            raise ConfigError("layer_dims and activations must align")
        for act in self.activations:
            if act not in (ACT_RELU, ACT_LINEAR):
                raise ConfigError(f"unknown activation {act!r}")
        if self.embed_groups:
            expected = self.head_dim + 3 * self.embed_groups
            if self.input_dim != expected:
                raise ConfigError(
                    f"embedding front expects input_dim {expected}, got {self.input_dim}"
                )

    @property
    def dense_input_dim(self) -> int:
        return self.head_dim + self.embed_groups if self.embed_groups else self.input_dim


class QNet:
    """Dense Q-value network with parameters stored in one flat float64 vector."""

    def __init__(self, spec: NetSpec, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        shapes = []
        din = spec.dense_input_dim
        for dout in spec.layer_dims:
            shapes.append((din, dout))
            din = dout
        self._shapes = shapes
        n = (3 if spec.embed_groups else 0) + sum(a * b + b for a, b in shapes)
        self.params = np.zeros(n, dtype=np.float64)
        self._build_views()
        if rng is not None:
            self.init_params(rng)

    def _build_views(self) -> None:
        offset = 0
        if self.spec.embed_groups:
            self.embed = self.params[0:3]
            offset = 3
        else:
            self.embed = None
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for din, dout in self._shapes:
            self.weights.append(self.params[offset : offset + din * dout].reshape(din, dout))
            offset += din * dout
            self.biases.append(self.params[offset : offset + dout])
            offset += dout

    def init_params(self, rng: np.random.Generator) -> None:
        """Glorot-uniform weights, zero biases; embedding treated as fan 3 -> 1."""
        if self.embed is not None:
            limit = np.sqrt(6.0 / 4.0)
            self.embed[:] = rng.uniform(-limit, limit, size=3)
        for (din, dout), w, b in zip(self._shapes, self.weights, self.biases):
            limit = np.sqrt(6.0 / (din + dout))
            w[:] = rng.uniform(-limit, limit, size=(din, dout))
            b[:] = 0.0

    def clone(self) -> "QNet":
        other = QNet(self.spec)
        other.params[:] = self.params
        return other

    @property
    def num_actions(self) -> int:
        return self.spec.layer_dims[-1]

    def forward_batch(
        self, X: np.ndarray, want_cache: bool = False
    ) -> Tuple[np.ndarray, Optional[dict]]:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.spec.input_dim:
            raise ContractError(f"expected input shape (B, {self.spec.input_dim})")
        cache: Optional[dict] = {"inputs": [], "pre": []} if want_cache else None
        if self.spec.embed_groups:
            head = X[:, : self.spec.head_dim]
            triples = X[:, self.spec.head_dim :].reshape(len(X), self.spec.embed_groups, 3)
            a = np.concatenate([head, triples @ self.embed], axis=1)
            if cache is not None:
                cache["triples"] = triples
        else:
            a = X
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            if cache is not None:
                cache["inputs"].append(a)
            z = a @ w + b
            if cache is not None:
                cache["pre"].append(z)
            a = np.maximum(z, 0.0) if act == ACT_RELU else z
        return a, cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        q, _ = self.forward_batch(np.asarray(x, dtype=np.float64)[None, :])
        return q[0]

    def backward(self, cache: dict, dQ: np.ndarray) -> np.ndarray:
        """Gradient of whatever loss produced dQ, as a flat vector over params."""
        grad = np.zeros_like(self.params)
        offset_embed = 3 if self.spec.embed_groups else 0
        g_weights: List[np.ndarray] = []
        g_biases: List[np.ndarray] = []
        da = dQ
        for idx in range(len(self.weights) - 1, -1, -1):
            z = cache["pre"][idx]
            dz = da * (z > 0.0) if self.spec.activations[idx] == ACT_RELU else da
            g_weights.append(cache["inputs"][idx].T @ dz)
            g_biases.append(dz.sum(axis=0))
            da = dz @ self.weights[idx].T
        g_weights.reverse()
        g_biases.reverse()
        offset = offset_embed
        for gw, gb in zip(g_weights, g_biases):
            grad[offset : offset + gw.size] = gw.ravel()
            offset += gw.size
            grad[offset : offset + gb.size] = gb
            offset += gb.size
        if self.spec.embed_groups:
            d_embedded = da[:, self.spec.head_dim :]
            grad[0:3] = np.einsum("bg,bgk->k", d_embedded, cache["triples"])
        return grad

    def preactivation_margin(self, X: np.ndarray) -> float:
        """Smallest |pre-activation| across relu layers; guards gradient checks."""
        _, cache = self.forward_batch(X, want_cache=True)
        margins = [
            np.abs(z).min()
            for z, act in zip(cache["pre"], self.spec.activations)
            if act == ACT_RELU
        ]
        return float(min(margins)) if margins else np.inf


class Adam:
    """Adam with bias correction, operating in place on a flat parameter vector."""

    def __init__(
        self,
        n_params: int,
        lr: float = LEARNING_RATE,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s2: np.ndarray
    done: bool
    mask2: np.ndarray


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    mask2: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring; sampling is uniform with replacement."""

    def __init__(self, capacity: int = REPLAY_CAPACITY):
        self.capacity = capacity
        self._data: List[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, tr: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(tr)
        else:
            self._data[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def clear(self) -> None:
        self._data = []
        self._next = 0

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if len(self._data) == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, len(self._data), size=batch_size)
        rows = [self._data[int(i)] for i in idx]
        return Batch(
            s=np.stack([t.s for t in rows]),
            a=np.array([t.a for t in rows], dtype=np.int64),
            r=np.array([t.r for t in rows], dtype=np.float64),
            s2=np.stack([t.s2 for t in rows]),
            done=np.array([t.done for t in rows], dtype=bool),
            mask2=np.stack([t.mask2 for t in rows]),
        )


def epsilon_schedule(
    learn_steps: int,
    start: float = EPSILON_START,
    decay: float = EPSILON_DECAY,
    floor: float = EPSILON_FLOOR,
) -> float:
    return max(decay**learn_steps * start, floor)


def select_action(
    q: np.ndarray, mask: np.ndarray, eps: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over valid actions; greedy ties go to the lowest index."""
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ContractError("action mask leaves no valid action")
    if eps > 0.0 and rng.random() < eps:
        return int(valid[rng.integers(valid.size)])
    # Argmax over the valid subset only: a degenerate net (all -inf values)
    # must still never yield a masked action.
    return int(valid[np.argmax(q[valid])])


def sync_target(value: QNet, target: QNet) -> None:
    target.params[:] = value.params


def maybe_sync_target(
    value: QNet, target: QNet, decisions: int, every: int = TARGET_SYNC_DECISIONS
) -> bool:
    """Hard-sync after every `every`-th decision of the owning policy."""
    if decisions > 0 and decisions % every == 0:
        sync_target(value, target)
        return True
    return False


def batch_loss(net: QNet, X: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
    q, _ = net.forward_batch(X)
    pred = q[np.arange(len(actions)), actions]
    return float(np.mean((pred - targets) ** 2))


def loss_and_grad(
    net: QNet, X: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean squared TD-error over the batch and its analytic gradient."""
    q, cache = net.forward_batch(X, want_cache=True)
    rows = np.arange(len(actions))
    diff = q[rows, actions] - targets
    loss = float(np.mean(diff**2))
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * diff / len(actions)
    return loss, net.backward(cache, dq)


def finite_difference_grad(
    net: QNet, X: np.ndarray, actions: np.ndarray, targets: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of batch_loss over every parameter."""
    base = net.params.copy()
    grad = np.zeros_like(base)
    for j in range(base.size):
        net.params[j] = base[j] + h
        lp = batch_loss(net, X, actions, targets)
        net.params[j] = base[j] - h
        lm = batch_loss(net, X, actions, targets)
        net.params[j] = base[j]
        grad[j] = (lp - lm) / (2.0 * h)
    return grad


def td_targets(target_net: QNet, batch: Batch, gamma: float = GAMMA) -> np.ndarray:
    q2, _ = target_net.forward_batch(batch.s2)
    best = np.where(batch.mask2, q2, MASKED_Q).max(axis=1)
    return batch.r + gamma * best * (~batch.done).astype(np.float64)


def learn(
    value: QNet,
    target: QNet,
    batch: Batch,
    adam: Adam,
    gamma: float = GAMMA,
    grad_clip: float = GRAD_CLIP,
) -> float:
    """One TD update: targets from the frozen net, elementwise-clipped Adam step."""
    y = td_targets(target, batch, gamma)
    loss, grad = loss_and_grad(value, batch.s, batch.a, y)
    if not np.isfinite(loss) or not np.isfinite(grad).all():
        raise NumericalError(f"non-finite TD loss or gradient (loss={loss})")
    np.clip(grad, -grad_clip, grad_clip, out=grad)
    adam.step(value.params, grad)
    return loss


def dispatch_qnet(
    fleet_size: int,
    hidden: int = 32,
    output_activation: str = ACT_LINEAR,
    rng: Optional[np.random.Generator] = None,
) -> QNet:
    """Order-dispatching net: shared courier embedding, one hidden relu layer,
    |fleet|+1 action values (couriers plus postpone)."""
    spec = NetSpec(
        input_dim=1 + 3 * fleet_size,
        layer_dims=(hidden, fleet_size + 1),
        activations=(ACT_RELU, output_activation),
        head_dim=1,
        embed_groups=fleet_size,
    )
    return QNet(spec, rng)


def steering_qnet(
    output_activation: str = ACT_LINEAR, rng: Optional[np.random.Generator] = None
) -> QNet:
    """Idle-steering net: 14 -> 32 -> 16 -> 7 (stay plus six neighbor slots)."""
    spec = NetSpec(
        input_dim=14,
        layer_dims=(32, 16, 7),
        activations=(ACT_RELU, ACT_RELU, output_activation),
    )
    return QNet(spec, rng)


def save_qnet(path: Path, net: QNet, meta: Optional[Dict] = None) -> None:
    doc = {
        "schema": QNET_SCHEMA,
        "spec": {
            "input_dim": net.spec.input_dim,
            "layer_dims": list(net.spec.layer_dims),
            "activations": list(net.spec.activations),
            "head_dim": net.spec.head_dim,
            "embed_groups": net.spec.embed_groups,
        },
        "embed": net.embed.tolist() if net.embed is not None else None,
        "layers": [
            {"w": w.tolist(), "b": b.tolist()}
            for w, b in zip(net.weights, net.biases)
        ],
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_qnet(path: Path) -> Tuple[QNet, Dict]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"weights file {path} is not valid JSON: {exc}") from exc
    if doc.get("schema") != QNET_SCHEMA:
        raise ConfigError(f"unsupported weights schema: {doc.get('schema')!r}")
    try:
        spec = NetSpec(
            input_dim=int(doc["spec"]["input_dim"]),
            layer_dims=tuple(int(d) for d in doc["spec"]["layer_dims"]),
            activations=tuple(doc["spec"]["activations"]),
            head_dim=int(doc["spec"]["head_dim"]),
            embed_groups=int(doc["spec"]["embed_groups"]),
        )
        net = QNet(spec)
        if spec.embed_groups:
            embed = np.asarray(doc["embed"], dtype=np.float64)
            if embed.shape != (3,):
                raise ConfigError("embedding weights must be a triple")
            net.embed[:] = embed
        if len(doc["layers"]) != len(net.weights):
            raise ConfigError("layer count mismatch in weights file")
        for (din, dout), view_w, view_b, layer in zip(
            net._shapes, net.weights, net.biases, doc["layers"]
        ):
            w = np.asarray(layer["w"], dtype=np.float64)
            b = np.asarray(layer["b"], dtype=np.float64)
            if w.shape != (din, dout) or b.shape != (dout,):
                raise ConfigError(
                    f"weights file {path} has layer shape {w.shape}/{b.shape}, "
                    f"expected {(din, dout)}/{(dout,)}"
                )
            view_w[:] = w
            view_b[:] = b
        return net, dict(doc.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed weights file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Toy MDPs and the tabular Q-learning oracle used to validate the deep learner.


@dataclass(frozen=True)
class ToyMDP:
    n_states: int
    n_actions: int
    start: int
    step: Callable[[int, int, np.random.Generator], Tuple[int, float, bool]]


def bandit_mdp(rewards: Sequence[float] = (1.0, 0.0)) -> ToyMDP:
    """Single-state bandit; every action ends the episode with its fixed reward."""
    rewards = tuple(rewards)

    def step(s: int, a: int, rng: np.random.Generator) -> Tuple[int, float, bool]:
        return 0, rewards[a], True

    return ToyMDP(n_states=1, n_actions=len(rewards), start=0, step=step)


def chain_mdp(length: int = 3) -> ToyMDP:
    """Deterministic chain: action 0 advances (reward 1 on leaving the last
    state, which ends the episode), action 1 stays for nothing."""

    def step(s: int, a: int, rng: np.random.Generator) -> Tuple[int, float, bool]:
        if a == 0:
            if s + 1 == length:
                return s, 1.0, True
            return s + 1, 0.0, False
        return s, 0.0, False

    return ToyMDP(n_states=length, n_actions=2, start=0, step=step)


def tabular_q_learning(
    mdp: ToyMDP,
    episodes: int,
    rng: np.random.Generator,
    alpha: float = 0.1,
    gamma: float = GAMMA,
    epsilon: float = 0.1,
    max_steps: int = 100,
) -> np.ndarray:
    """Plain epsilon-greedy tabular Q-learning; the reference learner."""
    q = np.zeros((mdp.n_states, mdp.n_actions), dtype=np.float64)
    for _ in range(episodes):
        s = mdp.start
        for _ in range(max_steps):
            if rng.random() < epsilon:
                a = int(rng.integers(mdp.n_actions))
            else:
                a = int(np.argmax(q[s]))
            s2, r, done = mdp.step(s, a, rng)
            target = r if done else r + gamma * float(q[s2].max())
            q[s, a] += alpha * (target - q[s, a])
            s = s2
            if done:
                break
    return q


def ddqn_toy_train(
    mdp: ToyMDP,
    rng: np.random.Generator,
    updates: int = 2000,
    hidden: int = 16,
    batch_size: int = 32,
    capacity: int = 500,
    sync_every: int = 50,
    gamma: float = GAMMA,
    max_steps: int = 100,
) -> QNet:
    """Run the full DDQN loop (replay, target net, clipped Adam) on a toy MDP."""
    spec = NetSpec(
        input_dim=mdp.n_states,
        layer_dims=(hidden, mdp.n_actions),
        activations=(ACT_RELU, ACT_LINEAR),
    )
    value = QNet(spec, rng)
    target = value.clone()
    adam = Adam(value.params.size)
    buffer = ReplayBuffer(capacity)
    mask = np.ones(mdp.n_actions, dtype=bool)
    learn_count = 0
    onehot = np.eye(mdp.n_states, dtype=np.float64)
    while learn_count < updates:
        s = mdp.start
        for _ in range(max_steps):
            eps = epsilon_schedule(learn_count)
            a = select_action(value.forward(onehot[s]), mask, eps, rng)
            s2, r, done = mdp.step(s, a, rng)
            buffer.push(Transition(onehot[s], a, r, onehot[s2], done, mask.copy()))
            if len(buffer) >= batch_size:
                learn(value, target, buffer.sample(batch_size, rng), adam, gamma)
                learn_count += 1
                if learn_count % sync_every == 0:
                    sync_target(value, target)
                if learn_count >= updates:
                    break
            s = s2
            if done:
                break
    return value
