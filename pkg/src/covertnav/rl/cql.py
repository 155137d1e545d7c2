"""Tabular conservative Q-learning over discretised state features."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .actions import N_ACTIONS
from .features import N_STATES, StateFeatures

QTABLE_VERSION = "qtable.v1"


class NoFeasibleAction(ValueError):
    pass


@dataclass(frozen=True)
class CQLParams:
    alpha: float = 0.2
    gamma: float = 0.95
    lr: float = 1.0
    batch: int = 256
    epochs: int = 500
    init: float = 0.0
    seed: int = 0


@dataclass
class QFunction:
    values: np.ndarray = field(default_factory=lambda: np.zeros((N_STATES, N_ACTIONS)))
    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_STATES, N_ACTIONS), dtype=np.int64))
    init: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.values.shape != (N_STATES, N_ACTIONS) or self.counts.shape != self.values.shape:
            raise ValueError(f"Q table must have shape {(N_STATES, N_ACTIONS)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Q values must be finite")

    @classmethod
    def initial(cls, init: float = 0.0) -> "QFunction":
        return cls(np.full((N_STATES, N_ACTIONS), init), init=init)

    def __getitem__(self, key: tuple[StateFeatures, int]) -> float:
        s, a = key
        return float(self.values[s.index, a])

    def to_json(self) -> str:
        """Rows that differ from the initial value or were visited, keyed by feature tuple."""
        rows = {}
        for s in range(N_STATES):
            if self.counts[s].any() or np.any(self.values[s] != self.init):
                rows[StateFeatures.from_index(s).key] = {
                    "q": [float(v) for v in self.values[s]],
                    "n": [int(c) for c in self.counts[s]],
                }
        doc = {"version": QTABLE_VERSION, "n_actions": N_ACTIONS, "init": self.init, "rows": rows}
        return json.dumps(doc, indent=None, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QFunction":
        doc = json.loads(text)
        if doc.get("version") != QTABLE_VERSION:
            raise ValueError(f"unsupported Q table version {doc.get('version')!r}")
        if doc.get("n_actions") != N_ACTIONS:
            raise ValueError("Q table action count mismatch")
        q = cls.initial(float(doc["init"]))
        for key, row in doc["rows"].items():
            s = StateFeatures.from_key(key).index
            q.values[s] = row["q"]
            q.counts[s] = row["n"]
        q.__post_init__()
        return q


def save_qfunction(path: str | Path, q: QFunction) -> None:
    Path(path).write_text(q.to_json() + "\n")


def load_qfunction(path: str | Path) -> QFunction:
    return QFunction.from_json(Path(path).read_text())


def greedy_action(q: QFunction, state: StateFeatures, mask: np.ndarray | None = None) -> int:
    """Argmax over allowed actions, lowest index on ties."""
    row = q.values[state.index]
    if mask is None:
        mask = np.ones(N_ACTIONS, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise NoFeasibleAction("no feasible action")
    allowed = np.flatnonzero(mask)
    return int(allowed[np.argmax(row[allowed])])


@dataclass
class TransitionArrays:
    """Column view of a transition set, ``states``/``next_states`` as feature indices."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.next_states = np.asarray(self.next_states, dtype=np.int64)
        self.terminals = np.asarray(self.terminals, dtype=bool)
        n = len(self.states)
        if any(len(a) != n for a in (self.actions, self.rewards, self.next_states, self.terminals)):
            raise ValueError("transition columns differ in length")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return len(self.states)


def _row_gradient(q: np.ndarray, batch: TransitionArrays, alpha: float, gamma: float):
    """Losses plus the gradient restricted to the batch's distinct state rows."""
    s, a = batch.states, batch.actions
    boot = np.where(batch.terminals, 0.0, q[batch.next_states].max(axis=1))
    target = batch.rewards + gamma * boot
    qsa = q[s, a]
    td = qsa - target
    rows = q[s]
    top = rows.max(axis=1, keepdims=True)
    ex = np.exp(rows - top)
    tot = ex.sum(axis=1)
    cons = top[:, 0] + np.log(tot) - qsa
    n = len(s)
    uniq, inv = np.unique(s, return_inverse=True)
    size = len(uniq) * N_ACTIONS
    coef = 2.0 * td / n
    if alpha:
        coef = coef - alpha / n
    grad = np.bincount(inv * N_ACTIONS + a, weights=coef, minlength=size)
    if alpha:
        cells = (inv[:, None] * N_ACTIONS + np.arange(N_ACTIONS)).ravel()
        grad += np.bincount(cells, weights=(ex * (alpha / n / tot)[:, None]).ravel(), minlength=size)
    return float(np.mean(td**2)), float(np.mean(cons)), uniq, grad.reshape(len(uniq), N_ACTIONS)


def cql_losses(q: np.ndarray, batch: TransitionArrays, alpha: float, gamma: float):
    """Per-batch mean TD loss and mean conservative term, plus the gradient wrt ``q``.

    The target ``r + gamma * max_a' Q(s', a')`` is held fixed (semi-gradient);
    terminal transitions bootstrap zero.
    """
    td, cons, rows, g = _row_gradient(q, batch, alpha, gamma)
    grad = np.zeros_like(q)
    grad[rows] = g
    return td, cons, grad


def cql_train(
    data: TransitionArrays,
    params: CQLParams = CQLParams(),
    steps: int | None = None,
    log: Callable[[int, float, float], None] | None = None,
) -> QFunction:
    """Minibatch gradient descent on TD error plus ``alpha`` times the CQL regulariser.

    Each epoch draws ``ceil(N / batch)`` batches with replacement from a
    generator seeded by ``params.seed``. ``steps`` overrides the epoch budget
    with an exact step count. ``log(epoch, td, cql)`` receives per-epoch means.
    """
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    bsize = min(params.batch, n)
    per_epoch = math.ceil(n / bsize)
    total = steps if steps is not None else params.epochs * per_epoch
    rng = np.random.default_rng(params.seed)
    q = QFunction.initial(params.init)
    np.add.at(q.counts, (data.states, data.actions), 1)
    table = q.values
    td_acc = cql_acc = 0.0
    for k in range(total):
        idx = rng.integers(0, n, size=bsize)
        batch = TransitionArrays.__new__(TransitionArrays)
        batch.states, batch.actions = data.states[idx], data.actions[idx]
        batch.rewards, batch.next_states, batch.terminals = data.rewards[idx], data.next_states[idx], data.terminals[idx]
        td, cons, rows, grad = _row_gradient(table, batch, params.alpha, params.gamma)
        table[rows] -= params.lr * grad
        td_acc += td
        cql_acc += cons
        if (k + 1) % per_epoch == 0 or k + 1 == total:
            done = (k % per_epoch) + 1
            if log is not None:
                log(k // per_epoch, td_acc / done, cql_acc / done)
            td_acc = cql_acc = 0.0
    q.__post_init__()
    return q
