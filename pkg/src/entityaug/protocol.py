"""Guest/host split training with activation queues and entity augmentation.

The reference execution is a lockstep, single-threaded scheduler: in every
round each live guest encodes its scheduled entities and pushes an
:class:`ActivationMessage`; the host pops one message per guest (reusing the
last one received for a silent guest), forms the interpolated label, takes a
step and fans gradients back out to the guests that sent fresh activations.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .augment import interpolate_batch
from .data import LabelStore, RoundPlan, VerticalDataset
from .nn import Mlp, MlpSpec, Tape, adam_step, bce_with_logits, mlp_init

log = logging.getLogger(__name__)


class Mode(str, Enum):
    ALIGNED = "aligned-baseline"
    AUGMENTED = "entity-augmented"


class ProtocolError(RuntimeError):
    pass


@dataclass
class ActivationMessage:
    guest: int
    entities: np.ndarray
    activation: np.ndarray
    round: int


@dataclass
class GradientMessage:
    guest: int
    round: int
    grad: np.ndarray
    entities: np.ndarray | None = None


class Guest:
    """Feature owner: local encoder, local optimiser, one pending tape at a time."""

    def __init__(self, index: int, model: Mlp, data: VerticalDataset, lr: float):
        if model.spec.in_dim != data.width:
            raise ValueError(
                f"guest {index}: model expects {model.spec.in_dim} features, data has {data.width}"
            )
        self.index = index
        self.model = model
        self.data = data
        self.lr = lr
        self._pending: tuple[int, Tape, int] | None = None

    @property
    def out_dim(self) -> int:
        return self.model.spec.out_dim

    def iteration(self, entities: Sequence[int] | np.ndarray, round_idx: int) -> ActivationMessage:
        ent = np.atleast_1d(np.asarray(entities, dtype=np.int64))
        x = self.data.rows(ent)
        act, tape = self.model.forward(x)
        self._pending = (round_idx, tape, len(ent))
        return ActivationMessage(self.index, ent, act, round_idx)

    def apply_gradient(self, msg: GradientMessage) -> None:
        if self._pending is None:
            raise ProtocolError(f"guest {self.index}: gradient for round {msg.round} but no pending forward")
        round_idx, tape, rows = self._pending
        if msg.round != round_idx:
            raise ProtocolError(f"guest {self.index}: gradient for round {msg.round}, pending round {round_idx}")
        grad = np.asarray(msg.grad, dtype=np.float64)
        if grad.shape != (rows, self.out_dim):
            raise ValueError(f"guest {self.index}: gradient shape {grad.shape}, expected {(rows, self.out_dim)}")
        self.model.backward(tape, grad)
        adam_step(self.model.parameters(), self.lr)
        self._pending = None

    def drop_pending(self) -> None:
        self._pending = None


class HostQueues:
    """Per-guest activation / entity-id FIFOs plus the last message seen from each guest."""

    def __init__(self, num_guests: int):
        self.activations: list[deque[np.ndarray]] = [deque() for _ in range(num_guests)]
        self.entity_ids: list[deque[np.ndarray]] = [deque() for _ in range(num_guests)]
        self.rounds: list[deque[int]] = [deque() for _ in range(num_guests)]
        self.last_seen: list[ActivationMessage | None] = [None] * num_guests
        self.consumed = [0] * num_guests
        self.stale_reuses = [0] * num_guests
        self.reads = 0

    @property
    def num_guests(self) -> int:
        return len(self.activations)

    def push(self, msg: ActivationMessage) -> None:
        self.activations[msg.guest].append(msg.activation)
        self.entity_ids[msg.guest].append(msg.entities)
        self.rounds[msg.guest].append(msg.round)

    def check(self) -> None:
        for g in range(self.num_guests):
            if len(self.activations[g]) != len(self.entity_ids[g]):
                raise ProtocolError(f"queue lengths diverged for guest {g}")
            if self.reads != self.consumed[g] + self.stale_reuses[g]:
                raise ProtocolError(f"guest {g}: reads != consumed + stale reuses")

    def read(self) -> tuple[list[ActivationMessage], list[bool]]:
        """Pop the head of every non-empty queue; silent guests get their last message again."""
        self.check()
        msgs: list[ActivationMessage | None] = []
        fresh: list[bool] = []
        for g in range(self.num_guests):
            if self.activations[g]:
                msg = ActivationMessage(
                    g, self.entity_ids[g].popleft(), self.activations[g].popleft(), self.rounds[g].popleft()
                )
                self.last_seen[g] = msg
                self.consumed[g] += 1
                msgs.append(msg)
                fresh.append(True)
            else:
                msgs.append(None)
                fresh.append(False)
        for g, msg in enumerate(msgs):
            if msg is None:
                if self.last_seen[g] is None:
                    raise ProtocolError(f"guest {g} has never sent an activation; nothing to reuse")
                msgs[g] = self.last_seen[g]
                self.stale_reuses[g] += 1
        self.reads += 1
        return msgs, fresh  # type: ignore[return-value]


@dataclass
class RoundResult:
    loss: float
    gradients: list[GradientMessage]
    entities: np.ndarray
    logits: np.ndarray
    target: np.ndarray
    fresh: list[bool]


class Host:
    """Label owner: top model, queues, label synthesis."""

    def __init__(self, model: Mlp, labels: LabelStore, guest_dims: Sequence[int], lr: float,
                 weights: Sequence[float] | None = None):
        if model.spec.in_dim != sum(guest_dims):
            raise ValueError(f"host input {model.spec.in_dim} != sum of guest outputs {sum(guest_dims)}")
        if model.spec.out_dim != labels.width:
            raise ValueError(f"host output {model.spec.out_dim} != label width {labels.width}")
        self.model = model
        self.labels = labels
        self.guest_dims = list(guest_dims)
        self.weights = [float(w) for w in (weights if weights is not None else guest_dims)]
        self.lr = lr
        self.queues = HostQueues(len(guest_dims))
        self.offsets = np.cumsum([0, *guest_dims])

    def receive(self, msg: ActivationMessage) -> None:
        if msg.activation.shape[-1] != self.guest_dims[msg.guest]:
            raise ValueError(
                f"guest {msg.guest} activation width {msg.activation.shape[-1]} != declared {self.guest_dims[msg.guest]}"
            )
        self.queues.push(msg)

    def round(self, round_idx: int, mode: Mode = Mode.AUGMENTED) -> RoundResult:
        msgs, fresh = self.queues.read()
        n = next((len(m.entities) for m, f in zip(msgs, fresh) if f), len(msgs[0].entities))
        acts, ents = [], []
        for m in msgs:
            # a stale batch may have a different row count; cycle its rows
            rows = np.arange(n) % len(m.entities)
            acts.append(m.activation[rows])
            ents.append(m.entities[rows])
        entities = np.stack(ents, axis=1)
        if mode is Mode.ALIGNED:
            if np.any(entities != entities[:, :1]):
                raise ProtocolError(f"round {round_idx}: aligned baseline received different entities")
            target = self.labels.rows(entities[:, 0])
        else:
            target = interpolate_batch(entities, self.weights, self.labels)
        logits, tape = self.model.forward(np.concatenate(acts, axis=1))
        loss, dlogits = bce_with_logits(logits, target)
        dinput = self.model.backward(tape, dlogits)
        adam_step(self.model.parameters(), self.lr)
        grads = []
        for g, (m, f) in enumerate(zip(msgs, fresh)):
            if f:
                grads.append(GradientMessage(g, m.round, dinput[:, self.offsets[g]:self.offsets[g + 1]], m.entities))
        return RoundResult(loss, grads, entities, logits, target, fresh)


@dataclass
class FaultScript:
    """Guests that stay silent in given (global) rounds."""

    drops: frozenset[tuple[int, int]] = frozenset()

    def silent(self, round_idx: int, guest: int) -> bool:
        return (round_idx, guest) in self.drops

    @classmethod
    def parse(cls, text: str) -> "FaultScript":
        drops = set()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] != "drop":
                raise ValueError(f"fault script line {n}: expected 'round guest_id drop', got {line!r}")
            drops.add((int(parts[0]), int(parts[1])))
        return cls(frozenset(drops))

    @classmethod
    def load(cls, path: str | Path) -> "FaultScript":
        return cls.parse(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{r} {g} drop\n" for r, g in sorted(self.drops))

    @classmethod
    def random_drops(cls, rounds: Iterable[int], guest: int, fraction: float, seed: int) -> "FaultScript":
        rounds = list(rounds)
        rng = np.random.default_rng(seed)
        k = int(round(len(rounds) * fraction))
        picked = rng.choice(len(rounds), size=k, replace=False) if k else []
        return cls(frozenset((rounds[int(i)], guest) for i in picked))


NO_FAULTS = FaultScript()


@dataclass
class TrainState:
    guests: list[Guest]
    host: Host
    round: int = 0
    epoch: int = 0
    seed: int = 0

    def parameters(self) -> list:
        return [p for g in self.guests for p in g.model.parameters()] + self.host.model.parameters()


def init_state(
    guest_specs: Sequence[MlpSpec],
    host_spec: MlpSpec,
    guest_data: Sequence[VerticalDataset],
    labels: LabelStore,
    lr: float,
    seed: int,
    weights: Sequence[float] | None = None,
) -> TrainState:
    """Fresh parties with independently seeded parameters (one child seed per party)."""
    children = np.random.SeedSequence(seed).spawn(len(guest_specs) + 1)
    party_seeds = [int(c.generate_state(1)[0]) for c in children]
    guests = [
        Guest(i, mlp_init(spec, party_seeds[i]), data, lr)
        for i, (spec, data) in enumerate(zip(guest_specs, guest_data))
    ]
    host = Host(mlp_init(host_spec, party_seeds[-1]), labels, [s.out_dim for s in guest_specs], lr, weights)
    return TrainState(guests, host, seed=seed)


@dataclass
class EpochMetrics:
    loss: float | None
    train_acc: float | None
    rounds: int
    stale_reuses: int = 0
    losses: list[float] = field(default_factory=list)


def _predict_classes(logits: np.ndarray) -> np.ndarray:
    if logits.shape[1] == 1:
        return (logits[:, 0] > 0).astype(np.int64)
    return np.argmax(logits, axis=1)


def _target_classes(target: np.ndarray) -> np.ndarray:
    if target.shape[1] == 1:
        return (target[:, 0] > 0.5).astype(np.int64)
    return np.argmax(target, axis=1)


def train_epoch(
    state: TrainState,
    plan: RoundPlan,
    mode: Mode | str = Mode.AUGMENTED,
    faults: FaultScript = NO_FAULTS,
    batch_size: int = 32,
    transport=None,
) -> EpochMetrics:
    """Run every round of ``plan`` (``batch_size`` plan entries per host round).

    ``transport``, if given, is applied to every message on its way between
    parties (e.g. a wire-format round trip).
    """
    mode = Mode(mode)
    if plan.num_guests != len(state.guests):
        raise ValueError(f"plan schedules {plan.num_guests} guests, state has {len(state.guests)}")
    if mode is Mode.ALIGNED and not np.all(plan.aligned):
        bad = int(np.flatnonzero(~plan.aligned)[0])
        raise ProtocolError(f"aligned baseline given misaligned plan round {bad}")
    host = state.host
    losses: list[float] = []
    correct = 0
    seen = 0
    stale_before = sum(host.queues.stale_reuses)
    for start in range(0, len(plan), batch_size):
        chunk = plan.entities[start : start + batch_size]
        r = state.round
        for g, guest in enumerate(state.guests):
            if faults.silent(r, g):
                log.debug("round %d: guest %d silent", r, g)
                continue
            msg = guest.iteration(chunk[:, g], r)
            host.receive(transport(msg) if transport else msg)
        result = host.round(r, mode)
        for gm in result.gradients:
            state.guests[gm.guest].apply_gradient(transport(gm) if transport else gm)
        losses.append(result.loss)
        correct += int(np.sum(_predict_classes(result.logits) == _target_classes(result.target)))
        seen += len(result.target)
        state.round += 1
    state.epoch += 1
    if not losses:
        return EpochMetrics(None, None, 0)
    return EpochMetrics(
        float(np.mean(losses)), correct / seen, len(losses), sum(host.queues.stale_reuses) - stale_before, losses
    )


def predict(state: TrainState, entities: Sequence[int] | np.ndarray) -> np.ndarray:
    """Host logits for entities every guest holds (no tapes are kept)."""
    acts = [g.model(g.data.rows(entities)) for g in state.guests]
    return state.host.model(np.concatenate(acts, axis=1))


def evaluate(state: TrainState, entities: Sequence[int] | np.ndarray, labels: LabelStore | None = None) -> float:
    """Accuracy on aligned evaluation entities: argmax, or logit > 0 for a single-logit head."""
    entities = np.asarray(entities, dtype=np.int64)
    if len(entities) == 0:
        raise ValueError("empty evaluation set")
    labels = labels if labels is not None else state.host.labels
    pred = _predict_classes(predict(state, entities))
    return float(np.mean(pred == labels.class_index(entities)))
