"""Federated LR party state machines over recorded message channels.

Heterogeneous (vertical) mode: the guest holds the labels, the host holds
feature columns only, the arbiter holds the private key. Per mini-batch
the host ships encrypted logits, the guest assembles the encrypted fore
gradient through the arena pipeline, both sides derive encrypted gradient
slices, and the arbiter decrypts. Gradients travel to the arbiter under an
additive mask drawn by their owner, so no plaintext gradient (nor anything
label-derived) ever appears in a message to the host; each party removes
its own mask and scales by 1/s' locally after the decrypted values return.

Homogeneous (horizontal) mode: every party computes a local plaintext
gradient over its own rows, encrypts it, and the arbiter aggregates the
sample-count-weighted ciphertext sum before decrypting and broadcasting
the updated model.

All cross-party interaction goes through ChannelHub so the message trace
can be audited afterwards; ciphertext payloads are serialized batches.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Any

import numpy as np

from .. import encoding, operators
from ..arena import Arena, TransferLedger
from ..backends import ExecutionBackend, NaiveBackend
from ..batches import PlaintextBatch, decode_batch, encode_batch
from ..bufferpool import MAGIC, MiniBatchAggregator, deserialize, serialize_to_bytes
from ..paillier import KeyPair, PublicKey, default_rng
from . import objective
from .data import PartyData

LOGIT_EXPONENT_CAP = -8
HOMO_GRADIENT_EXPONENT = -12
MASK_RANGE = 8.0


@dataclass
class FlrConfig:
    learning_rate: float = 0.15
    batch_size: int = 32
    seed: int = 0
    caching_enabled: bool = True


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    kind: str
    payload: Any


@dataclass(frozen=True)
class DecryptEvent:
    actor: str
    what: str


class ChannelHub:
    """Ordered point-to-point channels with a full trace of every send and
    every decryption event."""

    def __init__(self):
        self.trace: list = []
        self._queues: dict = {}

    def send(self, sender: str, recipient: str, kind: str, payload) -> None:
        self.trace.append(Message(sender, recipient, kind, payload))
        self._queues.setdefault((sender, recipient), deque()).append((kind, payload))

    def recv(self, recipient: str, sender: str, kind: str):
        queue = self._queues.get((sender, recipient))
        if not queue:
            raise RuntimeError(f"no pending message {sender} -> {recipient}")
        got_kind, payload = queue.popleft()
        if got_kind != kind:
            raise RuntimeError(f"expected {kind!r}, got {got_kind!r}")
        return payload

    def record_decrypt(self, actor: str, what: str) -> None:
        self.trace.append(DecryptEvent(actor, what))


def protocol_exponent(values: np.ndarray, cap: int = LOGIT_EXPONENT_CAP) -> int:
    """Shared encode exponent for protocol quantities: exact when the data
    allows it, never coarser than the cap (all-zero logits at epoch one
    would otherwise land on the integer grid)."""
    exact = min((encoding.exact_exponent(float(v)) for v in values), default=0)
    return min(exact, cap)


def _encode_at(pk: PublicKey, values, exponent: int) -> PlaintextBatch:
    return encode_batch(pk, [float(v) for v in values], target_exponent=exponent)


@dataclass
class EpochResult:
    epoch: int
    loss: float
    grad_norm: float
    ledger: dict


class _MaskedGradientSender:
    """Shared helper: mask, re-randomize and ship an encrypted gradient."""

    def __init__(self, name: str, pk: PublicKey, hub: ChannelHub,
                 rng: random.Random, backend: ExecutionBackend):
        self.name = name
        self.pk = pk
        self.hub = hub
        self.rng = rng
        self.backend = backend

    def send_masked(self, grad_cipher, batch_size: int) -> np.ndarray:
        """Returns the exact mask that was folded in (on the codec grid)."""
        exponent = grad_cipher.exponents[0]
        raw_mask = [self.rng.uniform(0.0, MASK_RANGE) for _ in range(grad_cipher.count)]
        mask_plain = _encode_at(self.pk, raw_mask, exponent)
        true_mask = np.asarray(decode_batch(self.pk, mask_plain))
        masked = operators.batch_add(self.pk, grad_cipher, mask_plain, self.backend)
        masked = operators.batch_obfuscate(self.pk, masked, self.rng, self.backend)
        self.hub.send(self.name, "arbiter", "enc_masked_gradient",
                      {"data": serialize_to_bytes(masked), "rows": batch_size})
        return true_mask


class HeteroGuest:
    """Label-holding party; owns the arena that caches the fore gradient."""

    role = "guest"

    def __init__(self, data: PartyData, pk: PublicKey, hub: ChannelHub,
                 config: FlrConfig, backend: ExecutionBackend):
        self.name = "guest"
        self.pk = pk
        self.hub = hub
        self.backend = backend
        self.rng = default_rng(config.seed * 4 + 1)
        # bias enters as a constant-1 feature on the guest side only
        self.X = np.hstack([data.X, np.ones((data.rows, 1))])
        self.y = data.y
        self.state = objective.ModelState(np.zeros(self.X.shape[1]),
                                          config.learning_rate)
        self.arena = Arena(pk, backend=backend, rng=default_rng(config.seed * 4 + 2),
                           caching_enabled=config.caching_enabled)
        self._aggregator = MiniBatchAggregator(pk)
        self._sender = _MaskedGradientSender(self.name, pk, hub, self.rng, backend)

    def features_for(self, batch_id: int, idx: np.ndarray) -> PlaintextBatch:
        rows = [(int(i), self.X[i].tolist(), None) for i in idx]
        return self._aggregator.aggregate(batch_id, rows).features

    def process_batch(self, batch_id: int, idx: np.ndarray) -> np.ndarray:
        payload = self.hub.recv(self.name, "host", "enc_host_logits")
        c_lh = deserialize(payload, self.pk)
        exponent = c_lh.exponents[0]
        logits_guest = self.X[idx] @ self.state.theta
        lg_plain = _encode_at(self.pk, logits_guest, exponent)
        label_plain = _encode_at(self.pk, self.y[idx], 0)

        if self.arena.caching_enabled:
            h_lh = self.arena.upload(c_lh)
            h_fore = self.arena.run_fore_gradient_pipeline(h_lh, lg_plain, label_plain)
            fore_cipher = self.arena.download(h_fore)
        else:
            fore_cipher = self.arena.run_fore_gradient_pipeline(
                c_lh, lg_plain, label_plain)
            h_fore = h_lh = None

        out = operators.batch_obfuscate(self.pk, fore_cipher, self.rng, self.backend)
        self.hub.send(self.name, "host", "enc_fore_gradient", serialize_to_bytes(out))

        features = self.features_for(batch_id, idx)
        if h_fore is not None:
            h_grad = self.arena.exec_op("matmul", [h_fore, features])
            grad_cipher = self.arena.download(h_grad)
            self.arena.release(h_grad)
            self.arena.release(h_fore)
            self.arena.release(h_lh)
        else:
            grad_cipher = operators.batch_matmul(self.pk, fore_cipher, features,
                                                 self.backend)
        return self._sender.send_masked(grad_cipher, len(idx))

    def apply_update(self, mask: np.ndarray, batch_size: int) -> np.ndarray:
        masked = np.asarray(self.hub.recv(self.name, "arbiter", "masked_gradient"))
        grad = (masked - mask) / batch_size
        self.state.step(grad)
        return grad

    def send_loss_contribution(self, loss_idx: np.ndarray) -> None:
        """Assemble the encrypted quadratic loss sum over the loss set."""
        pk = self.pk
        payload = self.hub.recv(self.name, "host", "enc_loss_logits")
        c_lh = deserialize(payload["logits"], pk)
        c_lh2 = deserialize(payload["squares"], pk)
        lg = self.X[loss_idx] @ self.state.theta
        y = self.y[loss_idx]
        k1 = 0.25 * lg - 0.5 * y
        plain_part = objective.LOG2 - 0.5 * y * lg + 0.125 * lg * lg
        e_lh, e_lh2 = c_lh.exponents[0], c_lh2.exponents[0]
        target = min(
            e_lh + protocol_exponent(k1),
            e_lh2 + encoding.exact_exponent(0.125),
            protocol_exponent(plain_part),
        )
        term1 = operators.batch_mul_plain(pk, c_lh, _encode_at(pk, k1, target - e_lh),
                                          self.backend)
        term2 = operators.batch_mul_plain(
            pk, c_lh2, _encode_at(pk, [0.125], target - e_lh2), self.backend)
        total = operators.batch_add(pk, term1, term2, self.backend)
        total = operators.batch_add(pk, total, _encode_at(pk, plain_part, target),
                                    self.backend)
        loss_sum = operators.batch_sum(pk, total, None, self.backend)
        loss_sum = operators.batch_obfuscate(pk, loss_sum, self.rng, self.backend)
        self.hub.send(self.name, "arbiter", "enc_loss_sum",
                      {"data": serialize_to_bytes(loss_sum), "rows": len(loss_idx)})


class HeteroHost:
    """Feature-only party: never sees labels, plaintext fores or gradients."""

    role = "host"

    def __init__(self, data: PartyData, pk: PublicKey, hub: ChannelHub,
                 config: FlrConfig, backend: ExecutionBackend):
        self.name = "host"
        self.pk = pk
        self.hub = hub
        self.backend = backend
        self.rng = default_rng(config.seed * 4 + 3)
        self.X = data.X.copy()
        self.state = objective.ModelState(np.zeros(self.X.shape[1]),
                                          config.learning_rate)
        self._aggregator = MiniBatchAggregator(pk)
        self._sender = _MaskedGradientSender(self.name, pk, hub, self.rng, backend)

    def send_logits(self, idx: np.ndarray) -> None:
        logits = self.X[idx] @ self.state.theta
        plain = _encode_at(self.pk, logits, protocol_exponent(logits))
        cipher = operators.batch_encrypt(self.pk, plain, self.rng, self.backend)
        self.hub.send(self.name, "guest", "enc_host_logits", serialize_to_bytes(cipher))

    def process_batch(self, batch_id: int, idx: np.ndarray) -> np.ndarray:
        payload = self.hub.recv(self.name, "guest", "enc_fore_gradient")
        fore_cipher = deserialize(payload, self.pk)
        rows = [(int(i), self.X[i].tolist(), None) for i in idx]
        features = self._aggregator.aggregate(batch_id, rows).features
        grad_cipher = operators.batch_matmul(self.pk, fore_cipher, features,
                                             self.backend)
        return self._sender.send_masked(grad_cipher, len(idx))

    def apply_update(self, mask: np.ndarray, batch_size: int) -> np.ndarray:
        masked = np.asarray(self.hub.recv(self.name, "arbiter", "masked_gradient"))
        grad = (masked - mask) / batch_size
        self.state.step(grad)
        return grad

    def send_loss_logits(self, loss_idx: np.ndarray) -> None:
        logits = self.X[loss_idx] @ self.state.theta
        squares = logits * logits
        lp = _encode_at(self.pk, logits, protocol_exponent(logits))
        sp = _encode_at(self.pk, squares, protocol_exponent(squares))
        c1 = operators.batch_encrypt(self.pk, lp, self.rng, self.backend)
        c2 = operators.batch_encrypt(self.pk, sp, self.rng, self.backend)
        self.hub.send(self.name, "guest", "enc_loss_logits",
                      {"logits": serialize_to_bytes(c1),
                       "squares": serialize_to_bytes(c2)})


class Arbiter:
    """Key holder: the only party that ever decrypts anything."""

    role = "arbiter"

    def __init__(self, keys: KeyPair, hub: ChannelHub,
                 backend: ExecutionBackend | None = None):
        self.name = "arbiter"
        self.keys = keys
        self.hub = hub
        self.backend = backend or NaiveBackend()

    def decrypt_gradients(self, senders) -> None:
        for sender in senders:
            payload = self.hub.recv(self.name, sender, "enc_masked_gradient")
            cipher = deserialize(payload["data"], self.keys.public)
            plain = operators.batch_decrypt(self.keys.private, cipher, self.backend)
            self.hub.record_decrypt(self.name, f"masked gradient from {sender}")
            values = decode_batch(self.keys.public, plain)
            self.hub.send(self.name, sender, "masked_gradient", values)

    def decrypt_loss(self, sender: str = "guest") -> float:
        payload = self.hub.recv(self.name, sender, "enc_loss_sum")
        cipher = deserialize(payload["data"], self.keys.public)
        plain = operators.batch_decrypt(self.keys.private, cipher, self.backend)
        self.hub.record_decrypt(self.name, f"loss sum from {sender}")
        return decode_batch(self.keys.public, plain)[0] / payload["rows"]


class HeteroFederation:
    """Drives one guest, one host and the arbiter through training epochs."""

    def __init__(self, guest_data: PartyData, host_data: PartyData,
                 batches, loss_indices, keys: KeyPair, config: FlrConfig,
                 backend: ExecutionBackend | None = None):
        if guest_data.ids != host_data.ids:
            raise ValueError("vertical parties must hold identical id sets")
        backend = backend or NaiveBackend()
        self.hub = ChannelHub()
        self.config = config
        self.batches = list(batches)
        self.loss_indices = np.asarray(loss_indices)
        self.guest = HeteroGuest(guest_data, keys.public, self.hub, config, backend)
        self.host = HeteroHost(host_data, keys.public, self.hub, config, backend)
        self.arbiter = Arbiter(keys, self.hub, backend)
        self.epoch = 0

    @property
    def ledger(self) -> TransferLedger:
        return self.guest.arena.ledger

    def run_epoch(self) -> EpochResult:
        last_grads = (np.zeros_like(self.guest.state.theta),
                      np.zeros_like(self.host.state.theta))
        for batch_id, idx in enumerate(self.batches):
            self.host.send_logits(idx)
            guest_mask = self.guest.process_batch(batch_id, idx)
            host_mask = self.host.process_batch(batch_id, idx)
            self.arbiter.decrypt_gradients(("guest", "host"))
            g_guest = self.guest.apply_update(guest_mask, len(idx))
            g_host = self.host.apply_update(host_mask, len(idx))
            last_grads = (g_guest, g_host)
        self.host.send_loss_logits(self.loss_indices)
        self.guest.send_loss_contribution(self.loss_indices)
        loss = self.arbiter.decrypt_loss()
        self.epoch += 1
        grad_norm = float(np.linalg.norm(np.concatenate(last_grads)))
        return EpochResult(self.epoch, loss, grad_norm, self.ledger.to_json())

    def run(self, epochs: int) -> list[EpochResult]:
        return [self.run_epoch() for _ in range(epochs)]

    def combined_theta(self) -> np.ndarray:
        """guest slice (bias last within it) followed by the host slice, the
        same layout the centralized oracle trains on."""
        return np.concatenate([self.guest.state.theta, self.host.state.theta])


class HomoParty:
    """Horizontal-mode participant computing local plaintext gradients."""

    def __init__(self, name: str, index: int, data: PartyData, pk: PublicKey,
                 hub: ChannelHub, config: FlrConfig, backend: ExecutionBackend):
        self.name = name
        self.pk = pk
        self.hub = hub
        self.backend = backend
        self.rng = default_rng((config.seed + 13) * 31 + index)
        self.X = np.hstack([data.X, np.ones((data.rows, 1))])
        self.y = data.y
        self.theta = np.zeros(self.X.shape[1])

    @property
    def rows(self) -> int:
        return len(self.X)

    def send_gradient(self) -> np.ndarray:
        grad = objective.taylor_gradient(self.theta, self.X, self.y)
        plain = _encode_at(self.pk, grad, HOMO_GRADIENT_EXPONENT)
        cipher = operators.batch_encrypt(self.pk, plain, self.rng, self.backend)
        self.hub.send(self.name, "arbiter", "enc_gradient",
                      {"data": serialize_to_bytes(cipher), "rows": self.rows})
        return grad

    def send_loss_sum(self) -> None:
        z = self.X @ self.theta
        total = float(np.sum(objective.taylor_loss_terms(z, self.y)))
        plain = _encode_at(self.pk, [total], HOMO_GRADIENT_EXPONENT)
        cipher = operators.batch_encrypt(self.pk, plain, self.rng, self.backend)
        self.hub.send(self.name, "arbiter", "enc_loss_sum",
                      {"data": serialize_to_bytes(cipher), "rows": self.rows})

    def receive_model(self) -> None:
        self.theta = np.asarray(self.hub.recv(self.name, "arbiter", "model_update"))


class HomoFederation:
    """Horizontal federation: full-batch gradient per epoch, aggregated as a
    sample-count-weighted homomorphic sum at the arbiter."""

    def __init__(self, party_data: list[PartyData], keys: KeyPair,
                 config: FlrConfig, backend: ExecutionBackend | None = None):
        backend = backend or NaiveBackend()
        widths = {p.X.shape[1] for p in party_data}
        if len(widths) != 1:
            raise ValueError("horizontal parties must share one feature schema")
        self.hub = ChannelHub()
        self.config = config
        self.backend = backend
        self.keys = keys
        self.parties = [HomoParty(p.name, i, p, keys.public, self.hub, config, backend)
                        for i, p in enumerate(party_data)]
        self.arbiter = Arbiter(keys, self.hub, backend)
        self.theta = np.zeros(self.parties[0].X.shape[1])
        self.epoch = 0
        self.aggregated_gradients: list[np.ndarray] = []

    def run_epoch(self) -> EpochResult:
        pk = self.keys.public
        for party in self.parties:
            party.send_gradient()
        total_rows = sum(p.rows for p in self.parties)
        acc = None
        for party in self.parties:
            payload = self.hub.recv("arbiter", party.name, "enc_gradient")
            cipher = deserialize(payload["data"], pk)
            weight = encode_batch(pk, [float(payload["rows"])], target_exponent=0)
            weighted = operators.batch_mul_plain(pk, cipher, weight, self.backend)
            acc = weighted if acc is None else operators.batch_add(
                pk, acc, weighted, self.backend)
        plain = operators.batch_decrypt(self.keys.private, acc, self.backend)
        self.hub.record_decrypt("arbiter", "aggregated gradient")
        aggregated = np.asarray(decode_batch(pk, plain)) / total_rows
        self.aggregated_gradients.append(aggregated)
        self.theta = self.theta - self.config.learning_rate * aggregated
        for party in self.parties:
            self.hub.send("arbiter", party.name, "model_update",
                          self.theta.tolist())
            party.receive_model()
        # epoch loss over the union of rows, decrypted at the arbiter
        loss_acc = None
        for party in self.parties:
            party.send_loss_sum()
            payload = self.hub.recv("arbiter", party.name, "enc_loss_sum")
            cipher = deserialize(payload["data"], pk)
            loss_acc = cipher if loss_acc is None else operators.batch_add(
                pk, loss_acc, cipher, self.backend)
        loss_plain = operators.batch_decrypt(self.keys.private, loss_acc, self.backend)
        self.hub.record_decrypt("arbiter", "loss sum")
        loss = decode_batch(pk, loss_plain)[0] / total_rows
        self.epoch += 1
        return EpochResult(self.epoch, loss, float(np.linalg.norm(aggregated)),
                           TransferLedger().to_json())

    def run(self, epochs: int) -> list[EpochResult]:
        return [self.run_epoch() for _ in range(epochs)]


# --- trace audit -----------------------------------------------------------

_HOST_SAFE_KINDS = {"enc_host_logits", "enc_fore_gradient", "enc_loss_logits",
                    "enc_masked_gradient", "enc_loss_sum", "masked_gradient"}


def _is_ciphertext_payload(payload) -> bool:
    if isinstance(payload, (bytes, bytearray)):
        return payload[:4] == MAGIC
    if isinstance(payload, dict):
        blobs = [v for v in payload.values()
                 if isinstance(v, (bytes, bytearray, dict))]
        return bool(blobs) and all(_is_ciphertext_payload(v) for v in blobs)
    return False


def audit_trace(trace) -> list[str]:
    """Information-flow audit of a heterogeneous training trace.

    Flags any decryption outside the arbiter and any message to a host that
    is neither a ciphertext batch nor an additively masked value; labels and
    bare plaintext gradients to a host therefore always surface here.
    """
    violations = []
    for record in trace:
        if isinstance(record, DecryptEvent):
            if record.actor != "arbiter":
                violations.append(f"decrypt at {record.actor}: {record.what}")
            continue
        if not record.recipient.startswith("host"):
            continue
        if record.kind not in _HOST_SAFE_KINDS:
            violations.append(
                f"unexpected {record.kind!r} message to {record.recipient}")
        elif record.kind.startswith("enc_") and not _is_ciphertext_payload(record.payload):
            violations.append(
                f"{record.kind!r} to {record.recipient} does not carry ciphertext")
    return violations
