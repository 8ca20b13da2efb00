"""The simulated federation: platform actors, the serving flow, and the full
training round.

Actors communicate only through ``Federation.send``: every message is
edge-checked, recorded in the transcript, then delivered by draining the
receiver's mailbox to completion. All scheduling is deterministic; a round is
driven in the fixed protocol order (local encodings, aggregation, task
gradient, per-feature fairness machinery, overall-gradient assembly, local
updates).

Training-round order per sensitive feature: contrastive-discriminator step,
mapper ascent on the contrastive-adversarial loss, protected-rep recompute and
upload, bias-discriminator step, mapper descent on the returned gradient,
second recompute and upload, frozen adversarial gradient back to the unified
rep. The bias discriminator's parameter and input gradients come from one
forward pass (the update lands after both are taken).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..adversarial import (
    ContrastiveContext,
    LossWeights,
    SignLedger,
    UpdateEvent,
    bias_discriminator_step,
    bias_loss_and_grad_frozen,
    cal_mapper_gradient,
    combine_overall_grad,
    contrastive_adversarial_grad,
    contrastive_discriminator_step,
    select_negatives,
)
from ..data.dataset import FeatureShard, LabelShard, TaskShard
from ..errors import NumericError, ProtocolError
from ..models import ModelBundle
from ..nn import Array, rng_for, softmax_cross_entropy
from .ldp import LdpConfig, ldp_perturb
from .messages import Kind, LEGAL_EDGES, Message, Role, Transcript, record_of


@dataclass
class FederationConfig:
    weights: LossWeights
    ldp: LdpConfig = field(default_factory=LdpConfig)
    top_pool: int = 5  # negative-sampling pool size per query
    mode: str = "fairvfl"  # "fairvfl" | "vfl" (fairness machinery off)
    verify_updates: bool = False  # instrument rounds against the sign ledger
    task_grad_scale: float = 1.0  # diagnostic hook used by isolation tests

    def validate(self) -> None:
        if self.mode not in ("fairvfl", "vfl"):
            raise ProtocolError(f"unknown mode {self.mode!r}")
        if self.top_pool < 1:
            raise ProtocolError("top_pool must be >= 1")
        self.ldp.validate()


@dataclass
class RoundLosses:
    task: float
    contrastive: dict[str, float]  # discrimination loss per feature
    contrastive_adv: dict[str, float]
    bias: dict[str, float]
    adversarial: dict[str, float]

    def flat(self) -> dict[str, float]:
        out = {"task": self.task}
        for label, table in (("Lp", self.contrastive), ("Lc", self.contrastive_adv),
                             ("Ld", self.bias), ("La", self.adversarial)):
            for f, v in table.items():
                out[f"{label}/{f}"] = v
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.flat().values())


@dataclass
class RoundResult:
    round_id: int
    losses: RoundLosses
    records: list
    ledger_max_dev: float | None = None


def _snap_grads(blocks) -> dict[str, tuple]:
    return {b.name: (b.gw.copy(), None if b.gb is None else b.gb.copy()) for b in blocks}


class PlatformBase:
    def __init__(self, name: str, role: Role):
        self.name = name
        self.role = role
        self.mailbox: deque[Message] = deque()

    def handle(self, msg: Message, fed: "Federation") -> list[Message]:
        raise NotImplementedError


class TaskPlatform(PlatformBase):
    """Holds the task labels and the task head; never sees sensitive labels."""

    def __init__(self, shard: TaskShard, head, opt, rng):
        super().__init__("task", Role.TASK)
        self.shard = shard
        self.head = head
        self.opt = opt
        self.rng = rng
        self.round_ids: Array | None = None
        self.last_loss = float("nan")
        self.last_predictions: Array | None = None

    def handle(self, msg: Message, fed: "Federation") -> list[Message]:
        if msg.kind is not Kind.UNIFIED_REP_TO_TASK:
            raise ProtocolError(f"task platform cannot handle {msg.kind}")
        unified = msg.payload
        if fed.phase == "serve":
            self.last_predictions = self.head.predict(unified)
            return []
        logits, cache = self.head.forward(unified, training=True, rng=self.rng)
        labels = self.shard.take(self.round_ids)
        loss, glogits = softmax_cross_entropy(logits, labels)
        self.head.zero_grad()
        grad_unified = self.head.backward(cache, glogits)
        if fed.events is not None:
            snap = _snap_grads(self.head.blocks())
            fed.events.append(UpdateEvent("task_head", [("task", 1.0, snap)], snap))
        self.opt.step()
        self.head.zero_grad()
        self.last_loss = loss
        # gradient at the perturbed upload is treated as the gradient at s
        return [Message(msg.round_id, self.name, fed.server.name,
                        Kind.TASK_GRAD_DOWN, grad_unified)]


class InsensitivePlatform(PlatformBase):
    """Holds one feature slice and its local encoder."""

    def __init__(self, index: int, shard: FeatureShard, encoder, opt, rng):
        super().__init__(shard.name, Role.INSENSITIVE)
        self.index = index
        self.shard = shard
        self.encoder = encoder
        self.opt = opt
        self.rng = rng
        self.cache = None

    def handle(self, msg: Message, fed: "Federation") -> list[Message]:
        if msg.kind is Kind.SAMPLE_IDS:
            cols = self.shard.take(msg.payload)
            training = fed.phase == "train"
            rep, self.cache = self.encoder.forward(cols, training,
                                                   self.rng if training else None)
            return [Message(msg.round_id, self.name, fed.server.name,
                            Kind.LOCAL_REP_UPLOAD, rep)]
        if msg.kind is Kind.LOCAL_REP_GRAD_DOWN:
            contributions = []
            if fed.events is not None:
                for term, coeff, gpiece in fed.encoder_pieces.get(self.name, []):
                    self.encoder.zero_grad()
                    self.encoder.backward(self.cache, gpiece)
                    contributions.append((term, coeff, _snap_grads(self.encoder.blocks())))
            self.encoder.zero_grad()
            self.encoder.backward(self.cache, msg.payload)
            if fed.events is not None:
                fed.events.append(UpdateEvent(f"encoder/{self.index}", contributions,
                                              _snap_grads(self.encoder.blocks())))
            self.opt.step()
            self.encoder.zero_grad()
            return []
        raise ProtocolError(f"{self.name} cannot handle {msg.kind}")


class SensitivePlatform(PlatformBase):
    """Holds one sensitive feature's labels and its bias discriminator."""

    def __init__(self, feature: str, shard: LabelShard, bdisc, opt):
        super().__init__(shard.name, Role.SENSITIVE)
        self.feature = feature
        self.shard = shard
        self.bdisc = bdisc
        self.opt = opt
        self.round_ids: Array | None = None
        self.uploads_this_round = 0
        self.last_bias_loss = float("nan")
        self.last_adv_loss = float("nan")

    def handle(self, msg: Message, fed: "Federation") -> list[Message]:
        if msg.kind is Kind.SAMPLE_IDS:
            self.round_ids = msg.payload
            self.uploads_this_round = 0
            return []
        if msg.kind is Kind.PROTECTED_REP_UPLOAD:
            labels = self.shard.take(self.round_ids)
            self.uploads_this_round += 1
            if self.uploads_this_round == 1:
                observer = fed.single_loss_observer(f"bdisc/{self.feature}",
                                                    f"bias/{self.feature}")
                loss, grad_protected = bias_discriminator_step(
                    self.bdisc, self.opt, msg.payload, labels, grad_observer=observer)
                self.last_bias_loss = loss
                return [Message(msg.round_id, self.name, fed.server.name,
                                Kind.BIAS_DISC_GRAD_DOWN, grad_protected)]
            loss, grad_protected = bias_loss_and_grad_frozen(self.bdisc, msg.payload, labels)
            self.last_adv_loss = loss
            return [Message(msg.round_id, self.name, fed.server.name,
                            Kind.ADV_GRAD_DOWN, grad_protected)]
        raise ProtocolError(f"{self.name} cannot handle {msg.kind}")


class ServerPlatform(PlatformBase):
    """The aggregation server: aggregator, mappers, contrastive discriminators."""

    def __init__(self, aggregator, mappers, cdiscs, opts, neg_rngs, ldp_rng, n_locals: int):
        super().__init__("server", Role.SERVER)
        self.aggregator = aggregator
        self.mappers = mappers
        self.cdiscs = cdiscs
        self.opts = opts
        self.neg_rngs = neg_rngs
        self.ldp_rng = ldp_rng
        self.n_locals = n_locals
        self.reset_round_state()

    def reset_round_state(self) -> None:
        self.local_reps: dict[int, Array] = {}
        self.agg_cache = None
        self.unified: Array | None = None
        self.task_grad: Array | None = None
        self.mapper_caches: dict[str, tuple] = {}
        self.adv_grads: dict[str, Array] = {}

    def aggregate(self) -> Array:
        if len(self.local_reps) != self.n_locals:
            raise ProtocolError(
                f"expected {self.n_locals} local reps, got {len(self.local_reps)}"
            )
        stacked = np.stack([self.local_reps[i] for i in range(self.n_locals)], axis=1)
        self.unified, self.agg_cache = self.aggregator.forward(stacked)
        return self.unified

    def handle(self, msg: Message, fed: "Federation") -> list[Message]:
        if msg.kind is Kind.LOCAL_REP_UPLOAD:
            self.local_reps[fed.platform_index(msg.sender)] = msg.payload
            return []
        if msg.kind is Kind.TASK_GRAD_DOWN:
            self.task_grad = msg.payload
            return []
        if msg.kind is Kind.BIAS_DISC_GRAD_DOWN:
            feature = fed.feature_of(msg.sender)
            mapper = self.mappers[feature]
            cache = self.mapper_caches[feature]
            mapper.zero_grad()
            mapper.backward(cache, msg.payload)
            if fed.events is not None:
                snap = _snap_grads(mapper.blocks())
                fed.events.append(UpdateEvent(f"mapper/{feature}",
                                              [(f"bias/{feature}", 1.0, snap)], snap))
            self.opts[f"mapper/{feature}"].step()
            mapper.zero_grad()
            # recompute the protected rep with the just-updated mapper
            protected, self.mapper_caches[feature] = mapper.forward(self.unified)
            return [Message(msg.round_id, self.name, msg.sender,
                            Kind.PROTECTED_REP_UPLOAD, protected)]
        if msg.kind is Kind.ADV_GRAD_DOWN:
            feature = fed.feature_of(msg.sender)
            mapper = self.mappers[feature]
            mapper.zero_grad()
            grad_unified = mapper.backward(self.mapper_caches[feature], msg.payload)
            mapper.zero_grad()  # mapper frozen on this pass
            self.adv_grads[feature] = grad_unified
            return []
        raise ProtocolError(f"server cannot handle {msg.kind}")


class Federation:
    """Deterministically scheduled in-process federation."""

    def __init__(self, bundle: ModelBundle, feature_shards: list[FeatureShard],
                 label_shards: dict[str, LabelShard], task_shard: TaskShard,
                 config: FederationConfig, seed: int):
        config.validate()
        missing = set(bundle.features) - set(label_shards)
        if missing:
            raise ProtocolError(f"no label shard for features {sorted(missing)}")
        self.bundle = bundle
        self.config = config
        self.seed = seed
        self.phase = "idle"
        self.transcript = Transcript()
        self.events: list[UpdateEvent] | None = None
        self.encoder_pieces: dict[str, list] = {}
        self.ledger = SignLedger.default(bundle.features)
        self._round_counter = 0

        self.task = TaskPlatform(task_shard, bundle.task_head, bundle.optim["task_head"],
                                 rng_for(seed, "dropout/task_head"))
        self.insensitive = [
            InsensitivePlatform(i, shard, bundle.encoders[i], bundle.optim[f"encoder/{i}"],
                                rng_for(seed, f"dropout/encoder/{i}"))
            for i, shard in enumerate(feature_shards)
        ]
        server_opts = {k: v for k, v in bundle.optim.items()
                       if k.startswith(("mapper/", "cdisc/", "aggregator"))}
        self.server = ServerPlatform(
            bundle.aggregator, bundle.mappers, bundle.cdiscs, server_opts,
            {f: rng_for(seed, f"negatives/{f}") for f in bundle.features},
            rng_for(seed, "ldp/server"), len(feature_shards))
        self.sensitive = {
            f: SensitivePlatform(f, label_shards[f], bundle.bdiscs[f],
                                 bundle.optim[f"bdisc/{f}"])
            for f in bundle.features
        }

        self._platforms: dict[str, PlatformBase] = {self.task.name: self.task,
                                                    self.server.name: self.server}
        for p in self.insensitive:
            self._platforms[p.name] = p
        for p in self.sensitive.values():
            self._platforms[p.name] = p
        self._index_of = {p.name: p.index for p in self.insensitive}
        self._feature_of = {p.name: p.feature for p in self.sensitive.values()}

    # -- plumbing ---------------------------------------------------------

    def platform_index(self, name: str) -> int:
        return self._index_of[name]

    def feature_of(self, name: str) -> str:
        return self._feature_of[name]

    def roles(self) -> dict[str, Role]:
        return {name: p.role for name, p in self._platforms.items()}

    def single_loss_observer(self, component: str, term: str):
        if self.events is None:
            return None

        def observer(blocks):
            snap = _snap_grads(blocks)
            self.events.append(UpdateEvent(component, [(term, 1.0, snap)], snap))

        return observer

    def send(self, msg: Message) -> None:
        """Records, validates, and delivers a message, then drains the
        receiver's mailbox (which may emit further messages)."""
        self.transcript.append(record_of(msg, phase=self.phase))
        sender = self._platforms.get(msg.sender)
        receiver = self._platforms.get(msg.receiver)
        if sender is None or receiver is None:
            raise ProtocolError(f"unknown platform in edge {msg.sender} -> {msg.receiver}")
        if (sender.role, receiver.role) not in LEGAL_EDGES[msg.kind]:
            raise ProtocolError(
                f"illegal edge for {msg.kind.value}: {msg.sender} -> {msg.receiver}"
            )
        receiver.mailbox.append(msg)
        while receiver.mailbox:
            pending = receiver.mailbox.popleft()
            for out in receiver.handle(pending, self):
                self.send(out)

    def _upload_unified(self, round_id: int) -> None:
        unified = self.server.unified
        cfg = self.config.ldp
        perturb = cfg.enabled and (self.phase == "serve" or cfg.perturb_training)
        if perturb:
            payload = ldp_perturb(unified, cfg, self.server.ldp_rng)
            flag = True
        else:
            payload = unified
            flag = False if cfg.enabled else None
        self.send(Message(round_id, self.server.name, self.task.name,
                          Kind.UNIFIED_REP_TO_TASK, payload, ldp_applied=flag))

    # -- serving ----------------------------------------------------------

    def serve(self, ids: np.ndarray) -> np.ndarray:
        """Federated serving: ids out, local reps up, aggregate, (LDP), predict."""
        ids = np.asarray(ids, dtype=np.int64)
        self.phase = "serve"
        round_id = self._round_counter
        self._round_counter += 1
        self.server.reset_round_state()
        for p in self.insensitive:
            self.send(Message(round_id, self.task.name, p.name, Kind.SAMPLE_IDS, ids))
        self.server.aggregate()
        self._upload_unified(round_id)
        self.phase = "idle"
        return self.task.last_predictions

    # -- training ---------------------------------------------------------

    def run_training_round(self, ids: np.ndarray) -> RoundResult:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[0] < 2:
            raise ProtocolError("contrastive learning requires >=2 samples per batch")
        self.phase = "train"
        round_id = self._round_counter
        self._round_counter += 1
        start_mark = len(self.transcript)
        self.events = [] if self.config.verify_updates else None
        self.encoder_pieces = {}
        self.server.reset_round_state()
        weights = self.config.weights

        # 1) distribute the batch ids; local reps cascade back to the server.
        # Sensitive platforms take part only when the fairness machinery runs.
        self.task.round_ids = ids
        for p in self.insensitive:
            self.send(Message(round_id, self.task.name, p.name, Kind.SAMPLE_IDS, ids))
        if self.config.mode == "fairvfl":
            for p in self.sensitive.values():
                self.send(Message(round_id, self.task.name, p.name, Kind.SAMPLE_IDS, ids))

        # 2) aggregate into the unified rep
        unified = self.server.aggregate()

        # 3) unified rep up, task gradient back (updates the task head)
        self._upload_unified(round_id)

        # 4) per-feature fairness machinery
        lp, lc, ld, la = {}, {}, {}, {}
        if self.config.mode == "fairvfl":
            for feature in self.bundle.features:
                self._fairness_steps(feature, round_id, unified, weights, lp, lc, ld, la)

        # 5) overall gradient on the unified rep
        task_grad = self.server.task_grad
        if self.config.task_grad_scale != 1.0:
            task_grad = task_grad * self.config.task_grad_scale
        if self.config.mode == "fairvfl":
            grad_unified = combine_overall_grad(task_grad, self.server.adv_grads, weights)
        else:
            grad_unified = task_grad

        # 6) aggregator update
        agg = self.server.aggregator
        agg_contribs, piece_stacks = [], []
        if self.events is not None:
            terms = [("task", self.config.task_grad_scale, self.server.task_grad)]
            if self.config.mode == "fairvfl":
                terms += [(f"adversarial/{f}", -weights.lam[f], self.server.adv_grads[f])
                          for f in self.bundle.features]
            for term, coeff, gout in terms:
                agg.zero_grad()
                gstack_piece = agg.backward(self.server.agg_cache, gout)
                agg_contribs.append((term, coeff, _snap_grads(agg.blocks())))
                piece_stacks.append((term, coeff, gstack_piece))
        agg.zero_grad()
        grad_stacked = agg.backward(self.server.agg_cache, grad_unified)
        if self.events is not None:
            self.events.append(UpdateEvent("aggregator", agg_contribs,
                                           _snap_grads(agg.blocks())))
            for p in self.insensitive:
                self.encoder_pieces[p.name] = [
                    (term, coeff, piece[:, p.index, :]) for term, coeff, piece in piece_stacks
                ]
        self.server.opts["aggregator"].step()
        agg.zero_grad()

        # 7) distribute local-rep gradients; encoders update on receipt
        for p in self.insensitive:
            self.send(Message(round_id, self.server.name, p.name,
                              Kind.LOCAL_REP_GRAD_DOWN, grad_stacked[:, p.index, :]))

        losses = RoundLosses(self.task.last_loss, lp, lc, ld, la)
        if not losses.all_finite():
            raise NumericError(f"non-finite loss in round {round_id}: {losses.flat()}")

        max_dev = None
        if self.events is not None:
            max_dev = max((self.ledger.verify(e) for e in self.events), default=0.0)
        records = self.transcript.records[start_mark:]
        self.phase = "idle"
        return RoundResult(round_id, losses, records, max_dev)

    def _fairness_steps(self, feature: str, round_id: int, unified: Array,
                        weights: LossWeights, lp, lc, ld, la) -> None:
        server = self.server
        mapper = server.mappers[feature]
        cdisc = server.cdiscs[feature]

        # contrastive discriminator: one descent step, representations fixed
        protected, mcache = mapper.forward(unified)
        ctx = ContrastiveContext(protected, unified, self.config.top_pool,
                                 server.neg_rngs[feature])
        neg_idx = select_negatives(ctx)
        lp[feature] = contrastive_discriminator_step(
            cdisc, server.opts[f"cdisc/{feature}"], protected, unified, neg_idx,
            grad_observer=self.single_loss_observer(f"cdisc/{feature}",
                                                    f"contrastive/{feature}"))

        # mapper ascent under the frozen, just-updated discriminator
        gamma = weights.gamma[feature]
        lc[feature], grad_protected = contrastive_adversarial_grad(
            cdisc, protected, unified, neg_idx)
        contribs = []
        if self.events is not None:
            mapper.zero_grad()
            mapper.backward(mcache, grad_protected)
            contribs = [(f"contrastive_adv/{feature}", -gamma,
                         _snap_grads(mapper.blocks()))]
        mapper.zero_grad()
        cal_mapper_gradient(mapper, mcache, grad_protected, gamma)
        if self.events is not None:
            self.events.append(UpdateEvent(f"mapper/{feature}", contribs,
                                           _snap_grads(mapper.blocks())))
        server.opts[f"mapper/{feature}"].step()
        mapper.zero_grad()

        # recompute and share the protected rep; the cascade runs the bias
        # game (discriminator step, mapper descent, frozen adversarial pass)
        protected, server.mapper_caches[feature] = mapper.forward(unified)
        self.send(Message(round_id, server.name, self.sensitive[feature].name,
                          Kind.PROTECTED_REP_UPLOAD, protected))
        if feature not in server.adv_grads:
            raise ProtocolError(f"fairness exchange for {feature} did not complete")
        ld[feature] = self.sensitive[feature].last_bias_loss
        la[feature] = self.sensitive[feature].last_adv_loss


def build_federation(dataset, partition, widths, config: FederationConfig,
                     seed: int, optim=None, p_drop: float = 0.2) -> Federation:
    """Wires a dataset, its vertical partition, and a fresh model bundle into
    a federation."""
    from ..data.dataset import partition_vertical
    from ..models import ModelBundle, OptimParams

    feature_shards, label_shards, task_shard = partition_vertical(dataset, partition)
    schemas = [shard.schema() for shard in feature_shards]
    sensitive_classes = {f: dataset.sensitive[f].n_classes for f in dataset.sensitive}
    bundle = ModelBundle(schemas, widths, dataset.n_task_classes, sensitive_classes,
                         seed, optim or OptimParams(), p_drop)
    return Federation(bundle, feature_shards, label_shards, task_shard, config, seed)
