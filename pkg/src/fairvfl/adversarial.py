"""Fairness and privacy learning machinery.

Four games run per training round and per sensitive feature, in this order:

1. the contrastive discriminator descends the preimage-classification loss
   with all representations fixed;
2. the mapper ascends the same loss (recomputed under the just-updated,
   now-frozen discriminator), scaled by the contrastive weight;
3. the bias discriminator descends its label loss, and the mapper descends
   the same loss through the returned protected-rep gradient;
4. with discriminator and mapper frozen, the label loss is recomputed and
   its gradient on the unified rep is returned for the overall assembly
   (task gradient minus the weighted adversarial gradients).

Contrastive gradients never reach the unified rep: they stop at the mapper.
``SignLedger`` declares, per parameter block group, exactly which loss terms
may update it and in which direction; instrumented rounds verify every
applied update against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ProtocolError
from .models import BiasDiscriminator, ContrastiveDiscriminator, Mapper
from .nn import Adam, Array, pairwise_contrastive_loss, softmax_cross_entropy, softplus


@dataclass
class LossWeights:
    """Per-feature adversarial (lambda) and contrastive-adversarial (gamma) weights."""

    lam: dict[str, float]
    gamma: dict[str, float]

    def __post_init__(self):
        for name, table in (("lambda", self.lam), ("gamma", self.gamma)):
            bad = {k: v for k, v in table.items() if v < 0}
            if bad:
                raise ProtocolError(f"{name} weights must be >= 0, got {bad}")

    @classmethod
    def zeros(cls, features: list[str]) -> "LossWeights":
        return cls({f: 0.0 for f in features}, {f: 0.0 for f in features})


@dataclass
class ContrastiveContext:
    """One feature's batch of (protected, unified) rows plus sampling state."""

    protected: Array  # (E, H_i)
    unified: Array  # (E, rep)
    top_pool: int  # E_i
    rng: np.random.Generator

    def __post_init__(self):
        if self.protected.shape[0] != self.unified.shape[0]:
            raise DimensionError("protected/unified batch sizes differ")
        if self.protected.shape[0] < 2:
            raise ProtocolError("contrastive learning requires >=2 samples")
        if self.top_pool < 1:
            raise ProtocolError(f"top pool size must be >= 1, got {self.top_pool}")


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------


def _top_pool_indices(relevance: Array, query: int, top_pool: int) -> Array:
    """Indices of the top candidates by relevance, self masked, ties broken by
    ascending sample index."""
    r = relevance.astype(np.float64, copy=True)
    r[query] = -np.inf
    order = np.argsort(-r, kind="stable")
    return order[: min(top_pool, r.shape[0] - 1)]


def rank_and_select_negative(ctx: ContrastiveContext, query: int) -> int:
    """Pick one negative for the query row, uniformly from its top pool."""
    relevance = ctx.protected @ ctx.protected[query]
    pool = _top_pool_indices(relevance, query, ctx.top_pool)
    return int(pool[ctx.rng.integers(pool.shape[0])])


def select_negatives(ctx: ContrastiveContext) -> Array:
    """Negative index per batch row, drawn in row order from the context RNG."""
    relevance = ctx.protected @ ctx.protected.T
    return np.array(
        [
            int(pool[ctx.rng.integers(pool.shape[0])])
            for j in range(relevance.shape[0])
            for pool in (_top_pool_indices(relevance[j], j, ctx.top_pool),)
        ],
        dtype=np.int64,
    )


# ---------------------------------------------------------------------------
# Contrastive game (discriminator step, then mapper ascent)
# ---------------------------------------------------------------------------


def _contrastive_forward(disc: ContrastiveDiscriminator, protected: Array,
                         unified: Array, neg_idx: Array):
    """One stacked forward over the positive and negative pairs."""
    both_a = np.concatenate([protected, protected], axis=0)
    both_s = np.concatenate([unified, unified[neg_idx]], axis=0)
    scores, cache = disc.forward(both_a, both_s)
    n = protected.shape[0]
    return scores[:n], scores[n:], cache


def _check_pairwise_finite(pos: Array, neg: Array) -> None:
    per_sample = softplus(neg - pos)
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NumericError(f"non-finite contrastive loss at sample {int(bad[0])}")


def contrastive_loss_value(disc: ContrastiveDiscriminator, protected: Array,
                           unified: Array, neg_idx: Array) -> float:
    """The preimage-classification loss under the discriminator's current
    parameters; used both as the discrimination loss and, after the
    discriminator step, as the contrastive adversarial loss (same formula)."""
    pos, neg, _ = _contrastive_forward(disc, protected, unified, neg_idx)
    loss, _, _ = pairwise_contrastive_loss(pos, neg)
    return loss


def contrastive_discriminator_step(disc: ContrastiveDiscriminator, opt: Adam,
                                   protected: Array, unified: Array,
                                   neg_idx: Array, grad_observer=None) -> float:
    """One descent step on the discriminator; representations receive nothing."""
    pos, neg, cache = _contrastive_forward(disc, protected, unified, neg_idx)
    _check_pairwise_finite(pos, neg)
    loss, gpos, gneg = pairwise_contrastive_loss(pos, neg)
    disc.zero_grad()
    disc.backward(cache, np.concatenate([gpos, gneg]))  # input grads discarded
    if grad_observer is not None:
        grad_observer(disc.blocks())
    opt.step()
    disc.zero_grad()
    return loss


def contrastive_adversarial_grad(disc: ContrastiveDiscriminator, protected: Array,
                                 unified: Array, neg_idx: Array
                                 ) -> tuple[float, Array]:
    """Loss value and its gradient on the protected reps under the frozen,
    just-updated discriminator. The unified reps stay fixed; the caller turns
    the returned gradient into the mapper's ascent contribution."""
    pos, neg, cache = _contrastive_forward(disc, protected, unified, neg_idx)
    _check_pairwise_finite(pos, neg)
    loss, gpos, gneg = pairwise_contrastive_loss(pos, neg)
    disc.zero_grad()
    ga_both, _ = disc.backward(cache, np.concatenate([gpos, gneg]))
    disc.zero_grad()  # discriminator is frozen here
    n = protected.shape[0]
    return loss, ga_both[:n] + ga_both[n:]


def cal_mapper_gradient(mapper: Mapper, mapper_cache, grad_protected: Array,
                        gamma: float) -> None:
    """Accumulates the mapper's ascent contribution (-gamma times the
    contrastive-adversarial gradient) into its parameter blocks."""
    mapper.backward(mapper_cache, grad_protected * (-gamma))


# ---------------------------------------------------------------------------
# Bias-discrimination game
# ---------------------------------------------------------------------------


def bias_discriminator_step(disc: BiasDiscriminator, opt: Adam, protected: Array,
                            labels: Array, grad_observer=None) -> tuple[float, Array]:
    """One descent step on the bias discriminator from a single forward pass;
    returns the loss and its gradient on the protected reps (both computed
    at the pre-update parameters)."""
    logits, cache = disc.forward(protected)
    loss, glogits = softmax_cross_entropy(logits, labels)
    disc.zero_grad()
    grad_protected = disc.backward(cache, glogits)
    if grad_observer is not None:
        grad_observer(disc.blocks())
    opt.step()
    disc.zero_grad()
    return loss, grad_protected


def bias_loss_and_grad_frozen(disc: BiasDiscriminator, protected: Array,
                              labels: Array) -> tuple[float, Array]:
    """Label loss and its gradient on the protected reps with the
    discriminator frozen (no parameter gradients retained)."""
    logits, cache = disc.forward(protected)
    loss, glogits = softmax_cross_entropy(logits, labels)
    disc.zero_grad()
    grad_protected = disc.backward(cache, glogits)
    disc.zero_grad()
    return loss, grad_protected


def adversarial_grad_on_unified(mapper: Mapper, disc: BiasDiscriminator,
                                unified: Array, labels: Array
                                ) -> tuple[float, Array]:
    """Recomputes the protected rep through the frozen mapper, evaluates the
    label loss under the frozen discriminator, and returns its gradient on
    the unified rep only."""
    protected, mcache = mapper.forward(unified)
    loss, grad_protected = bias_loss_and_grad_frozen(disc, protected, labels)
    mapper.zero_grad()
    grad_unified = mapper.backward(mcache, grad_protected)
    mapper.zero_grad()  # mapper is frozen here
    return loss, grad_unified


def combine_overall_grad(task_grad: Array, adv_grads: dict[str, Array],
                         weights: LossWeights) -> Array:
    """Overall gradient on the unified rep: the task gradient minus each
    weighted adversarial gradient. Contrastive terms contribute nothing here
    (they stop at the mappers)."""
    missing = set(weights.lam) - set(adv_grads)
    if missing:
        raise ProtocolError(f"missing adversarial gradient for {sorted(missing)}")
    out = task_grad.copy()
    for feature, lam in weights.lam.items():
        g = adv_grads[feature]
        if g.shape != task_grad.shape:
            raise DimensionError(
                f"adversarial gradient for {feature} has shape {g.shape}, "
                f"expected {task_grad.shape}"
            )
        if lam != 0.0:
            out -= lam * g
    return out


# ---------------------------------------------------------------------------
# Sign ledger
# ---------------------------------------------------------------------------

DESCEND = "descend"
ASCEND = "ascend"


@dataclass
class UpdateEvent:
    """One optimizer step: the applied per-block gradients and the per-loss
    pieces they are supposed to be a signed combination of."""

    component: str
    # (loss term, coefficient, {block name: (gw, gb)}); applied = sum coeff * piece
    contributions: list[tuple[str, float, dict[str, tuple]]]
    applied: dict[str, tuple]


@dataclass
class SignLedger:
    """Declares which loss terms may update each parameter-block group."""

    declared: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def default(cls, features: list[str]) -> "SignLedger":
        decl: dict[str, dict[str, str]] = {
            "task_head": {"task": DESCEND},
            "aggregator": {"task": DESCEND},
        }
        decl["encoder/*"] = {"task": DESCEND}
        for f in features:
            decl[f"cdisc/{f}"] = {f"contrastive/{f}": DESCEND}
            decl[f"bdisc/{f}"] = {f"bias/{f}": DESCEND}
            decl[f"mapper/{f}"] = {f"contrastive_adv/{f}": ASCEND, f"bias/{f}": DESCEND}
            decl["aggregator"][f"adversarial/{f}"] = ASCEND
            decl["encoder/*"][f"adversarial/{f}"] = ASCEND
        return cls(decl)

    def _rules_for(self, component: str) -> dict[str, str]:
        if component in self.declared:
            return self.declared[component]
        head = component.split("/", 1)[0]
        wild = f"{head}/*"
        if wild in self.declared:
            return self.declared[wild]
        raise ProtocolError(f"no ledger entry for component {component}")

    def verify(self, event: UpdateEvent, tol: float = 1e-9) -> float:
        """Checks one update event; returns the max absolute deviation between
        the applied gradient and the declared signed sum of pieces."""
        rules = self._rules_for(event.component)
        for term, coeff, _ in event.contributions:
            if term not in rules:
                raise ProtocolError(
                    f"{event.component} updated by undeclared loss term {term}"
                )
            direction = rules[term]
            if direction == DESCEND and coeff < 0:
                raise ProtocolError(
                    f"{event.component}: {term} declared {direction} but coeff={coeff}"
                )
            if direction == ASCEND and coeff > 0:
                raise ProtocolError(
                    f"{event.component}: {term} declared {direction} but coeff={coeff}"
                )

        max_dev = 0.0
        for name, (gw, gb) in event.applied.items():
            acc_w = np.zeros_like(gw)
            acc_b = None if gb is None else np.zeros_like(gb)
            for _, coeff, pieces in event.contributions:
                pw, pb = pieces[name]
                acc_w += coeff * pw
                if acc_b is not None:
                    acc_b += coeff * pb
            max_dev = max(max_dev, float(np.max(np.abs(acc_w - gw), initial=0.0)))
            if acc_b is not None:
                max_dev = max(max_dev, float(np.max(np.abs(acc_b - gb), initial=0.0)))
        if max_dev > tol:
            raise ProtocolError(
                f"{event.component}: applied update deviates from declared "
                f"signed sum by {max_dev:.3e} (> {tol:.0e})"
            )
        return max_dev
