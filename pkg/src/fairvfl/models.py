"""Model components: local encoders, the self-attention aggregator, the task
head, per-feature mappers, and both discriminator families.

Every component exposes ``forward(...) -> (out, cache)`` and
``backward(cache, grad_out)``; backward never mutates its cache, so a single
forward pass supports several independent backward passes (needed for the
per-loss gradient accounting).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import (
    Adam,
    Array,
    Embedding,
    Linear,
    ParamBlock,
    dropout_apply,
    dropout_backward,
    glorot_uniform,
    relu,
    relu_backward,
    rng_for,
    softmax,
)


@dataclass
class RepWidths:
    """Representation widths plus the architecture knobs hung off them."""

    rep: int = 400
    protected: dict[str, int] = field(default_factory=lambda: {"gender": 32, "age": 64})
    emb_dim: int = 32
    encoder_hidden: int = 256
    attn_heads: int = 4
    pool_hidden: int = 200
    head_hidden: int = 128
    mapper_hidden: int = 128
    cdisc_hidden: int = 128
    bdisc_hidden: int = 64

    def validate(self) -> None:
        if self.rep < 1 or any(h < 1 for h in self.protected.values()):
            raise ConfigError("all representation widths must be >= 1")
        if self.rep % self.attn_heads != 0:
            raise ConfigError(
                f"rep width {self.rep} not divisible by {self.attn_heads} heads"
            )


@dataclass
class PlatformSchema:
    """Feature slice owned by one insensitive platform."""

    cat_fields: list[tuple[str, int]]  # (field name, embedding rows incl. UNK)
    numeric_fields: list[str]


class LocalEncoder:
    """Embeds categorical fields, concatenates standardized numerics, and maps
    the result through a two-layer network to the shared rep width."""

    def __init__(self, name: str, schema: PlatformSchema, widths: RepWidths,
                 seed: int, p_drop: float = 0.2):
        self.schema = schema
        self.p_drop = p_drop
        self.embeddings = {
            fname: Embedding(f"{name}/emb/{fname}", rows, widths.emb_dim, seed)
            for fname, rows in schema.cat_fields
        }
        in_width = widths.emb_dim * len(schema.cat_fields) + len(schema.numeric_fields)
        self.fc1 = Linear(f"{name}/fc1", in_width, widths.encoder_hidden, seed)
        self.fc2 = Linear(f"{name}/fc2", widths.encoder_hidden, widths.rep, seed)

    def forward(self, cols: dict[str, Array], training: bool,
                rng: np.random.Generator | None) -> tuple[Array, tuple]:
        parts, emb_caches = [], []
        for fname, _ in self.schema.cat_fields:
            e, c = self.embeddings[fname].forward(np.asarray(cols[fname]))
            parts.append(e)
            emb_caches.append((fname, c))
        if self.schema.numeric_fields:
            parts.append(np.column_stack([cols[f] for f in self.schema.numeric_fields]))
        x0 = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
        h1, c1 = self.fc1.forward(x0)
        a1 = relu(h1)
        d1, mask = dropout_apply(a1, self.p_drop, rng, training)
        y, c2 = self.fc2.forward(d1)
        return y, (emb_caches, c1, h1, mask, c2)

    def backward(self, cache: tuple, gy: Array) -> None:
        emb_caches, c1, h1, mask, c2 = cache
        gd1 = self.fc2.backward(c2, gy)
        ga1 = dropout_backward(mask, gd1)
        gh1 = relu_backward(h1, ga1)
        gx0 = self.fc1.backward(c1, gh1)
        off = 0
        for fname, c in emb_caches:
            emb = self.embeddings[fname]
            dim = emb.block.w.shape[1]
            emb.backward(c, gx0[:, off:off + dim])
            off += dim
        # numeric inputs are data, not parameters: their slice of gx0 is dropped

    def blocks(self) -> list[ParamBlock]:
        out = [e.block for _, e in sorted(self.embeddings.items())]
        out += self.fc1.blocks() + self.fc2.blocks()
        return out

    def zero_grad(self) -> None:
        for b in self.blocks():
            b.zero_grad()


class MultiHeadSelfAttention:
    """Per-head scaled dot-product attention over the platform axis."""

    def __init__(self, name: str, dim: int, heads: int, seed: int):
        if dim % heads != 0:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.dh = dim // heads
        self.wq = ParamBlock(f"{name}/wq", glorot_uniform(dim, dim, rng_for(seed, f"init/{name}/wq")))
        self.wk = ParamBlock(f"{name}/wk", glorot_uniform(dim, dim, rng_for(seed, f"init/{name}/wk")))
        self.wv = ParamBlock(f"{name}/wv", glorot_uniform(dim, dim, rng_for(seed, f"init/{name}/wv")))

    def _split(self, z: Array, b: int, n: int) -> Array:
        return z.reshape(b, n, self.heads, self.dh).transpose(0, 2, 1, 3)

    def forward(self, x: Array) -> tuple[Array, tuple]:
        b, n, d = x.shape
        xf = x.reshape(b * n, d)
        q = self._split(xf @ self.wq.w, b, n)
        k = self._split(xf @ self.wk.w, b, n)
        v = self._split(xf @ self.wv.w, b, n)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.dh)
        attn = softmax(scores)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return out, (x, q, k, v, attn)

    def backward(self, cache: tuple, gy: Array) -> Array:
        x, q, k, v, attn = cache
        b, n, d = x.shape
        go = gy.reshape(b, n, self.heads, self.dh).transpose(0, 2, 1, 3)
        gattn = go @ v.transpose(0, 1, 3, 2)
        gv = attn.transpose(0, 1, 3, 2) @ go
        gscores = attn * (gattn - (gattn * attn).sum(axis=-1, keepdims=True))
        gscores /= np.sqrt(self.dh)
        gq = gscores @ k
        gk = gscores.transpose(0, 1, 3, 2) @ q

        xf = x.reshape(b * n, d)
        gx = np.zeros_like(xf)
        for g, blk in ((gq, self.wq), (gk, self.wk), (gv, self.wv)):
            gf = g.transpose(0, 2, 1, 3).reshape(b * n, d)
            blk.gw += xf.T @ gf
            gx += gf @ blk.w.T
        return gx.reshape(b, n, d)

    def blocks(self) -> list[ParamBlock]:
        return [self.wq, self.wk, self.wv]


class AttentionPool:
    """Additive attention pooling with a tanh projection and learned query."""

    def __init__(self, name: str, dim: int, hidden: int, seed: int):
        self.proj = Linear(f"{name}/proj", dim, hidden, seed)
        self.query = ParamBlock(
            f"{name}/query", glorot_uniform(hidden, 1, rng_for(seed, f"init/{name}/query"))
        )

    def forward(self, x: Array) -> tuple[Array, tuple]:
        b, n, d = x.shape
        z, cproj = self.proj.forward(x.reshape(b * n, d))
        u = np.tanh(z)
        e = (u @ self.query.w).reshape(b, n)
        alpha = softmax(e)
        pooled = np.einsum("bn,bnd->bd", alpha, x)
        return pooled, (x, cproj, u, alpha)

    def backward(self, cache: tuple, gpooled: Array) -> Array:
        x, cproj, u, alpha = cache
        b, n, d = x.shape
        galpha = np.einsum("bd,bnd->bn", gpooled, x)
        gx = alpha[:, :, None] * gpooled[:, None, :]
        ge = alpha * (galpha - (galpha * alpha).sum(axis=1, keepdims=True))
        gef = ge.reshape(b * n, 1)
        self.query.gw += u.T @ gef
        gu = gef @ self.query.w.T
        gz = gu * (1.0 - u * u)
        gx += self.proj.backward(cproj, gz).reshape(b, n, d)
        return gx

    def blocks(self) -> list[ParamBlock]:
        return self.proj.blocks() + [self.query]


class Aggregator:
    """Self-attention over local reps followed by attention pooling."""

    def __init__(self, widths: RepWidths, seed: int, name: str = "aggregator"):
        self.attn = MultiHeadSelfAttention(f"{name}/attn", widths.rep, widths.attn_heads, seed)
        self.pool = AttentionPool(f"{name}/pool", widths.rep, widths.pool_hidden, seed)

    def forward(self, local_reps: Array) -> tuple[Array, tuple]:
        """local_reps: (batch, n_platforms, rep) -> unified (batch, rep)."""
        ctx, c_attn = self.attn.forward(local_reps)
        unified, c_pool = self.pool.forward(ctx)
        return unified, (c_attn, c_pool)

    def backward(self, cache: tuple, gunified: Array) -> Array:
        c_attn, c_pool = cache
        gctx = self.pool.backward(c_pool, gunified)
        return self.attn.backward(c_attn, gctx)

    def pooling_weights(self, cache: tuple) -> Array:
        return cache[1][3]

    def blocks(self) -> list[ParamBlock]:
        return self.attn.blocks() + self.pool.blocks()

    def zero_grad(self) -> None:
        for b in self.blocks():
            b.zero_grad()


class TaskHead:
    """Two-layer classifier on the unified representation."""

    def __init__(self, widths: RepWidths, n_classes: int, seed: int,
                 p_drop: float = 0.2, name: str = "task_head"):
        self.p_drop = p_drop
        self.fc1 = Linear(f"{name}/fc1", widths.rep, widths.head_hidden, seed)
        self.fc2 = Linear(f"{name}/fc2", widths.head_hidden, n_classes, seed)

    def forward(self, s: Array, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Array, tuple]:
        h1, c1 = self.fc1.forward(s)
        a1 = relu(h1)
        d1, mask = dropout_apply(a1, self.p_drop, rng, training)
        logits, c2 = self.fc2.forward(d1)
        return logits, (c1, h1, mask, c2)

    def backward(self, cache: tuple, glogits: Array) -> Array:
        c1, h1, mask, c2 = cache
        gd1 = self.fc2.backward(c2, glogits)
        ga1 = dropout_backward(mask, gd1)
        gh1 = relu_backward(h1, ga1)
        return self.fc1.backward(c1, gh1)

    def predict(self, s: Array) -> Array:
        logits, _ = self.forward(s, training=False)
        return softmax(logits)

    def blocks(self) -> list[ParamBlock]:
        return self.fc1.blocks() + self.fc2.blocks()

    def zero_grad(self) -> None:
        for b in self.blocks():
            b.zero_grad()


class TwoLayerMlp:
    """Deterministic two-layer ReLU network (no dropout); shared by mappers
    and discriminators, whose exact-value contracts forbid stochastic layers."""

    def __init__(self, name: str, fan_in: int, hidden: int, fan_out: int, seed: int):
        self.fc1 = Linear(f"{name}/fc1", fan_in, hidden, seed)
        self.fc2 = Linear(f"{name}/fc2", hidden, fan_out, seed)

    def forward(self, x: Array) -> tuple[Array, tuple]:
        h1, c1 = self.fc1.forward(x)
        a1 = relu(h1)
        y, c2 = self.fc2.forward(a1)
        return y, (c1, h1, c2)

    def backward(self, cache: tuple, gy: Array) -> Array:
        c1, h1, c2 = cache
        ga1 = self.fc2.backward(c2, gy)
        gh1 = relu_backward(h1, ga1)
        return self.fc1.backward(c1, gh1)

    def blocks(self) -> list[ParamBlock]:
        return self.fc1.blocks() + self.fc2.blocks()

    def zero_grad(self) -> None:
        for b in self.blocks():
            b.zero_grad()


class Mapper(TwoLayerMlp):
    """Maps the unified rep to one feature's protected rep."""

    def __init__(self, feature: str, widths: RepWidths, seed: int):
        super().__init__(f"mapper/{feature}", widths.rep, widths.mapper_hidden,
                         widths.protected[feature], seed)
        self.feature = feature


class ContrastiveDiscriminator:
    """Scores whether a candidate unified rep is the preimage of a protected rep."""

    def __init__(self, feature: str, widths: RepWidths, seed: int):
        self.feature = feature
        self.net = TwoLayerMlp(f"cdisc/{feature}", widths.protected[feature] + widths.rep,
                               widths.cdisc_hidden, 1, seed)

    def forward(self, protected: Array, candidate: Array) -> tuple[Array, tuple]:
        if protected.shape[0] != candidate.shape[0]:
            raise DimensionError(
                f"protected batch {protected.shape[0]} != candidate batch {candidate.shape[0]}"
            )
        x = np.concatenate([protected, candidate], axis=1)
        scores, cache = self.net.forward(x)
        return scores[:, 0], (cache, protected.shape[1])

    def backward(self, cache: tuple, gscores: Array) -> tuple[Array, Array]:
        net_cache, h = cache
        gx = self.net.backward(net_cache, gscores[:, None])
        return gx[:, :h], gx[:, h:]

    def blocks(self) -> list[ParamBlock]:
        return self.net.blocks()

    def zero_grad(self) -> None:
        self.net.zero_grad()


class BiasDiscriminator(TwoLayerMlp):
    """Predicts a sensitive feature's class from its protected rep."""

    def __init__(self, feature: str, n_classes: int, widths: RepWidths, seed: int):
        super().__init__(f"bdisc/{feature}", widths.protected[feature],
                         widths.bdisc_hidden, n_classes, seed)
        self.feature = feature
        self.n_classes = n_classes


@dataclass
class OptimParams:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class ModelBundle:
    """All trainable components plus one Adam optimizer per component group."""

    def __init__(self, schemas: list[PlatformSchema], widths: RepWidths,
                 task_classes: int, sensitive_classes: dict[str, int],
                 seed: int, optim: OptimParams | None = None, p_drop: float = 0.2):
        widths.validate()
        if len(schemas) < 1 or len(sensitive_classes) < 1:
            raise ConfigError("need at least one insensitive platform and one sensitive feature")
        missing = set(sensitive_classes) - set(widths.protected)
        if missing:
            raise ConfigError(f"no protected width declared for {sorted(missing)}")
        optim = optim or OptimParams()
        self.widths = widths
        self.features = list(sensitive_classes)
        self.sensitive_classes = dict(sensitive_classes)

        self.encoders = [
            LocalEncoder(f"encoder/{i}", sch, widths, seed, p_drop)
            for i, sch in enumerate(schemas)
        ]
        self.aggregator = Aggregator(widths, seed)
        self.task_head = TaskHead(widths, task_classes, seed, p_drop)
        self.mappers = {f: Mapper(f, widths, seed) for f in self.features}
        self.cdiscs = {f: ContrastiveDiscriminator(f, widths, seed) for f in self.features}
        self.bdiscs = {
            f: BiasDiscriminator(f, sensitive_classes[f], widths, seed)
            for f in self.features
        }

        hp = (optim.lr, optim.beta1, optim.beta2, optim.eps)
        self.optim: dict[str, Adam] = {}
        for i, enc in enumerate(self.encoders):
            self.optim[f"encoder/{i}"] = Adam(enc.blocks(), *hp)
        self.optim["aggregator"] = Adam(self.aggregator.blocks(), *hp)
        self.optim["task_head"] = Adam(self.task_head.blocks(), *hp)
        for f in self.features:
            self.optim[f"mapper/{f}"] = Adam(self.mappers[f].blocks(), *hp)
            self.optim[f"cdisc/{f}"] = Adam(self.cdiscs[f].blocks(), *hp)
            self.optim[f"bdisc/{f}"] = Adam(self.bdiscs[f].blocks(), *hp)

    def mapper(self, feature: str) -> Mapper:
        if feature not in self.mappers:
            raise ConfigError(f"unknown sensitive feature {feature!r}; "
                              f"have {self.features}")
        return self.mappers[feature]

    def named_blocks(self) -> list[ParamBlock]:
        out: list[ParamBlock] = []
        for enc in self.encoders:
            out += enc.blocks()
        out += self.aggregator.blocks() + self.task_head.blocks()
        for f in self.features:
            out += self.mappers[f].blocks()
            out += self.cdiscs[f].blocks()
            out += self.bdiscs[f].blocks()
        return out

    def main_blocks(self) -> list[ParamBlock]:
        """Blocks of the plain-VFL model (encoders, aggregator, task head)."""
        out: list[ParamBlock] = []
        for enc in self.encoders:
            out += enc.blocks()
        return out + self.aggregator.blocks() + self.task_head.blocks()


def forward_unified(bundle: ModelBundle, platform_cols: list[dict[str, Array]],
                    training: bool = False,
                    rngs: list[np.random.Generator] | None = None
                    ) -> tuple[Array, list]:
    """Direct (non-federated) composition: encode every slice and aggregate.

    Returns the unified reps and the caches needed to continue backward.
    """
    if len(platform_cols) != len(bundle.encoders):
        raise ConfigError(
            f"{len(platform_cols)} feature slices for {len(bundle.encoders)} encoders"
        )
    reps, caches = [], []
    for i, enc in enumerate(bundle.encoders):
        rng = rngs[i] if rngs is not None else None
        r, c = enc.forward(platform_cols[i], training, rng)
        reps.append(r)
        caches.append(c)
    stacked = np.stack(reps, axis=1)
    unified, agg_cache = bundle.aggregator.forward(stacked)
    return unified, [caches, agg_cache]
