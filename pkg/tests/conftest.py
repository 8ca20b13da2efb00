import numpy as np
import pytest

from fairvfl.adversarial import LossWeights
from fairvfl.data import SyntheticSpec, generate_synthetic, iterate_batches, synthetic_partition
from fairvfl.models import RepWidths
from fairvfl.protocol import FederationConfig, LdpConfig, build_federation


def relative_error(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + floor)))


def small_widths(feature="attr", h=8):
    return RepWidths(rep=16, protected={feature: h}, emb_dim=4, encoder_hidden=8,
                     attn_heads=2, pool_hidden=6, head_hidden=8, mapper_hidden=8,
                     cdisc_hidden=8, bdisc_hidden=8)


@pytest.fixture(scope="session")
def tiny_dataset():
    spec = SyntheticSpec(n_samples=300, n_platforms=2, seed=5)
    return generate_synthetic(spec), synthetic_partition(spec)


def make_federation(ds, pa, *, lam=2.0, gamma=0.25, seed=11, mode="fairvfl",
                    ldp=None, verify=False, widths=None, top_pool=5,
                    task_grad_scale=1.0, lr=1e-3):
    from fairvfl.models import OptimParams

    widths = widths or small_widths()
    features = list(widths.protected)
    cfg = FederationConfig(
        weights=LossWeights({f: lam for f in features}, {f: gamma for f in features}),
        ldp=ldp or LdpConfig(enabled=False),
        top_pool=top_pool,
        mode=mode,
        verify_updates=verify,
        task_grad_scale=task_grad_scale,
    )
    return build_federation(ds, pa, widths, cfg, seed, optim=OptimParams(lr=lr))


@pytest.fixture()
def tiny_federation(tiny_dataset):
    ds, pa = tiny_dataset
    return ds, pa, make_federation(ds, pa)


def train_batches(ds, batch_size=16, seed=3):
    return iterate_batches(ds, "train", batch_size, seed)
