"""FairVFL: a deterministic simulator and toolkit for fair vertical federated
learning with adversarial debiasing and contrastive privacy protection."""

__version__ = "0.1.0"
