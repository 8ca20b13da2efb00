from .dataset import (
    Column,
    FeatureShard,
    LabelShard,
    PartitionAssignment,
    SensitiveColumn,
    TaskShard,
    VerticalDataset,
    default_partition,
    iterate_batches,
    partition_vertical,
    write_shard_manifest,
)
from .adult import bucketize_age, load_adult, AGE_BUCKET_EDGES
from .synthetic import SyntheticSpec, generate_synthetic, synthetic_partition

__all__ = [
    "Column", "FeatureShard", "LabelShard", "PartitionAssignment",
    "SensitiveColumn", "TaskShard", "VerticalDataset",
    "default_partition", "iterate_batches", "partition_vertical",
    "write_shard_manifest",
    "bucketize_age", "load_adult", "AGE_BUCKET_EDGES",
    "SyntheticSpec", "generate_synthetic", "synthetic_partition",
]
