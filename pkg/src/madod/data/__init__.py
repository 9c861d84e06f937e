from .colored_mnist import DOMAIN_NAMES, build_colored_mnist, load_mnist
from .dataset import DomainDataset, Instance, Pool, ood_class_schedule, split_id_ood
from .idx import IMAGES_MAGIC, LABELS_MAGIC, IdxFormatError, read_idx, write_idx
from .synthetic import SyntheticSpec, gen_synthetic

__all__ = [
    "DOMAIN_NAMES",
    "DomainDataset",
    "IMAGES_MAGIC",
    "IdxFormatError",
    "Instance",
    "LABELS_MAGIC",
    "Pool",
    "SyntheticSpec",
    "build_colored_mnist",
    "gen_synthetic",
    "load_mnist",
    "ood_class_schedule",
    "read_idx",
    "split_id_ood",
    "write_idx",
]
