from .augment import AffineParams, AffineRanges, AugmentedPair, Photometric, apply_affine, augment
from .extractor import FeatureExtractor, ToyExtractor
from .finetune import (FinetuneResult, TTGAConfig, class_prototype, finetune, finetune_abc, finetune_acc,
                       medoid_reference)
from .ops import (bce_loss, binarize, masked_average_pool, otsu_mask, otsu_threshold, similarity_map)
from .prompts import GateConfig, make_prompts, prompt_slots

__all__ = [
    "AffineParams", "AffineRanges", "AugmentedPair", "Photometric", "apply_affine", "augment",
    "FeatureExtractor", "ToyExtractor",
    "FinetuneResult", "TTGAConfig", "class_prototype", "finetune", "finetune_abc", "finetune_acc",
    "medoid_reference",
    "bce_loss", "binarize", "masked_average_pool", "otsu_mask", "otsu_threshold", "similarity_map",
    "GateConfig", "make_prompts", "prompt_slots",
]
