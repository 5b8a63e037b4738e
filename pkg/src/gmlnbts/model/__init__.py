from .g2mcim import G2MCIM, MODALITY_COUNT, modal_weighted_mix, relation_pairs
from .m2ae import M2AE, M2aeSpec
from .network import MODALITIES, GmlnConfig, GmlnModel, param_count, tiny_config
from .transformer import SpatialReductionAttention, StageSpec, TransformerBlock, TransformerStage
from .vrum import VRUM, VrumSpec

__all__ = [
    "G2MCIM", "M2AE", "M2aeSpec", "MODALITIES", "MODALITY_COUNT",
    "GmlnConfig", "GmlnModel", "SpatialReductionAttention", "StageSpec",
    "TransformerBlock", "TransformerStage", "VRUM", "VrumSpec",
    "modal_weighted_mix", "param_count", "relation_pairs", "tiny_config",
]
