from ..core.model import param_count, prunable_param_count
from .compensate import BiasVector, apply_prune, channel_keep, compensate
from .mask import Allocation, PruneMask, global_targets, select_mask, target_masks, uniform_targets
from .scoring import FluctuationScores, column_norms_sq, score, standardized
