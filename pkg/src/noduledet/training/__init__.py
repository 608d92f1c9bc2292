from .assign import ANCHOR_RATIO_THRESHOLD, AssignedTarget, anchor_matches, assign_batch, assign_targets
from .loss import OBJ_BALANCE, LossParts, bce_with_logits, ciou, ciou_and_grad, compute_loss
from .optim import SGD
from .trainer import EpochRecord, TrainConfig, TrainingDiverged, train, validation_loss

__all__ = [
    "ANCHOR_RATIO_THRESHOLD",
    "AssignedTarget",
    "EpochRecord",
    "LossParts",
    "OBJ_BALANCE",
    "SGD",
    "TrainConfig",
    "TrainingDiverged",
    "anchor_matches",
    "assign_batch",
    "assign_targets",
    "bce_with_logits",
    "ciou",
    "ciou_and_grad",
    "compute_loss",
    "train",
    "validation_loss",
]
