"""Learning (N:M) semi-structured sparsity masks by policy gradient.

The package keeps one real logit per weight, groups logits by M, samples
N-hot group masks without replacement from the per-group softmax, and
updates the logits from forward loss evaluations alone.  Brute-force
enumeration oracles verify the probability model, the score gradient, and
the estimator variance ordering at desk scale.
"""

from .masks import NMMask, SparsityPattern, enumerate_masks, oplus, verify_representation
from .sampling import GroupLogits, grad_log_prob, group_mask_prob, log_prob, sample_mask

__all__ = [
    "NMMask",
    "SparsityPattern",
    "GroupLogits",
    "enumerate_masks",
    "oplus",
    "verify_representation",
    "group_mask_prob",
    "log_prob",
    "grad_log_prob",
    "sample_mask",
]

__version__ = "0.1.0"
