"""Reference estimators: sliding window + PCA and a Gaussian HMM."""

from .hmm import (
    HmmModel,
    hmm_elbow,
    hmm_fit,
    hmm_reconstruct,
    hmm_select_states,
    hmm_state_proportions,
    viterbi,
)
from .pca import PcaBasis, sw_pca_fit, sw_pca_reconstruct

__all__ = [
    "HmmModel",
    "PcaBasis",
    "hmm_elbow",
    "hmm_fit",
    "hmm_reconstruct",
    "hmm_select_states",
    "hmm_state_proportions",
    "sw_pca_fit",
    "sw_pca_reconstruct",
    "viterbi",
]
