"""Pseudo labels from class activation maps, dense-CRF agreement and dense energy losses."""

__version__ = "0.1.0"

from .cam import (
    background_prob,
    cam_from_features,
    concat_fg_bg,
    fg_bg_probabilities,
    multiscale_cam,
    normalize_fg,
)
from .crf import CrfConfig, crf_inference, crf_label, gaussian_filter_bruteforce, gaussian_filter_fast
from .evalkit import confusion, miou, pseudo_label_report
from .labels import SelectionConfig, cam_label, intersect_labels, mine_reliable_regions
from .losses import (
    EnergyConfig,
    LossValueGrad,
    classification_loss,
    cross_entropy_masked,
    energy_loss,
    energy_pairwise_reference,
    joint_seg_loss,
    softmax,
)
from .tensor_io import read_label_map, read_tensor, resize_bilinear, write_label_map, write_tensor
