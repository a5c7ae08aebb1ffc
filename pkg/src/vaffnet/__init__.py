"""Multi-task OCTA structure detection with voting-based adaptive feature fusion."""

__version__ = "0.1.0"

from .codec import DecodeParams, decode, encode_grid, encode_heatmap, extract_peaks, assemble_junctions, round_trip
from .data import (
    AnnotationSet,
    AugmentParams,
    EnfaceTriplet,
    Junction,
    Sample,
    augment,
    load_sample,
    normalize,
    save_sample,
)
from .losses import DwaState, GridLossParams, TaskLossVector, bce_loss, dwa_update, grid_loss, mse_heatmap_loss, total_loss
from .metrics import bacc, classification_metrics, detection_metrics, dice, evaluate_sample, match_junctions
from .network import EncoderConfig, NetworkOutput, VAFFNet, fuse
from .phantom import PhantomConfig, generate_phantom
