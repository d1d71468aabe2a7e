"""Polarized relevance propagation for GAN discriminators, with tools for
tracing data-preparation artifacts such as zero-padding boundaries."""

from .augment import FlipH, FlipV, NoisePad, Rotate, Scale, Translate, ZeroPad, augment_image, parse_op
from .diagnostics import (BoundaryReport, RadialProfile, RegionHistogram, compare_trajectory,
                          detect_phantom_boundary, histogram_divergence, ks_statistic, radial_profile,
                          region_histogram)
from .imageio import ImageFormatError, load_image, save_image
from .inference import ActivationTrace, forward, score
from .lrp import (InitRelevance, Polarity, PropagationError, RelevanceMap, conservation_report,
                  explain, propagate_layer, worst_residual)
from .metrics import mse, psnr, ssim
from .modelio import (LayerSpec, ModelBuilder, ModelFormatError, NetworkModel, fold_batch_norm,
                      load_model, load_tensors, save_model, save_tensors)
from .render import HeatmapConfig, render_heatmap, render_side_by_side, write_image
from .tensor import NonFiniteError, ShapeError, Tensor

__version__ = "0.1.0"
