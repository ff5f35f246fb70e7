"""Splat compression with spherical-Gaussian color and unified pruning."""

from .scene import (BASE_PARAMS_PER_PRIMITIVE, DEFAULT_MAX_LOBES,
                    PARAMS_PER_LOBE, STATIC_FLOATS_PER_PRIMITIVE,
                    BudgetReport, ColorModel, ColorModelError, ConfigError,
                    GaussianPrimitive, NumericalFailure, Scene,
                    SceneFormatError, SGLobe, TruncatedFileError,
                    UnsupportedEncodingError, budget_report,
                    sh_color_float_cost)
from .sg import (SHBlock, dynamic_range, eval_color, eval_sg_lobe, eval_sh,
                 fibonacci_sphere, lobe_compensation, sphere_integral_sg)
from .render import (Camera, GradientSet, LossConfig, SceneParams, Splat2D,
                     accumulate_importance, loss, project, psnr, render,
                     render_backward, ssim)
from .io import (load_scene, parse_ply, read_compact, save_scene,
                 write_compact)
from .fit import FitConfig, FitResult, convert_scene, fit_sg, fit_sg_to_sh
from .prune import (GroupRates, PrunerConfig, PrunerState, TraceRow,
                    dual_update, gradient_step, prox_project, run)
from .postprocess import (VramEstimate, estimate_vram, finetune,
                          remove_lobes, remove_primitives, stats_report)
from .toy import ToySetup, make_toy_setup, ring_cameras

__version__ = "0.1.0"
