"""Deformable image registration with Radon-domain similarity measures.

The package registers a template image onto a reference by minimizing a
similarity measure plus a linear-elastic regularization energy over P1
nodal displacement fields.  Besides plain sum-of-squared-differences, two
measures compare the images after a Radon transform (sinogram space) or
after Radon transform plus unfiltered back-projection, which trades
per-pixel locality for line-integral averaging.
"""

from .image import (Image, NoiseSpec, add_noise, disk_phantom, read_image,
                    sample_bilinear, sample_gradient, sample_with_gradient,
                    shepp_logan, warp, write_image)
from .radon import (ProjectorGeometry, Sinogram, default_geometry, image_inner,
                    pseudo_reconstruction, radon_adjoint, radon_forward, sino_inner)
from .mesh import (DisplacementField, TriMesh, coarse_mesh, field_eval, fine_mesh,
                   jacobian_ratios, locate, rasterize, read_mesh, structured_mesh,
                   write_mesh)
from .elastic import ElasticParams, assemble_stiffness, energy_and_grad, rigid_motions
from .similarity import (MeasureKind, PAPER_BEST_ALPHA, SimilarityContext,
                         build_context, eval_measure, eval_objective,
                         measure_value_and_grad, warp_template)
from .optimize import (MinimizeResult, OptimizerConfig, RegistrationConfig,
                       RegistrationRun, minimize, register)
from .synth import (DeformationSpec, SyntheticCase, draw_affine, draw_local,
                    forward_displacement, generate_cases, invert_map, load_case,
                    make_case, save_case)
from .metrics import (MASK_THRESHOLD, SUCCESS_RMSE, RunMetrics, batch_stats,
                      evaluate_run, field_diff_norm, object_mask, rmse)

__version__ = "0.1.0"
