"""Binary limited-data tomography with Gaussian-RBF parametric level sets."""

from rbftomo.grid import ImageGrid, ScanGeometry, default_n_det, make_grid, uniform_angles, limited_angles
from rbftomo.projector import SystemMatrix, Sinogram, trace_ray, build_system_matrix, forward, adjoint
from rbftomo.shape import (
    RbfDictionary,
    ShapeParams,
    make_dictionary,
    eval_levelset,
    smoothed_heaviside,
    synthesize_image,
    shape_jacobian,
    binarize,
)
from rbftomo.solver import (
    SolverOptions,
    SolverState,
    ReconstructionResult,
    SingularSystemError,
    NumericalFailure,
    objective,
    gradient,
    gauss_newton_step,
    line_search,
    init_alpha,
    reconstruct,
)
from rbftomo.metrics import MetricReport, sirt, otsu_threshold, compare, jaccard
from rbftomo.phantoms import Phantom, make_phantom
from rbftomo.io import FormatError, read_pgm, write_pgm, read_sinogram_csv, write_sinogram_csv

__version__ = "0.1.0"
