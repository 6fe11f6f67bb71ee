"""Regularization-parameter control for 2D CT from the agreement of two rotated grids."""

__version__ = "0.1.0"

from .geometry import (
    FovMask,
    ImageGrid,
    ProjectionGeometry,
    Sinogram,
    draw_theta,
    make_fov_mask,
    make_parallel_geometry,
    rotate_image,
)
from .projector import (
    ProjectionOperator,
    back_project,
    estimate_operator_norm,
    forward_project,
    make_operator,
)
from .solvers import InvalidDataError, Reconstruction, SolverConfig, objective, solve
from .metrics import ConsistencyReading, SsimParams, gradient_energy, measure_consistency, ssim
from .controller import (
    ControlResult,
    ControllerConfig,
    ControllerState,
    controller_step,
    run_control_loop,
)
from .baselines import (
    BracketError,
    SweepRecord,
    discrepancy_search,
    discrepancy_select,
    lcurve_select,
    sweep,
)
from .phantom_io import (
    NoiseSpec,
    SinogramFormatError,
    add_noise,
    load_sinogram,
    save_csv,
    save_image,
    save_sinogram,
    shepp_logan,
)
