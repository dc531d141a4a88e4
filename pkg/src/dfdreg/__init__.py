"""Non-linear filtered diagonal frame decomposition (DFD) regularization for
parallel-beam CT."""

from .core import AngleRange, Image, RngSeed, Sinogram, make_phantom, mse, random_phantoms
from .dfd import (
    DfdContext,
    QuasiSingularMap,
    WaveletField,
    haar_analysis,
    haar_synthesis,
    v_coefficients,
    verify_quasi_singular,
)
from .estimator import FilteredDFD
from .exceptions import (
    CalibrationError,
    ConfigurationError,
    DFDError,
    FormatError,
    InvalidArgumentError,
    PreconditionError,
    RangeError,
    TrainingError,
)
from .experiments import (
    ConvergenceConfig,
    ExperimentRecord,
    reconstruct,
    run_convergence_study,
    run_mse_table,
)
from .filters import (
    Filter,
    NeighbourSpec,
    bregman_distance,
    eval_filter,
    invert_filter,
    kappa_regularizer,
    penalty_from_filter,
    prox_bruteforce,
    regularizer_gradient_check,
    verify_filter,
)
from .learned import (
    MonotoneFilterParams,
    TrainConfig,
    build_training_pairs,
    eval_learned,
    filter_from_learned,
    load_params,
    save_params,
    train,
)
from .noise import NoiseSpec, add_noise
from .radon import RadonGeometry, fbp, radon_adjoint, radon_forward, riesz_filter

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
