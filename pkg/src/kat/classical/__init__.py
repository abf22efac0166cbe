"""Classical model library and calibration backends.

Model kinds double as parameter containers: calibration returns a new kind
instance with fitted values inside a :class:`CalibratedModel` that also
stores the training-set mean squared error.
"""

from .models import (  # noqa: F401
    Affine,
    CalibratedModel,
    Constant,
    DispatchLoad,
    KernelRidge,
    Method,
    RandomForest,
    calibrate,
    load_library,
    predict,
    predict_many,
    save_library,
    training_mse,
)
from .kkt import calibrate_inverse_kkt, kkt_branch_and_bound, leaf_least_squares  # noqa: F401
from .optimize import bfgs_minimize, pso_minimize  # noqa: F401
