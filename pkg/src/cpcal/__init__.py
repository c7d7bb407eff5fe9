"""cpcal: cyclic crystal-plasticity calibration via GP-based Bayesian
optimization, with microstructure-driven fatigue analytics."""

__version__ = "0.1.0"

from .bayesopt import BOConfig, Bounds, calibrate, lhs_sample  # noqa: F401
from .kernels import NUMBA_ENABLED  # noqa: F401
from .microstructure import (Ensemble, GrainRecord, Orientation,  # noqa: F401
                             misorientation, sample_ensemble, schmid_factor)
from .objective import (CalibrationCase, ExperimentalCycles,  # noqa: F401
                        ObjectiveConfig, load_experiment, objective_value)
from .polycrystal import (LoadingProgram, PolycrystalRun,  # noqa: F401
                          StressStrainCurve, run_uniaxial,
                          triangular_waveform)
from .slipcrystal import (MaterialParams, MaterialPointState,  # noqa: F401
                          StepResult, build_fcc_slip_systems, step,
                          table_params)
