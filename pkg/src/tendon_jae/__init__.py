"""Joint-angle estimation for tendon-driven kinematic chains from muscle lengths."""

from .errors import *  # noqa: F401,F403
from .estimator import (EKFConfig, EstimatorState, GroupSetEstimator, MeasurementFrame, StepTrace, predict,
                        step, step_group_set, update_absolute, update_relative)
from .grouping import GroupSet, GroupSpec, load_groups, selection_matrix, validate
from .harness import (NoiseSpec, TrajectoryLog, TrajectorySpec, build_jmm, emit_plots, prepare_demo,
                      run_experiment)
from .jmm import (DatasetSpec, MonomialBasis, PolynomialJMM, enumerate_basis, evaluate, fit, jacobian,
                  jacobian_directional_derivative, load_jmm, sample_grid, save_jmm)
from .model import (KinematicModel, MuscleLengths, calibrate, forward_kinematics, load_demo_model, load_model,
                    muscle_lengths, numeric_muscle_jacobian)

__version__ = "0.1.0"
