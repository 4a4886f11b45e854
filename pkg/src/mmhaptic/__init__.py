"""Force-augmented potential-field haptics for robotic ultrasound.

The pipeline turns stitched depth-camera scans of a torso into a cylindrical
surface, solves a Laplace potential field on a cylindrical voxel grid,
renders probe wrenches with a voxmap-pointshell scheme and refits the field
to measured wrenches by regularised least squares.
"""

__version__ = "0.1.0"

from .errors import (CoverageError, ConfigurationError, DegeneratePoseError, DimensionError, DomainError,
                     EmptyInputError, ExtractionError, InputError, MMHapticError, ModelError, SolverError)
from .evaluation import ErrorReport, SuiteReport, evaluate, export_heatmap
from .field import (BoundarySpec, CylindricalGrid, LaplaceOperator, LaplaceSystem, PotentialField,
                    assemble_laplace, build_grid, is_inside, laplace_field, solve_laplace, solve_polar_slice,
                    surface_boundary_voxels)
from .geometry import BodyAxis, Pose, ProbePose, ScanPose, from_cylindrical, to_cylindrical
from .impedance import (DEFAULT_LAMBDA, AugmentedSystem, SolverState, assemble_augmented, fit_field,
                        grid_search_lambda, recursive_update, solve_augmented)
from .metrics import angle_error, magnitude_error
from .phantom import (DEFAULT_PHANTOMS, Bump, PhantomSpec, TrajectoryParams, make_phantom, make_trajectory,
                      simulate_measurements)
from .render import (MeasurementBatch, PointShell, ProbeSpec, QueryCounter, append_measurement,
                     build_probe_pointshell, render_step)
from .scanlog import ScanRecord, read_scan_log, write_scan_log
from .surface import (CandidateSet, ExtractionConfig, SurfaceModel, axis_from_probe_pose, collect_candidates,
                      extract_surface, merge_scans, rank_weight, weighted_measurement)
