"""Monte Carlo laboratory for random walks in random mixing environments."""

from .geometry import (Cone, DimensionMismatch, Direction, ZeroDirection, ZetaTooLarge,
                       cone_contains, cone_margin, make_direction)
from .environment import (BlockIndependent, DriftReport, EnvironmentModel, Homogeneous,
                          InvalidNeighborSum, IsingParams, IsingTwoKernel, NonPositiveDrift,
                          Product, TransitionKernel, UnsupportedModel, check_non_nestling,
                          dobrushin_coefficient, glauber_sample, ising_conditional,
                          kalikow_cs_lhs, kalikow_sufficient_check, kernel_validate,
                          local_drift, mixing_rate_bound, spin_field_to_csv)
from .walker import (EpsilonSequence, KappaTooLarge, WalkRecord,
                     coupled_step_distribution, exit_time, simulate)
from .regeneration import (BadBlockLength, BlockSeries, EmptySequence, RegenSequence,
                           SplitCoupling, SupportMismatch, blocks_or_empty,
                           detect_cone_exit, detect_regenerations, empty_blocks,
                           extract_blocks, fresh_times, k_tail, split_couple)
from .estimators import (BadRegion, DegenerateEvent, KalikowEstimate, MomentReport,
                         NoBlocks, NoSurvivors, PreconditionFailed, RateTooLarge,
                         VelocityEstimate, compute_lambda0, cone_mixing_probe,
                         estimate_moments, estimate_velocity, exit_moment_check,
                         kalikow_mc, one_step_supermartingale_check, phi_prime)
from .cli import ConfigInvalid, ExperimentConfig, RunManifest, emit_report, run_experiment

__version__ = "0.1.0"
