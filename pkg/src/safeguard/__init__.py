"""Safety verification and secondary-controller synthesis for systems with
sector-bounded nonlinearities under sensor/actuator attacks.

The package verifies robust positive invariance of an ellipsoid inside a
given safe set for a plant driven by a pre-designed primary controller, and
synthesizes a secondary output-feedback controller over protected channels
when the primary loop alone cannot be certified.  Certificates are produced
by solving linear matrix inequalities with a built-in dense solver and are
always re-checked independently, including by closed-loop simulation.
"""

from .matcore import Ellipsoid, ellipsoid_contains, he, is_pd, is_psd, min_eig
from .sysmodel import (AttackModel, Plant, PrimaryController, SafeSet,
                       SecondaryController, SectorBound, Selection,
                       SystemBundle, assemble_closed_loop,
                       assemble_primary_loop, hat_matrices, load_model,
                       save_model, validate_attack_model, validate_sector)
from .lmi_engine import (AffineExpr, LmiProblem, SolveOutcome, check_solution,
                         evaluate, minimize_logdet_iterative, solve)
from .verify import (AlphaGrid, SafetyCertificate, VerificationOutcome,
                     build_prop3_problem, check_rpi_certificate,
                     verify_safety)
from .synth import (SynthOptions, SynthResult, complete_P, optimize_rpi,
                    recover_controller, solve_K_given_P, synthesize_l2,
                    synthesize_linear, synthesize_nonlinear, worst_attack)
from .simkit import (AttackGenerator, NonlinearityFn, Trajectory,
                     admissible_attack_set, dissipation_audit,
                     josephson_case_study, monitor_safety,
                     monte_carlo_invariance, sample_attack, simulate)

__version__ = "0.1.0"
