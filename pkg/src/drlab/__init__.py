"""Numerical laboratory for a max-type additive recursion on lattice laws.

The model iterates X -> (X_1 + ... + X_m - 1)^+ over i.i.d. copies.  The
package covers exact and float evolution of the law, critical-point
computation, certified enclosures of the growth limit, hierarchical
Monte Carlo with coupled sampling, and regularity scans of truncated
heavy-tail families.  The ``dr`` console script fronts all of it.
"""

from .coupling import (
    BridgeReport,
    CoupledSample,
    Coupling,
    bridge_check,
    make_coupling,
    sample_coupled_tree,
)
from .criticality import (
    PmScanResult,
    PmScanRow,
    PowerTailLaw,
    TruncatedFamily,
    critical_p,
    delta_at,
    pm_asymptotics_scan,
    truncated_family,
)
from .dist import (
    BACKEND_F64,
    BACKEND_RATIONAL,
    LatticeDist,
    MomentPanel,
    SystemSpec,
    convolve,
    convolve_power,
    dist_from_json,
    dist_to_json,
    dr_step,
    dr_step_with_loss,
    expectation,
    mix,
    moment_panel,
    pgf,
    pgf_derivatives,
    read_dist,
    stochastically_leq,
    truncate_down,
    validate_star,
    weighted_moment,
    write_dist,
)
from .errors import (
    CapacityError,
    DrError,
    MomentOverflowError,
    PreconditionError,
    ValidationError,
)
from .evolution import (
    EvolutionTrace,
    TruncationPolicy,
    delta_check,
    detect_horizon,
    evolve,
    phi,
    script_d,
    theta,
    theta_derivative_form,
)
from .free_energy import (
    EpsilonPoint,
    EpsilonScanResult,
    ExponentFit,
    FreeEnergyBounds,
    epsilon_scan,
    fit_exponent,
    free_energy,
    parse_bound,
)
from .logspace import LogReal
from .regularity import (
    RegularityReport,
    TruncatedRegularityScan,
    regularity_report,
    truncated_regularity_scan,
    xi_k,
)
from .treemc import (
    JointLaw,
    MCResult,
    PathSample,
    ProductFormulaReport,
    joint_law,
    joint_law_exact,
    mc_functional,
    mc_path_functional,
    path_indicator,
    product_formula_check,
    product_weight,
    sample_paths,
    sample_tree,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_F64",
    "BACKEND_RATIONAL",
    "BridgeReport",
    "CapacityError",
    "CoupledSample",
    "Coupling",
    "DrError",
    "EpsilonPoint",
    "EpsilonScanResult",
    "EvolutionTrace",
    "ExponentFit",
    "FreeEnergyBounds",
    "JointLaw",
    "LatticeDist",
    "LogReal",
    "MCResult",
    "MomentOverflowError",
    "MomentPanel",
    "PathSample",
    "PmScanResult",
    "PmScanRow",
    "PowerTailLaw",
    "PreconditionError",
    "ProductFormulaReport",
    "RegularityReport",
    "SystemSpec",
    "TruncatedFamily",
    "TruncatedRegularityScan",
    "TruncationPolicy",
    "ValidationError",
    "bridge_check",
    "convolve",
    "convolve_power",
    "critical_p",
    "delta_at",
    "delta_check",
    "detect_horizon",
    "dist_from_json",
    "dist_to_json",
    "dr_step",
    "dr_step_with_loss",
    "epsilon_scan",
    "evolve",
    "expectation",
    "fit_exponent",
    "free_energy",
    "joint_law",
    "joint_law_exact",
    "make_coupling",
    "mc_functional",
    "mc_path_functional",
    "mix",
    "moment_panel",
    "parse_bound",
    "path_indicator",
    "pgf",
    "pgf_derivatives",
    "phi",
    "pm_asymptotics_scan",
    "product_formula_check",
    "product_weight",
    "read_dist",
    "regularity_report",
    "sample_coupled_tree",
    "sample_paths",
    "sample_tree",
    "script_d",
    "stochastically_leq",
    "theta",
    "theta_derivative_form",
    "truncate_down",
    "truncated_family",
    "truncated_regularity_scan",
    "validate_star",
    "weighted_moment",
    "write_dist",
    "xi_k",
]
