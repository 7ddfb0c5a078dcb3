"""Power-grid state-estimation security workbench.

Load a transmission case, solve its load flow, meter it, estimate the
state with bad-data detection, synthesize coordinated false-data-injection
attacks that the detector cannot see, and batch the whole loop into
labeled datasets for detector research.
"""

from .analysis import (
    AnalysisReport,
    GLOBAL_MISMATCH_TOL_MW,
    P_BALANCE_TOL_MW,
    Q_BALANCE_TOL_MVAR,
    RecordAudit,
    analyze_pair,
    audit_record,
)
from .attack import (
    AttackArea,
    AttackOptions,
    AttackResult,
    AttackSpec,
    ConstraintSystem,
    DcBaselineReport,
    changeable_state_variables,
    dc_baseline_attack,
    form_constraints,
    identify_attack_area,
    run_dc_baseline_trials,
    solve_attack,
)
from .caseio import (
    BUNDLED_CASES,
    bundled_case_path,
    load_network,
    load_wscc9,
    resolve_case,
    save_network,
)
from .dataset import (
    BUNDLED_PROFILES,
    DatasetConfig,
    DatasetManifest,
    DatasetRecord,
    DemandProfile,
    RecordRow,
    bundled_demand_path,
    generate_attack_records,
    generate_normal_records,
    ingest_demand_csv,
    load_manifest,
    read_records,
    save_demand_csv,
    scale_loads,
    synthesize_demand_profile,
    write_dataset,
)
from .errors import (
    AttackInfeasibleError,
    CaseFormatError,
    CaseValidationError,
    DegenerateAreaError,
    EstimationDivergenceError,
    InfeasibleDesignError,
    IngestionError,
    PairingError,
    PlanError,
    PowerFlowDivergenceError,
    TopologyError,
    UnobservableError,
    WorkbenchError,
)
from .estimation import (
    BddReport,
    EstimationOptions,
    EstimationResult,
    ObservabilityReport,
    PlausibilityReport,
    StateVariable,
    chi_square_threshold,
    detect_bad_data,
    estimate_wls,
    measurement_jacobian,
    observability_check,
    plausibility_check,
    residual_j,
    state_order,
)
from .model import (
    Branch,
    Bus,
    ExtendedAdmittanceMatrix,
    NetworkModel,
    build_admittance_matrix,
    build_extended_ybus,
)
from .powerflow import (
    BranchFlowSet,
    Measurement,
    MeasurementPlan,
    MeasurementSet,
    OperatingState,
    PlanEntry,
    PowerFlowOptions,
    bus_injections,
    compute_branch_flows,
    default_plan,
    generate_measurements,
    load_measurements,
    load_state,
    power_mismatch,
    save_measurements,
    save_state,
    solve_ac_powerflow,
    solve_dc_powerflow,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model / io
    "Bus", "Branch", "NetworkModel", "ExtendedAdmittanceMatrix",
    "build_admittance_matrix", "build_extended_ybus",
    "BUNDLED_CASES", "bundled_case_path", "load_network", "save_network",
    "load_wscc9", "resolve_case",
    # power flow and metering
    "OperatingState", "PowerFlowOptions", "solve_ac_powerflow",
    "solve_dc_powerflow", "power_mismatch", "BranchFlowSet",
    "compute_branch_flows", "bus_injections", "PlanEntry", "MeasurementPlan",
    "default_plan", "Measurement", "MeasurementSet", "generate_measurements",
    "save_measurements", "load_measurements", "save_state", "load_state",
    # estimation
    "StateVariable", "state_order", "EstimationOptions", "EstimationResult",
    "estimate_wls", "residual_j", "chi_square_threshold", "BddReport",
    "detect_bad_data", "measurement_jacobian", "ObservabilityReport",
    "observability_check", "PlausibilityReport", "plausibility_check",
    # attack
    "AttackArea", "identify_attack_area", "changeable_state_variables",
    "ConstraintSystem", "form_constraints", "AttackSpec", "AttackOptions",
    "AttackResult", "solve_attack", "dc_baseline_attack", "DcBaselineReport",
    "run_dc_baseline_trials",
    # dataset
    "DemandProfile", "ingest_demand_csv", "synthesize_demand_profile",
    "save_demand_csv", "BUNDLED_PROFILES", "bundled_demand_path",
    "scale_loads", "DatasetConfig", "RecordRow", "DatasetRecord",
    "generate_normal_records", "generate_attack_records", "DatasetManifest",
    "write_dataset", "read_records", "load_manifest",
    # analysis
    "RecordAudit", "AnalysisReport", "audit_record", "analyze_pair",
    "P_BALANCE_TOL_MW", "Q_BALANCE_TOL_MVAR", "GLOBAL_MISMATCH_TOL_MW",
    # errors
    "WorkbenchError", "CaseFormatError", "CaseValidationError",
    "TopologyError", "PowerFlowDivergenceError", "PlanError",
    "UnobservableError", "EstimationDivergenceError", "DegenerateAreaError",
    "InfeasibleDesignError", "AttackInfeasibleError", "IngestionError",
    "PairingError",
]
