"""Global imports for dsem-sheaf."""

from dsem_sheaf._formats_and_types import (
    FREE,
    ArPartSpec,
    Edge,
    SolveOptions,
    SolveRequest,
    TieGroup,
)
from dsem_sheaf._dsem import (
    assemble_precision,
    build_path_matrix,
    dsem_spec,
    extract_coefficients,
    fit_dsem_ml,
    log_density,
    persistence,
    simulate,
    validate_spec,
)
from dsem_sheaf._netlist import (
    CallableFunction,
    LinearCombination,
    Net,
    Netlist,
    Part,
    Port,
    consistent_labelings,
    external_io,
    graph_from_hypergraph,
    hypergraph_from_graph,
    netlist_from_dsem,
    netlist_graph,
    netlist_to_json,
    validate,
    wiring_hypergraph,
)
from dsem_sheaf._topology import (
    Assignment,
    Poset,
    RestrictionMap,
    SheafDiagram,
    Stalk,
    assignment_from_json,
    assignment_to_json,
    check_functoriality,
    consistency_radius,
    is_section,
    local_consistency_radius,
    residual_breakdown,
    section_from,
    sheaf_to_json,
)
from dsem_sheaf._sheaf_builder import (
    add_ar,
    build_model_sheaf,
    enumerate_sections,
    explode_observations,
    feedback_sheaf,
    induced_assignment,
    regression_sheaf,
    sheaf_from_netlist,
    tie_groups,
)
from dsem_sheaf._inference import (
    Objective,
    attribute_residuals,
    compare_ar_orders,
    completed_series,
    fit,
    impute,
    minimize,
    predict,
    residual_report,
)
from dsem_sheaf._subsystems import (
    FiniteDyn,
    check_subsystem,
    commuting_residuals,
    cosheaf_of_invariants,
    dsem_dag,
    in_closed_sets,
    invariant_sets,
    is_conjugacy,
    projection_table,
    pullback_invariant,
    subsystem_meet,
    subsystem_sheaf_from_dag,
    subsystem_update,
    table_dynamics,
)
from dsem_sheaf._io import (
    ingest_data,
    ingest_model,
    model_from_dict,
    model_to_dict,
    result_to_json,
    untransform,
)
from dsem_sheaf._viz import lattice_to_dot, plot_residuals, sheaf_to_dot

__version__ = "0.1.0"

__all__ = [
    "FREE",
    "ArPartSpec",
    "Edge",
    "SolveOptions",
    "SolveRequest",
    "TieGroup",
    "assemble_precision",
    "build_path_matrix",
    "dsem_spec",
    "extract_coefficients",
    "fit_dsem_ml",
    "log_density",
    "persistence",
    "simulate",
    "validate_spec",
    "CallableFunction",
    "LinearCombination",
    "Net",
    "Netlist",
    "Part",
    "Port",
    "consistent_labelings",
    "external_io",
    "graph_from_hypergraph",
    "hypergraph_from_graph",
    "netlist_from_dsem",
    "netlist_graph",
    "netlist_to_json",
    "validate",
    "wiring_hypergraph",
    "Assignment",
    "Poset",
    "RestrictionMap",
    "SheafDiagram",
    "Stalk",
    "assignment_from_json",
    "assignment_to_json",
    "check_functoriality",
    "consistency_radius",
    "is_section",
    "local_consistency_radius",
    "residual_breakdown",
    "section_from",
    "sheaf_to_json",
    "add_ar",
    "build_model_sheaf",
    "enumerate_sections",
    "explode_observations",
    "feedback_sheaf",
    "induced_assignment",
    "regression_sheaf",
    "sheaf_from_netlist",
    "tie_groups",
    "Objective",
    "attribute_residuals",
    "compare_ar_orders",
    "completed_series",
    "fit",
    "impute",
    "minimize",
    "predict",
    "residual_report",
    "FiniteDyn",
    "check_subsystem",
    "commuting_residuals",
    "cosheaf_of_invariants",
    "dsem_dag",
    "in_closed_sets",
    "invariant_sets",
    "is_conjugacy",
    "projection_table",
    "pullback_invariant",
    "subsystem_meet",
    "subsystem_sheaf_from_dag",
    "subsystem_update",
    "table_dynamics",
    "ingest_data",
    "ingest_model",
    "model_from_dict",
    "model_to_dict",
    "result_to_json",
    "untransform",
    "lattice_to_dot",
    "plot_residuals",
    "sheaf_to_dot",
]
