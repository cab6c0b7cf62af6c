"""Frozen cell problems: support functions, intrinsic distances, critical values, correctors."""

from .correctors import (CorrectorError, K0Region, SupersolutionResult, ViscosityReport,
                         bounded_subsolution, build_supersolution, h_profile, k0_region,
                         lipschitz_audit, path_confinement, shell_minima, verify_viscosity,
                         weighted_distance)
from .critical import (AubryInconclusive, CriticalResult, critical_value, detect_aubry,
                       level_outcomes, suggest_cell_box, upper_seed)
from .graph import (BellmanFordResult, DistanceField, InfeasibleLevel, MetricGraph, MinLoop,
                    NegativeCycle, NegativeCycleError, all_pairs, bellman_ford,
                    build_metric_graph, distance_field, loop_defect, min_cycle_length,
                    neighbour_offsets, path_nodes, reverse_distance_field, shortest_path_tree)
from .instance import CellInstance, freeze, hamiltonian_h0
from .support import (INFEASIBLE, UnboundedSupport, control_classes, dual_pieces,
                      evaluate_pieces, feasibility_floor, support_sigma, support_sigma_lp)
