"""Random-walk dynamic traffic assignment with equivalent-impedance route choice."""

from .choice import ChoiceTable, compute_choice_table, extract_dag, lca, reverse_dijkstra
from .demand import IntervalPartition, Trip, interval_of, parse_trips
from .impedance import ChoiceParams, mnl_probabilities, scaled_logit_probabilities, virtual_travel_cost
from .loader import LinkTravelTimes, LoadMetrics, VdfParams, average_deviation, load
from .network import Link, Network, expand_intersections, free_flow_cost, load_network, parse_network
from .orchestrator import AssignmentError, RunConfig, RunResult, baseline_mnl_assign, run_dta, smooth_tables
from .sampler import RouteAssignment, remove_loops, sample_assignment, sample_route

__version__ = "0.1.0"
