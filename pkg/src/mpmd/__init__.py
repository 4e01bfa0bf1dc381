"""Simulator and benchmark kit for online min-cost perfect matching with convex delay costs."""

__version__ = "0.1.0"

from .costfn import TimeCostFunction, check_admissible, truncated_value
from .metric import MetricSpace, build_general, build_uniform
from .instance import (Instance, Request, gen_example1, gen_example2, gen_example3, gen_random,
                       gen_randomized_lb, load_instance, save_instance)
from .engine import Match, SimulationResult, evaluate_costs, simulate, simulate_adaptive
from .matchers import AlgorithmA, Greedy, StrategyI, StrategyII, StrategyIII, parse_matcher
from .offline import OfflineOptimum, brute_force_enumerate, optimal_dp, structured_round_bound
from .adversary import AdversaryConfig, adaptive_lb_source, run_adversary, verify_round_facts
from .harness import ExperimentSpec, RatioRecord, run_experiment, sweep

__all__ = [
    "TimeCostFunction", "check_admissible", "truncated_value",
    "MetricSpace", "build_general", "build_uniform",
    "Instance", "Request", "gen_example1", "gen_example2", "gen_example3", "gen_random",
    "gen_randomized_lb", "load_instance", "save_instance",
    "Match", "SimulationResult", "evaluate_costs", "simulate", "simulate_adaptive",
    "AlgorithmA", "Greedy", "StrategyI", "StrategyII", "StrategyIII", "parse_matcher",
    "OfflineOptimum", "brute_force_enumerate", "optimal_dp", "structured_round_bound",
    "AdversaryConfig", "adaptive_lb_source", "run_adversary", "verify_round_facts",
    "ExperimentSpec", "RatioRecord", "run_experiment", "sweep",
]
