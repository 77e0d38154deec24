"""Utility-maximizing rate scheduling over switching capacity regions, with
heavy-traffic diagnostics and the limiting reflected workload diffusion."""

__version__ = "0.1.0"

from .allocator import Allocation, allocate, kkt_residual
from .capacity import CapacityRegion, StateRegion, balanced_point, facet_count, membership, reduce, sum_capacity
from .dual_cost import fixed_point, lyapunov, total_cost
from .markov_env import EnvGenerator, EnvPath, build_generator, sample_path, scale_holding, stationary_distribution
from .utility import linear_log, power_family
