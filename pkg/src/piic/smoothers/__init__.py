from .banded import BlockTridiagonal
from .map import GaussNewtonConfig, map_objective, smooth_map
from .moments import (PolicyPrior, SigmaPointConfig, TrajectoryMoments, basis_moments,
                      policy_statistics, residual_moments, sigma_points, unscented_transform)
from .unscented import smooth_unscented

__all__ = [
    "BlockTridiagonal", "GaussNewtonConfig", "PolicyPrior", "SigmaPointConfig",
    "TrajectoryMoments", "basis_moments", "map_objective", "policy_statistics",
    "residual_moments", "sigma_points", "smooth_map", "smooth_unscented", "unscented_transform",
]
