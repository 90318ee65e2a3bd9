"""Task and motion planning with oriented harmonic potentials.

The library grows a navigation potential online while a robot discovers
obstacles, plans waypoint routes over sampled trees, and sequences goal
regions from a Buchi automaton specification.
"""

from __future__ import annotations

from .world import (Circle, Squircle, Region, ForestWorld, beta,
                    unit_ray_length, boundary_points)
from .transforms import TransformParams, TransformStack
from .incremental import IncrementalState
from .oriented import OrientedField, Guidance, wrap_angle
from .control import Pose, ControlParams, control, step, estimate_cost
from .sensing import (SensorModel, PointCloud, Cluster, ObstacleAdded,
                      ObstacleRefined, scan, cluster, fit_circle,
                      fit_squircle, fit_cluster, integrate)
from .errors import (HarmonicNavError, OutsideBoundary, OverlapAmbiguous,
                     AtGoal, Diverged, DegenerateSwitchTerm, FitDiverged,
                     Disconnected, RankDeficient, NoAcceptingRun, ParseError,
                     DanglingState, MissionFailed)

__version__ = "0.1.0"
