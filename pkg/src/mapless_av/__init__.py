"""Map-less lane keeping, lane changing and stopping, simulated closed loop.

Submodules: ``geometry``, ``track``, ``perception``, ``tracker``,
``planning``, ``control``, ``obstacles``, ``sensors``, ``simulation``,
``scenario``, ``report``, ``io``, ``acceptance`` and ``cli``.
"""

from .control import BicycleParams, ControllerGains, GAIN_PRESETS, fbl_steering
from .geometry import Pose2D, QuadraticCenterline
from .simulation import Scenario, run_scenario
from .track import paper_track, straight_track

__all__ = [
    "BicycleParams",
    "ControllerGains",
    "GAIN_PRESETS",
    "Pose2D",
    "QuadraticCenterline",
    "Scenario",
    "fbl_steering",
    "paper_track",
    "run_scenario",
    "straight_track",
]
__version__ = "0.1.0"
