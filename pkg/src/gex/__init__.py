"""Virtual GEX teleoperation stack.

Kinematic models of the GX11 hand and EX12 glove, a dexterous
retargeting solver, a bit-exact servo bus codec with a virtual multidrop
bus, a device SDK, and a force-feedback teleoperation loop with a live
service and CLI.
"""

from .errors import (
    BusError,
    ConfigError,
    DeviceError,
    DimensionError,
    GexError,
    ModelError,
    ProtocolError,
    SolverError,
)
from .kinematics import HandModel, Transform, builtin_model, load_model, load_model_file
from .retarget import (
    DEFAULT_KEY_VECTORS,
    KeyVectorSpec,
    RetargetConfig,
    RetargetState,
    glove_keyvectors,
    retarget_trajectory,
    solve_frame,
)
from .rig import VirtualRig, build_rig
from .sdk import Glove, Hand
from .teleop import (
    ContactDetector,
    FingerMode,
    ImpedanceParams,
    SceneObject,
    TeleopSession,
    TickReport,
    builtin_scene,
)
from .virtual_bus import ServoProfile, VirtualBus, VirtualServo, builtin_profile

__version__ = "0.1.0"
