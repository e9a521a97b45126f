from .dynamics import RobotDynamics, ModelSpec
from .cost import CostFunctions
from .ocp import ShootingOps, OcpDef
from .metrics import MpcMetrics
from .io_utils import IoUtils

__all__ = ['RobotDynamics', 'ModelSpec', 'CostFunctions', 'ShootingOps', 'OcpDef', 'MpcMetrics', 'IoUtils']
