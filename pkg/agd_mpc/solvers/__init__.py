from .base_solver import BaseSolver, SolveResult, SolveStatus, WarmStart
from .agd_solver import AgdSolver, AgdSettings, AdamState
from .ddp_solver import DdpSolver, DdpSettings

__all__ = ['BaseSolver', 'SolveResult', 'SolveStatus', 'WarmStart',
           'AgdSolver', 'AgdSettings', 'AdamState', 'DdpSolver', 'DdpSettings']
