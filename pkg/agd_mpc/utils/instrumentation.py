from dataclasses import dataclass, asdict


@dataclass
class EvalCounters:
    """Counts of the expensive evaluations each solver performs.

    Solvers never read these; tests and the CLI use them to verify the
    one-objective-evaluation-per-iteration and first-order-only contracts.
    """
    objective_evals: int = 0
    gradient_evals: int = 0
    jacobian_evals: int = 0
    gn_hessian_evals: int = 0
    backward_passes: int = 0

    def reset(self):
        self.objective_evals = 0
        self.gradient_evals = 0
        self.jacobian_evals = 0
        self.gn_hessian_evals = 0
        self.backward_passes = 0

    def snapshot(self):
        return asdict(self)


# Process-wide. Parallel benchmark cells run in separate worker processes.
COUNTERS = EvalCounters()
