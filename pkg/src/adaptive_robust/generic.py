"""Generic adaptive robust Bellman recursion for small problems.

Works on the cost scale: ``W_T(y) = loss(x)`` and
``W_t(y) = min_a max_{theta in region(t, c)} E[W_{t+1}(transition(t, y, a, z))]``
with ``y = (x, c)`` and the expectation taken over a quantizer of the driving
noise. States are explored by exhaustive recursion with memoization, so the
cost grows like ``(|A| |region| |quantizer|) ** T``; this is a reference
engine for checking the portfolio solvers, not a production path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

from .quantization import Quantizer

State = tuple[Hashable, Hashable]


@dataclass
class GameSolution:
    value: float
    selectors: dict = field(default_factory=dict)  # (t, y) -> (action index, theta)

    def action(self, t: int, y: State):
        return self.selectors[(t, y)][0]

    def worst(self, t: int, y: State):
        return self.selectors[(t, y)][1]


def solve_minimax(
    horizon: int,
    y0: State,
    actions: Sequence,
    transition: Callable[[int, State, object, float], State],
    region: Callable[[int, Hashable], Sequence],
    noise: Callable[[object, float], float],
    loss: Callable[[Hashable], float],
    quantizer: Quantizer,
) -> GameSolution:
    """Solve the finite-horizon robust game from ``y0``.

    ``noise(theta, eps)`` maps a standard-normal quantizer point to the driving
    variable under ``theta``; ``region(t, c)`` lists the adversary's choices.
    Ties go to the first action and the first parameter in the listed order.
    """
    memo: dict = {}
    selectors: dict = {}
    eps_w = list(zip(quantizer.points.tolist(), quantizer.weights.tolist()))

    def W(t: int, y: State) -> float:
        key = (t, y)
        if key in memo:
            return memo[key]
        if t == horizon:
            memo[key] = loss(y[0])
            return memo[key]
        best = None
        for i, a in enumerate(actions):
            worst_val, worst_theta = None, None
            for theta in region(t, y[1]):
                val = 0.0
                for eps, w in eps_w:
                    val += w * W(t + 1, transition(t, y, a, noise(theta, eps)))
                if worst_val is None or val > worst_val:
                    worst_val, worst_theta = val, theta
            if best is None or worst_val < best[0]:
                best = (worst_val, i, worst_theta)
        memo[key] = best[0]
        selectors[key] = (best[1], best[2])
        return best[0]

    return GameSolution(W(0, y0), selectors)
