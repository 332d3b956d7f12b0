"""Two-party quantum gambling: a casino (Alice) and a player (Bob) play a
fair-by-construction game over a shared two-box quantum system.

Submodules: ``quantum`` (state simulation and the measurement oracle),
``analysis`` (expected-gain formulas and minimax bounds), ``transport``
(wire codec, channels, oracle service), ``protocol`` (session state machines,
strategies, monitor), ``harness`` (batch experiments) and ``cli``.
"""

from .analysis import delta_closed, eta_tilde, gain_bob, minimax_numeric
from .protocol import (
    BiasedAlice,
    FalseClaimBob,
    GameParams,
    GeneralAlice,
    HonestAlice,
    HonestBob,
    LiarBob,
    NeverVerifyBob,
    Outcome,
    run_game,
    session_monitor,
    settle,
)
from .harness import ExperimentSpec, run_experiment, scaling_study, sweep

__all__ = [
    "BiasedAlice", "ExperimentSpec", "FalseClaimBob", "GameParams", "GeneralAlice",
    "HonestAlice", "HonestBob", "LiarBob", "NeverVerifyBob", "Outcome", "delta_closed",
    "eta_tilde", "gain_bob", "minimax_numeric", "run_experiment", "run_game",
    "scaling_study", "session_monitor", "settle", "sweep",
]
