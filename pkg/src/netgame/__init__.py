"""Co-design of LQG control and transmission scheduling for a networked control
loop whose channel is jammed by a strategic attacker.

The scheduling problem is a zero-sum stochastic game over the holding time
(steps since the last delivered packet).  It is solved exactly by Shapley
value iteration, learned by Nash Q-learning, certified through occupation
measures and best responses, and exercised in closed-loop simulation.
"""
from ._backend import BACKEND
from .adversarial_channel import ChannelConfig, GameSpec, StabilityWarning, sample_delivery, transition_dist
from .control import ControlSolution, control_gain, control_input, solve_control, stage_weight
from .estimation import LocalFilterState, ProtocolError, RemoteEstimatorState, local_filter_step, remote_update
from .game_solver import (
    FiniteGame,
    LearningResult,
    LearningSchedule,
    PolicyPair,
    QTable,
    ShapleyResult,
    StageGame,
    extract_policies,
    holding_time_game,
    nash_q_learning,
    shapley_value_iteration,
    solve_finite_game,
    solve_matrix_game_2x2,
    stage_cost,
    stage_game,
    value_vs_horizon,
)
from .lti_model import (
    ControlWeights,
    ConvergenceError,
    ModelError,
    PlantModel,
    control_riccati_finite,
    control_riccati_infinite,
    f_apply,
    f_powers,
    is_controllable,
    is_detectable,
    stability_margin,
    steady_state_filter_riccati,
)
from .simulation import EpisodeTrace, Metrics, metrics, run_episode, sweep
from .verification import (
    EquilibriumReport,
    OccupationMeasure,
    best_response,
    discounted_value,
    epsilon_gap,
    lemma1_monte_carlo,
    occupation_measure,
    policy_evaluation,
    reference_epsilon,
)

__version__ = "0.1.0"
