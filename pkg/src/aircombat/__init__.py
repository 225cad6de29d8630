"""Noisy close-range air combat: simulator, dueling double DQN, self-play, evaluation."""
from .agent import (DuelingDQNAgent, EpsilonGreedyPolicy, GreedyPolicy, RandomPolicy,
                    ReplayBuffer, TrainConfig, TrainingLog, epsilon_at, train)
from .env import AirCombatEnv, EnvConfig, Status, StepResult, Transition, episode_score
from .evaluation import (MatchRecord, MatchResult, TournamentSummary, run_tournament,
                         stacking_sweep, training_curves)
from .observation import NoiseModel, StackBuffer
from .qnet import QNetwork
from .runconfig import RunConfig
from .reward import Outcome, RewardParams, classify_outcome, compute_reward
from .selfplay import OpponentPool, SelfPlayConfig
from .sim import (ActionCommand, AircraftState, Arena, CombatGeometry, KinematicsParams,
                  action_from_index, compute_geometry, step_aircraft, wrap_angle)

__version__ = "0.1.0"
