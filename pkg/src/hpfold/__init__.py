"""3D cubic-lattice HP protein folding with a transformer dueling double DQN."""
from .benchmarks import BENCHMARKS, expand_sequence
from .env import EnvState, HPEnv, StepResult, action_mask, validate_sequence
from .feasibility import OptimumCertificate, SearchResult, can_complete, enumerate_optimal
from .lattice import Action, Frame, apply_frame, contact_energy
from .qnet import DuelingTransformerQNet, NetworkConfig, masked_argmax, positional_encoding
from .replay import BetaSchedule, PrioritizedReplayBuffer, Transition, beta_at
from .trainer import RunRecord, TrainingConfig, run_training

__version__ = "0.1.0"
