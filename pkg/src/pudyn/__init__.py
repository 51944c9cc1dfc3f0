"""Equation discovery and forecasting with complex-valued product-unit networks."""
from .complex_core import DomainError, NonFiniteError
from .discovery import MergeConfig, Term, discover
from .dynamics import SYSTEMS, TrajectoryConfig, generate_dataset, get_system
from .evaluation import EptConfig, compute_ept, compute_ept_trials
from .network import ProductUnitModel, init_model, load_model, model_forward, save_model
from .timeseries import TimeSeries, build_embedding_dataset, butterworth_lowpass, forecast, synth_gait
from .training import TrainConfig, train

__version__ = "0.1.0"
