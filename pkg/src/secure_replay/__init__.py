"""Privacy-preserving token-based replay for accepting Petri nets."""

from .backend import (Backend, ClearBackend, MockBackend, OpAccount, available_backends,
                      get_backend, register_backend)
from .client import (FitnessReport, LocalSession, LogFitness, ReplayCounters, encode_event,
                     replay_log, replay_trace, token_fitness)
from .compiler import CompiledNet, Scenario, compile_net, deserialize, incidence_matrix, serialize
from .engine import ReplayEngine, StepResult
from .errors import *  # noqa: F401,F403
from .estimator import SecureTokenReplay
from .log_io import EventLog, parse_csv, parse_xes, read_log
from .net import AcceptingNet, Marking, parse_pnml, reachable_markings, to_pnml
from .oracle import OracleResult, ValidationReport, classic_replay, validate_engine
from .protocol import connect, serve

__version__ = "0.1.0"
