"""Simulation and verification of boundary-controlled port-Hamiltonian systems and their boundary observers."""
from .core import (IoConfig, InvariantError, PortSplitError, StructureError, SystemSpec,
                   build_Q, derive_io_from_trace_selection, hamiltonian, io_from_ports,
                   ports_from_traces, sigma, sigma_residuals, traces_from_ports, validate_io,
                   validate_system)
from .models import BeamParams, REGIME_DESIGNS, beam_spec, preset, wave_spec
from .discretize import (DiscreteSystem, GridConfig, couple_plant_observer, discretize,
                         error_system, observer_pair)
from .simulate import SimulationError, SolverConfig, TrajectoryRecord, hamiltonian_trace, simulate
from .analysis import (PropositionVerdict, RegimeReport, check_proposition_runtime,
                       check_proposition_static, fit_decay, reconstruct_deflection, verify_all)

__version__ = "0.1.0"
