"""Generalized multiscale reduced models with online enrichment and DEIM."""

from .deim import DeimModel, build_deim, collect_snapshots, pod
from .fem import FineDiscretization
from .field import PermeabilityField, constant_field, generate_channelized, load_field, save_field
from .grid import CoarseMesh, ConfigurationError, FineMesh, build_coarse_mesh, build_fine_mesh
from .msbasis import MultiscaleBuilder, build_offline_space
from .online import Enricher, EnrichmentPolicy
from .rom import ReducedOperator, project
from .stepper import AllenCahn, StepperConfig, run

__version__ = "0.1.0"
