"""Discrete Wasserstein tangent geometry: tangent elements as couplings, parallel
transport, tangent metrics, translated curves and mean-field control."""

from .curves import PathEnsemble, enumerate_translations, translate, uniform_grid
from .measure import DiscreteMeasure, merge_atoms, moment
from .parallel import (TransportResult, check_transport, enumerate_transports,
                       transport_along_coupling, transport_along_paths)
from .tangent import (TangentElement, compare_by_transport, compare_by_transport_sup,
                      sheaf_distance, tangent_distance)
from .transport import (Coupling, cost, enumerate_vertex_couplings, glue, sinkhorn,
                        solve_ot, wasserstein)

__all__ = [
    "DiscreteMeasure", "merge_atoms", "moment",
    "Coupling", "cost", "enumerate_vertex_couplings", "glue", "sinkhorn", "solve_ot", "wasserstein",
    "TangentElement", "tangent_distance", "sheaf_distance", "compare_by_transport",
    "compare_by_transport_sup",
    "PathEnsemble", "uniform_grid", "translate", "enumerate_translations",
    "TransportResult", "transport_along_coupling", "transport_along_paths", "enumerate_transports",
    "check_transport",
]

__version__ = "0.1.0"
