"""Asynchronous gossip Langevin sampling over a network of agents.

Pairs of neighbouring agents wake up on a shared random schedule and take
unadjusted Langevin steps on their local energies, fusing their samples
only when an event-triggering rule says the drift since the last broadcast
is large enough.  The package contains the simulator, the two benchmark
models, diagnostics and the closed-form consensus/convergence constants.
"""

from gossip_langevin.errors import (
    ConditionError,
    ConfigError,
    DivergenceError,
    GossipLangevinError,
    InvalidParameterError,
    InvalidTopologyError,
    MissingDataError,
)
from gossip_langevin.topology import (
    Graph,
    build_complete,
    build_ring,
    build_star,
    from_edge_list,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionError",
    "ConfigError",
    "DivergenceError",
    "GossipLangevinError",
    "Graph",
    "InvalidParameterError",
    "InvalidTopologyError",
    "MissingDataError",
    "build_complete",
    "build_ring",
    "build_star",
    "from_edge_list",
    "__version__",
]
