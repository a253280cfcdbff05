"""Multi-task actor-critic training engine with elastic weight consolidation.

A shared-trunk, multi-head actor-critic network trained by an asynchronous
batched pipeline over built-in deterministic toy environments (or external
environments via a binary wire protocol), with Fisher-weighted quadratic
consolidation to protect earlier tasks when new ones are learned.
"""

__version__ = "0.1.0"

from . import bridge, checkpoint, engine, envs, losses, net, optim, wire  # noqa: F401
from ._kernels import backend_name  # noqa: F401
