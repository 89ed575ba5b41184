# SPDX-License-Identifier: Apache-2.0
"""Deep image prior experiments from Python.

Thin wrapper over the compiled ``_diplab`` extension. Arrays are float64
numpy arrays; library errors raise :class:`DiplabError` whose ``kind`` is one
of shape, unbound_leaf, invalid_argument, budget, divergence, infeasible,
config or io.
"""

from ._diplab import *  # noqa: F401,F403
from ._diplab import DiplabError, __version__, corpus_version  # noqa: F401
