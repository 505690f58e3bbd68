"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is used when it was built; otherwise the
pure-Python ``_pykernels`` module is used. Set ``CAUSALCAP_PURE_PYTHON=1``
to force the fallback (both backends give bit-identical results).
"""

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("CAUSALCAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend

BACKEND = _active.BACKEND
tabular_rollout = _active.tabular_rollout
slide_step = _active.slide_step
point_rollout = _active.point_rollout
average_linkage = _active.average_linkage
q_episode = _active.q_episode

__all__ = [
    "BACKEND",
    "average_linkage",
    "compiled_backend",
    "point_rollout",
    "python_backend",
    "q_episode",
    "slide_step",
    "tabular_rollout",
]
