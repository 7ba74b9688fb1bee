"""Calligraphic trajectory modelling, reconstruction, and stylisation.

Core ideas: traces are represented as sparse virtual-target plans whose
strokes are lognormal-speed circular arcs (``slm``); plans are recovered
from raw geometry (``reconstruct``), expanded into training sets
(``augment``), and modelled with a from-scratch recurrent mixture-density
network (``rmdn``) wired into prediction/stylisation/generation pipelines
(``pipelines``).  ``io_formats`` handles files, ``cli`` and ``service``
expose batch and interactive entry points.
"""

__version__ = "0.1.0"

from . import slm  # noqa: F401  (cheap, pulls in only numpy)
from .slm import (  # noqa: F401
    ActionPlan,
    DynamicParams,
    StrokeShape,
    Trajectory,
    VirtualTarget,
    integrate_trajectory,
    make_plan,
)
