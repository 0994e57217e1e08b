"""Small-transformer training with frozen donor-layer grafting.

The package builds compact encoder / encoder-decoder / decoder-only
transformers, splices frozen layers from a larger pretrained donor stack
between the backbone and its head through a pair of width-matching
projections, and ships the accounting, metrics, and experiment harness
needed to study that composition end to end on synthetic tasks.
"""

from .autograd import Graph, Tensor, backward
from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["Graph", "Tensor", "backward", "backend_name", "__version__"]
