"""
Negative-dominant contrastive learning for imbalanced domain generalization.

Objective library (contrastive, alignment and re-weighted losses with
analytic gradients), hard-negative mining, split generators, diagnostics and
a small-network trainer, driven by the `ndcl` command line.
"""

from .models import *
from .services import *

__version__ = "1.0.1"
