"""taxcl: a desk-scale workbench for taxonomy-aware contrastive
representation learning.

Subpackages split along the pipeline: numerics/rng (deterministic
math), batchdecomp (positive/negative partitioning), losses (the
contrastive loss family with analytic gradients), model (MLP encoder,
pretraining, linear probe), data (synthetic taxonomy datasets),
analysis (spectrum/cosine/retrieval/alpha-sweep reports) and cli.
"""

from .rng import SeededRng

__version__ = "0.1.0"

__all__ = ["SeededRng", "__version__"]
