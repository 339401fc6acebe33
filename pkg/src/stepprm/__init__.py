"""Step-level process reward modeling: function-step decomposition, Monte
Carlo reward labeling, meta-learned reward correction, and best-of-n
selection for generated code."""

__version__ = "0.1.0"
