"""Layer-wise knowledge distillation restricted to task-relevant teacher subspaces."""

__version__ = "0.1.0"
