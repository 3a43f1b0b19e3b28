"""DMD-enhanced neural operator: PDE datasets, dynamic mode decomposition and a
multi-branch operator network trained with hand-written reverse mode."""

__version__ = "0.1.0"
