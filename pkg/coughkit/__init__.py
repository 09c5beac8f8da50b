"""coughkit - cough-sound respiratory disease classification toolkit.

Covers the full desk-scale pipeline: rule-based cough segmentation, log-mel
features, a small vision transformer with teacher-student pretraining,
SAM fine-tuning and AUROC evaluation.
"""

from coughkit.version import __version__

__all__ = ["__version__"]
