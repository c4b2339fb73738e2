"""UniEdit: training-free latent editing in a synthetic concept world."""

from .version import UNIEDIT_VERSION as __version__

__all__ = ["__version__"]
