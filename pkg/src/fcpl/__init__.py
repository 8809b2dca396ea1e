"""Feature-compatible progressive learning for desk-scale video copy detection.

Several small embedding models are trained so their features share one
space, averaged into an ensemble descriptor, fine-tuned on ground-truth
copy pairs, and used for both global ranking and temporal localization.
"""

from .errors import FcplError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "FcplError", "__version__"]
