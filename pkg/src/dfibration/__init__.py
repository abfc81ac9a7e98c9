"""Double fibration transforms: geometry, conormal linear algebra, normal operators."""

__version__ = "0.1.0"

from . import calculus, fibration, geometry, normal, transform  # noqa: E402,F401
from .errors import *  # noqa: E402,F401,F403
