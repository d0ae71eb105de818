"""Python bindings for the eddkit C++ library."""

from ._eddkit import *  # noqa: F401,F403
from ._eddkit import __version__  # noqa: F401
