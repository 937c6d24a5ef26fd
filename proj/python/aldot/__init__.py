"""Dataset assurance, detection evaluation and tracking simulation."""

from ._aldot import *  # noqa: F401,F403
from ._aldot import __doc__  # noqa: F401

__version__ = "0.1.0"
