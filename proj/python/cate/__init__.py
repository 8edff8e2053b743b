"""Computation-aware architecture encodings and encoding-dependent search."""

from cate._core import *  # noqa: F401,F403
from cate._core import __doc__  # noqa: F401
