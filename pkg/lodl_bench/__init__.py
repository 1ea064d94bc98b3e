"""
LODL Bench
Learned decision-focused losses for predict-then-optimize problems, with the three
benchmark domains, a reverse-mode autodiff core and an experiment harness.
"""

__version__ = "0.1.0"

from lodl_bench.errors import LodlError

__all__ = ["LodlError", "__version__"]
