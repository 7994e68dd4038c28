"""sdebounds - optimal density bounds for SDEs with bounded drift."""

__version__ = "0.1.0"
__author__ = "sdebounds developers"
__description__ = (
    "Optimal density bounds for SDEs with bounded path-dependent drift, "
    "with a Monte Carlo verification lab"
)
