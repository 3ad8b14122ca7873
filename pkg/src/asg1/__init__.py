"""Analysis-suitable G1 planar multi-patch parameterizations and C1 isogeometric spaces."""

__version__ = "0.1.0"
