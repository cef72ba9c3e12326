"""Interior penalty DG solver and a posteriori tools for heterogeneous Helmholtz problems."""
__version__ = "0.1.0"
