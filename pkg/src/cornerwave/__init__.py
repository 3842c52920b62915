"""Corner scattering, conductive transmission eigenvalues and CGO solutions in 2D."""
__version__ = "0.1.0"
