"""fincell: periodic unit-cell simulation and adjoint shape optimization of fin arrays."""

__version__ = "0.1.0"
