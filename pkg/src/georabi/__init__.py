"""Population transfer between undriven eigenstates by cyclic motion of a control parameter.

Modules: ``spectrum`` (eigenframes and couplings), ``deltawell`` (triple-well
bound states), ``dynamics`` (propagators and rotation angles),
``lambda_system`` (three-level Λ example) and ``cli``.
"""

__version__ = "0.1.0"
