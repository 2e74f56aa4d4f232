"""photodet: simulation and analysis toolkit for few-photon quantum photodetectors.

Subpackages
-----------
numerics     dense complex linear algebra, vectorization, exponentials, RK4 stepping
model        detector specifications, pulses, field states, architecture builders
liouvillian  vectorized generator, Green's functions, spectra, Dyson expansion
hierarchy    Fock-hierarchy propagation of auxiliary density matrices
stochastic   measurement unraveling, records, hit detection, Monte Carlo
metrics      efficiency / dark-count / jitter / latency estimators
reference    closed-form result catalog used by tests and diagnostics
cli          configuration-driven command line front end
"""

__version__ = "0.1.0"

from . import numerics, model, liouvillian, hierarchy, stochastic, metrics, reference

__all__ = [
    "numerics",
    "model",
    "liouvillian",
    "hierarchy",
    "stochastic",
    "metrics",
    "reference",
    "__version__",
]
