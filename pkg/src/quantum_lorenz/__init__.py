"""Momentum observables of a cubic Hamiltonian evolving under the Lorenz flow.

For ``H = P^2/2M - (x.F + F.x)/2`` with a momentum-dependent quadratic force,
the Heisenberg equations for ``P`` are exactly the Lorenz system. ``P_k(t)``
acts on momentum wave functions as multiplication by the classical flow, so
averages are classical ensemble averages over ``|psi(p)|^2`` and no Planck
constant enters anywhere in this package.
"""

from .chaos import (
    EhrenfestResult,
    EhrenfestScan,
    LyapunovResult,
    ehrenfest_scan,
    ehrenfest_time,
    lyapunov_spectrum,
    packet_ehrenfest_time,
)
from .ensemble import (
    Dirac,
    GaussHermite,
    Gaussian,
    MomentStats,
    MonteCarlo,
    Samples,
    expectation,
    quadrature_nodes,
    read_samples_csv,
    sample_density,
)
from .errors import (
    DomainError,
    InputFileError,
    InsufficientDataError,
    InvalidParameterError,
    InvalidStateError,
    LorenzError,
    NonConvergenceError,
    StepLimitError,
)
from .integrate import (
    IntegratorConfig,
    TangentRun,
    Trajectory,
    dense_eval,
    flow_batch,
    flow_map,
    integrate,
    integrate_with_tangent,
)
from .lorenz import LorenzParams, fixed_points, kus_invariant, lorenz_jacobian, lorenz_rhs, reflect

__version__ = "0.1.0"
