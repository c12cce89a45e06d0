"""2D EIT forward and inverse toolkit with extended electrodes.

Contacts are not fixed geometric objects: a spatially varying boundary
conductance on extended electrodes determines where current actually enters
the body, and it is reconstructed jointly with the domain log-conductivity.
"""

from .contacts import (
    ContactParams,
    ContactSummary,
    clamp_ph,
    dzeta_dtheta,
    edge_zeta_integrals,
    eval_zeta,
    initial_contacts,
    summarize,
)
from .forward import (
    CurrentPatternSet,
    DomainConductivity,
    ForwardSolution,
    assemble,
    measurements,
    solve,
)
from .gauss_newton import GNState, TikhonovProblem, gn_direction, line_search, objective, run, scalar_fit
from .jacobian import fd_oracle, full_jacobian, jacobian_contact, jacobian_kappa
from .mesh import (
    ExtendedElectrode,
    MeshError,
    TriMesh,
    build_boundary,
    locate_electrodes,
    read_mesh,
    refine_uniform,
    write_mesh,
)
from .priors import PriorSpec, StackedWhitener, build_whitener, cov_kappa, cov_ph, cov_pl

__version__ = "0.1.0"
