"""Mixed quantum-classical dynamics laboratory.

Propagates two-level quantum-classical systems under the exact
time-dependent Schroedinger equation (split-operator and DVR routes) and
the mixed quantum-classical Liouville equation, builds phase-space
pseudo-densities through the discrete partial Wigner transform, and
quantifies positivity violations of marginal densities with a negativity
index. Includes closed-form and perturbative machinery for the
constant-coupling model and a preset-driven reproduction harness.
"""

from . import constmodel, grids, models, observables, qcle, runner, tdse, wigner
from .grids import (
    GaussianSpec,
    PhaseSpaceGrid,
    Wavefunction,
    build_grid,
    gaussian_packet,
)
from .models import ModelSpec, adiabatize, constant_model, dac_model, diabatic_potential
from .observables import Marginal, ObservableRecord, negativity_index
from .qcle import QcleState, qcle_step, run_qcle
from .tdse import dvr_propagate, run_tdse, split_operator_step, timestep
from .wigner import PWTDM, partial_wigner_transform, pseudo_density, rotate_basis

__version__ = "0.1.0"
