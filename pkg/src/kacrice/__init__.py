"""Expected critical point counts of locally isotropic Gaussian random fields.

The package evaluates the expected number of critical points (total and by
Hessian index) through three integral representations over random matrix
ensembles, checks every analytic condition those representations need, and
verifies the results against a brute-force field-simulation oracle.
"""

from .structure import (StructureFunction, SpectralRep, LocalParams,
                        eval_lambda, eval_D, local_params, catalog, by_name)
from .conditions import (ConditionReport, check_smoothness, nondeg_scalar,
                         nondeg_dimfree, check_assumption3, check_c_positive,
                         sgoi_nondeg, covariance_full)
from .rmt import (EnsembleSpec, SgoiDecomposition, sample_goe, sample_goi,
                  sample_sgoi, goi_eig_logdensity, eig_sym,
                  conditional_corner_check)
from .counts import (Budget, CountRequest, CountResult, crt_total_er,
                     crt_index_er, crt_shell_goi, crt_shell_goe, shell_profile,
                     closed_form_n2, eta_prime, shell_volume)
from .simulate import FieldSample, FieldSampler, CriticalPointRecord, \
    sample_field, count_critical, mc_crt

__version__ = "0.1.0"
