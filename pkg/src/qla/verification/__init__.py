from .profile import ConditionProfile, default_profile, find_rho1, make_profile
from .report import FAIL, INCONCLUSIVE, PASS, GridRow, ProbeReport, evaluate_rule, load_report
from .probes import (
    PROBES,
    condition_norm_probe,
    efficiency_residual_probe,
    gamma_uniform_consistency_probe,
    identifiability_probe,
    ks_distance,
    mle_bayes_gap_probe,
    moment_convergence_probe,
    pld_tail_probe,
    qbe_integrability_check,
    studentized_normality_probe,
    sup_log_z,
)
