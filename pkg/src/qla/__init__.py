"""Quasi-likelihood analysis toolkit: localized random fields, QMLE/QBE and Monte Carlo probes."""
from .core import (
    FieldSample,
    LimitLaw,
    LocalChart,
    ParameterSpace,
    Prior,
    ScalingSchedule,
    delta,
    gamma_at,
    laq_remainder,
    laq_remainder_integral,
    limit_u_hat,
    limit_z,
    linear_prior,
    truncated_normal_prior,
    u_domain_contains,
    uniform_prior,
    y_field,
    z_field,
)
from .errors import *  # noqa: F401,F403
from .estimators import EstimateRecord, OptimizerSettings, QuadratureSettings, estimate, localize, qbe, qmle
from .models import CustomModel, ModelSpec, analytic_limits, quadratic_field, simulate_ou_field, simulate_vol_field, synth_laq_field
from .rng import stream

__version__ = "0.1.0"
