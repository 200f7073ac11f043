"""Doubly robust difference-in-differences ATT estimation.

Estimators for two-group/two-period designs with conditional parallel
trends, for both panel and repeated cross-section data: two-way fixed
effects, outcome regression, inverse probability weighting (unnormalized
and Hajek), and doubly robust combinations with influence-function
inference, plus oracle efficiency-bound calculators and a Monte Carlo
harness.
"""

__version__ = "0.1.0"

from .data import AttEstimate, PanelDataset, RcDataset
from .efficiency import (
    BoundEstimate,
    OracleDgp,
    bound_gap_panel_rc,
    dgp_oracle,
    dr1_dr2_gap_rc,
    eff_bound_panel,
    eff_bound_rc,
    optimal_lambda,
)
from .errors import RobustDidError
from .inference import (
    EifVector,
    eif_dr_imp_panel,
    eif_dr_panel,
    eif_dr_rc,
    multiplier_bootstrap,
    se_ci_from_eif,
)
from .nuisance import (
    OutcomeFit,
    PropensityFit,
    fit_logit_ipt,
    fit_logit_mle,
    fit_or_ols,
    fit_or_wls,
)
from .panel import (
    PANEL_TAGS,
    EstimatorConfig,
    att_dr_imp_panel,
    att_dr_panel,
    att_ipw_panel,
    att_ipw_std_panel,
    att_or_panel,
    att_twfe_panel,
    estimate_panel,
)
from .rc import (
    RC_TAGS,
    RcWeights,
    att_dr1_imp_rc,
    att_dr1_rc,
    att_dr2_imp_rc,
    att_dr2_rc,
    att_ipw_rc,
    att_ipw_std_rc,
    att_or_rc,
    att_twfe_rc,
    estimate_rc,
    rc_weights,
)
from .simulation import (
    DgpSpec,
    McSummary,
    f_ps,
    f_reg,
    gen_dgp_panel,
    gen_dgp_rc,
    gen_latent,
    run_mc,
)

__all__ = [
    "AttEstimate",
    "BoundEstimate",
    "DgpSpec",
    "EifVector",
    "EstimatorConfig",
    "McSummary",
    "OracleDgp",
    "OutcomeFit",
    "PANEL_TAGS",
    "PanelDataset",
    "PropensityFit",
    "RC_TAGS",
    "RcDataset",
    "RcWeights",
    "RobustDidError",
    "att_dr1_imp_rc",
    "att_dr1_rc",
    "att_dr2_imp_rc",
    "att_dr2_rc",
    "att_dr_imp_panel",
    "att_dr_panel",
    "att_ipw_panel",
    "att_ipw_rc",
    "att_ipw_std_panel",
    "att_ipw_std_rc",
    "att_or_panel",
    "att_or_rc",
    "att_twfe_panel",
    "att_twfe_rc",
    "bound_gap_panel_rc",
    "dgp_oracle",
    "dr1_dr2_gap_rc",
    "eff_bound_panel",
    "eff_bound_rc",
    "eif_dr_imp_panel",
    "eif_dr_panel",
    "eif_dr_rc",
    "estimate_panel",
    "estimate_rc",
    "f_ps",
    "f_reg",
    "fit_logit_ipt",
    "fit_logit_mle",
    "fit_or_ols",
    "fit_or_wls",
    "gen_dgp_panel",
    "gen_dgp_rc",
    "gen_latent",
    "multiplier_bootstrap",
    "optimal_lambda",
    "rc_weights",
    "run_mc",
    "se_ci_from_eif",
]
