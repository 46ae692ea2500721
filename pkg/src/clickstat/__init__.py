"""Click-counting statistics of pixelated photon detectors.

Exact click distributions for coherent, thermal and Fock light, cascaded
crosstalk, Q-parameter estimators, a Gaussian-mixture pulse-area fitter and an
event-level Monte Carlo simulator.
"""
from .click_model import (
    click_distribution,
    coherent_click_distribution,
    coherent_mean_clicks,
    normal_ordered_gf,
)
from .crosstalk import (
    CrosstalkKernel,
    cascade_distribution,
    click_distribution_with_crosstalk,
    convolve_noise,
    crosstalk_generation,
)
from .estimators import (
    ChiEstimate,
    ClickQEstimator,
    CrosstalkCalibrator,
    InversionResult,
    QReport,
    calibrate_crosstalk,
    crosstalk_q_limit,
    extract_chi,
    fitted_q_report,
    naive_photon_inversion,
    q_binomial,
    q_mandel,
    q_report,
    q_uncertainty,
)
from .exceptions import (
    ClickstatError,
    DegenerateFitError,
    DomainError,
    FitError,
    IllPosedInversionError,
    IngestionError,
    InitializationError,
    ModelInconsistencyError,
    NumericalError,
    OutOfBracketError,
    UndefinedQError,
)
from .mc_sim import SimConfig, SimResult, sample_aup, simulate
from .pulsefit import (
    AuPHistogram,
    AuPMixture,
    GaussianMixtureFit,
    clicks_from_fit,
    fit_mixture,
    initialize_fit,
    mixture_model,
)
from .types import AuPParams, ClickDistribution, ClickSample, DetectorConfig, PhotonSource, SourceKind

__version__ = "0.1.0"
