"""Dual control through Koopman lifting of extended-Kalman-filter moments."""

from .control import (
    LqrGain,
    design_ce_lqr,
    design_soc_lqr,
    diagnostics,
    lqr_gain,
    solve_dare,
)
from .errors import ConfigError, KoopsocError, NumericalError
from .filtering import Belief, InfoState, ekf_step, kalman_gain, t_pi
from .harness import Trace, Summary, metrics, run_closed_loop
from .koopman import (
    DataMatrices,
    LinearPredictor,
    TrainingConfig,
    collect_data,
    fit_edmd,
    predict,
    prediction_error,
)
from .lift import (
    CostMatrices,
    DictionaryState,
    LiftedState,
    build_cost,
    chol_halfvec,
    dictionary,
    halfvec_inv,
    m_inv,
    m_map,
)
from .model import (
    NoiseSpec,
    SystemModel,
    elu,
    example_system,
    jacobian_fd,
    measure,
    sample_truncated_gaussian,
    step_plant,
)

__version__ = "0.1.0"
