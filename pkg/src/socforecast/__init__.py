"""Battery state-of-charge forecasting in plain numpy.

An autoencoder compresses each telemetry step, a bidirectional LSTM predicts
the next step's charged and discharged ampere-hours, and Coulomb counting
turns those predictions into an integer SoC. Plain-LSTM and SVR baselines and
a synthetic pack simulator are included.
"""

from .autoencoder import AutoencoderParams, decode, encode, train_autoencoder
from .checkpoint import load_checkpoint, save_checkpoint
from .coulomb import SocTrace, coulomb_soc, round_soc
from .errors import (
    NumericError,
    ParseError,
    ProfileNotFoundError,
    ScalabilityError,
    SchemaError,
    ShapeError,
    SocForecastError,
    StateError,
    TrainingError,
    UndefinedMetricError,
    ValidationError,
)
from .metrics import MetricsReport, evaluate, table_report
from .pipeline import (
    TrainConfig,
    TrainedModel,
    build_windows,
    fit,
    fit_scaler,
    forecast_autoregressive,
    predict_batch,
    prepare,
)
from .recurrent import BiLstmModel, LstmModel, LstmParams, LstmState
from .svr import SvrHyperparams, SvrModel, svr_predict, svr_train
from .telemetry import (
    PROFILES,
    BatterySpec,
    Mode,
    TelemetrySeries,
    UserProfile,
    chronological_split,
    generate_synthetic,
    load_csv,
    save_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AutoencoderParams",
    "BatterySpec",
    "BiLstmModel",
    "LstmModel",
    "LstmParams",
    "LstmState",
    "MetricsReport",
    "Mode",
    "NumericError",
    "PROFILES",
    "ParseError",
    "ProfileNotFoundError",
    "ScalabilityError",
    "SchemaError",
    "ShapeError",
    "SocForecastError",
    "SocTrace",
    "StateError",
    "SvrHyperparams",
    "SvrModel",
    "TelemetrySeries",
    "TrainConfig",
    "TrainedModel",
    "TrainingError",
    "UndefinedMetricError",
    "UserProfile",
    "ValidationError",
    "build_windows",
    "chronological_split",
    "coulomb_soc",
    "decode",
    "encode",
    "evaluate",
    "fit",
    "fit_scaler",
    "forecast_autoregressive",
    "generate_synthetic",
    "load_checkpoint",
    "load_csv",
    "predict_batch",
    "prepare",
    "round_soc",
    "save_checkpoint",
    "save_csv",
    "svr_predict",
    "svr_train",
    "table_report",
    "train_autoencoder",
]
