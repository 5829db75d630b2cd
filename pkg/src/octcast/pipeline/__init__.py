from .baselines import center_baseline, kalman_baseline, kalman_forecast
from .evaluation import contact_reconstruction_error, evaluate
from .inference import ForecastResult, forecast, rasterize_heatmap
from .training import lr_at, total_loss, train

__all__ = [
    "ForecastResult",
    "center_baseline",
    "contact_reconstruction_error",
    "evaluate",
    "forecast",
    "kalman_baseline",
    "kalman_forecast",
    "lr_at",
    "rasterize_heatmap",
    "total_loss",
    "train",
]
