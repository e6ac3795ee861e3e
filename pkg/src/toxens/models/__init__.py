from .spec import ClassifierSpec, PredictionMatrix, TrainedModel, TrainingError
from .api import fit, predict
from .gradcheck import gradient_check

__all__ = [
    "ClassifierSpec",
    "PredictionMatrix",
    "TrainedModel",
    "TrainingError",
    "fit",
    "predict",
    "gradient_check",
]
