from .classical import ClassicalResult, classical_calibrate
from .models import build_cnn, build_fcn
from .training import (CalibrationReport, Calibrator, TrainConfig, TrainResult, TrainingError,
                       evaluate, per_parameter_mse, train)
