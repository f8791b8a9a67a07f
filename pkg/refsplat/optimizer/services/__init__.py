from refsplat.optimizer.services.adam_service import RefGaussianOptimizer
from refsplat.optimizer.services.densify_service import DensifyService
from refsplat.optimizer.services.train_service import TrainService, TrainResult

__all__ = ["RefGaussianOptimizer", "DensifyService", "TrainService", "TrainResult"]
