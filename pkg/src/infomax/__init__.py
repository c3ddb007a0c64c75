"""Deep InfoMax on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .api import DeepInfoMax, LinearProbe, MLPProbe, MutualInformationEstimator, NeuralDependencyMeasure

__all__ = ["DeepInfoMax", "LinearProbe", "MLPProbe", "MutualInformationEstimator", "NeuralDependencyMeasure"]
