"""CPD-Net: crisp edge detection with cycle pixel difference convolutions."""
from .model import BackboneConfig, CpdNetModel, build_model
from .tensor import Parameter, Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["BackboneConfig", "CpdNetModel", "Parameter", "Tensor", "build_model", "no_grad", "__version__"]
