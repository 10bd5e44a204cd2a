"""Train CIFAR-scale classifiers and serve them over the probability-oracle
HTTP protocol (``GET /info`` + ``POST /predict``)."""

from .architectures import ARCHITECTURES, build_model
from .modelfile import ServedModel, load_model, save_model
from .server import OracleServer, serve

__all__ = [
    "ARCHITECTURES",
    "build_model",
    "ServedModel",
    "load_model",
    "save_model",
    "OracleServer",
    "serve",
]
