"""Online neuroevolution of recurrent networks for streaming time series forecasting."""

from onenas.errors import ContractError, NumericError, OneNasError
from onenas.genome import CELL_KINDS, EdgeGene, Genome, NodeGene, seed_genome, validate

__all__ = [
    "CELL_KINDS",
    "ContractError",
    "EdgeGene",
    "Genome",
    "NodeGene",
    "NumericError",
    "OneNasError",
    "seed_genome",
    "validate",
]

__version__ = "0.1.0"
