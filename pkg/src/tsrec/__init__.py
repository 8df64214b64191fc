"""Forecasting-model recommendation over time-series panels.

Series are turned into visibility graphs and embedded, combined with
recurrent sequential embeddings and an entity relation graph, and fed to a
relation-strength network that predicts both the next value and the best
forecasting method for each series.
"""

from tsrec.errors import ConfigError, DataError, NumericalError, TsrecError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "TsrecError", "__version__"]
