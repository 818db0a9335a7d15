"""fxstack: highest-high price forecasting toolkit.

Pipeline: OHLC ingestion -> indicator and rolling-ARMA features ->
leakage-free windowing -> importance-recap feature selection -> five base
learners -> exhaustive two-layer stacking search.
"""

__version__ = "0.1.0"
