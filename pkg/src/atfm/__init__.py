"""Attentive traffic flow machines: citywide crowd-flow forecasting on a numpy autodiff core."""

__version__ = "0.1.0"
