"""Fixed-target sea ice forecasting with feature-engineered linear models
and macro random forests, evaluated with glide charts."""

__version__ = "0.1.0"
