"""Bayesian VARs with stochastic volatility: samplers and marginal-likelihood estimators."""
