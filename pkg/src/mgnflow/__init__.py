"""Graph-network surrogates (MGN-LSTM and MGN) for two-phase flow on faulted 2D meshes.

Pipeline: :mod:`mesh` and :mod:`geomodel` build scenarios, :mod:`simulator`
produces ground truth, :mod:`graph` turns it into normalized graph samples,
:mod:`model` / :mod:`training` fit the surrogate on the :mod:`autodiff` core,
and :mod:`metrics` / :mod:`evaluation` score rollouts.
"""

__version__ = "0.1.0"
