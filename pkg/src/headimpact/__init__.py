"""Head impact information retrieval from head kinematics.

Modules: ``kinematics`` (filtering, frames, features), ``geometry`` (impact
line and helmet regions), ``baselines`` (classical locators), ``surrogate``
(labeled-data simulator), ``model`` (numpy LSTM), ``evaluation`` (metrics
and experiment protocol) and ``cli``.
"""

__version__ = "0.1.0"
