"""EMG-driven wrist dynamics with a physics-informed surrogate.

Modules
-------
muscle      activation mapping and rigid-tendon Hill-type muscle model
joint       geometry, torque, equation of motion and an RK4 simulator
autodiff    reverse-mode tape, second-order time tangents, gradient checks
network     fully connected surrogate with angle and force heads
training    physics-informed losses, bounded parameters, Adam, identification
data        synthetic trials, sEMG preprocessing, trial files
evaluation  RMSE / R^2, comparison tables, report files
config      ``key = value`` configuration
cli         the ``myodyn`` command
"""
from .autodiff import DomainError
from .muscle import MuscleConstants, MuscleKinematics, MuscleParams, activation

__version__ = "0.1.0"

__all__ = ["DomainError", "MuscleConstants", "MuscleKinematics", "MuscleParams", "activation", "__version__"]
