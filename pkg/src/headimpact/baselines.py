"""Classical kinematics-based impact-location estimators.

* opposite linear acceleration: the hit point is antipodal to the peak CoG
  acceleration direction;
* revised opposite: the same idea applied to acceleration, velocity or
  displacement, corrected by removing the component along the peak angular
  acceleration axis;
* matching force/torque: the head is a free rigid body and the contact point
  solves ``r x F = T`` on the sphere.

Inputs are gravity-compensated, anatomical-frame series.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DegenerateInputError
from .geometry import SPHERE_RADIUS_MM, ImpactLocation, to_location
from .kinematics import KinematicSeries, angular_acceleration

MIN_LIN_ACC = 1e-6  # m/s^2
MIN_ANG_ACC = 1e-6  # rad/s^2
MIN_FORCE_N = 1e-3


@dataclass(frozen=True)
class RigidBodyParams:
    """Hybrid III 50th head defaults; inertia in kg m^2 about the CoG, head frame."""

    mass: float = 4.54
    inertia: np.ndarray = field(default_factory=lambda: np.diag([0.0200, 0.0230, 0.0170]))
    sphere_radius: float = SPHERE_RADIUS_MM

    def __post_init__(self):
        inertia = np.array(self.inertia, dtype=float)
        object.__setattr__(self, "inertia", inertia)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError("inertia must be positive definite")


class LinearKind(str, enum.Enum):
    ACCELERATION = "acceleration"
    VELOCITY = "velocity"
    POSITION = "position"


@dataclass(frozen=True)
class Estimate:
    location: ImpactLocation
    force_peak_kN: float | None = None
    degenerate_correction: bool = False
    out_of_reach: bool = False


def peak_index(vec: np.ndarray) -> int:
    """Index of the largest magnitude in a (3, n) trace; earliest wins ties."""
    return int(np.argmax(np.linalg.norm(vec, axis=0)))


def _location_from_direction(u: np.ndarray, radius: float = SPHERE_RADIUS_MM) -> ImpactLocation:
    return to_location(radius * u / np.linalg.norm(u), radius)


def opposite_linear_acceleration(series: KinematicSeries) -> ImpactLocation:
    a = series.lin_acc
    a_peak = a[:, peak_index(a)]
    norm = np.linalg.norm(a_peak)
    if norm < MIN_LIN_ACC:
        raise DegenerateInputError(f"peak linear acceleration {norm:.3g} m/s^2 too small")
    return _location_from_direction(-a_peak / norm)


def linear_vector(series: KinematicSeries, kind: LinearKind) -> np.ndarray:
    """Acceleration, or its first/second cumulative trapezoidal integral from rest."""
    v = series.lin_acc
    for _ in range(list(LinearKind).index(LinearKind(kind))):
        v = cumulative_trapezoid(v, dx=series.dt, axis=1, initial=0.0)
    return v


def project_out(u: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Unit vector along the part of ``u`` orthogonal to unit ``n``."""
    w = u - (u @ n) * n
    return w / np.linalg.norm(w)


def revised_opposite(series: KinematicSeries, kind: LinearKind | str = LinearKind.ACCELERATION) -> Estimate:
    v_trace = linear_vector(series, LinearKind(kind))
    v = v_trace[:, peak_index(v_trace)]
    vnorm = np.linalg.norm(v)
    if vnorm < MIN_LIN_ACC:
        raise DegenerateInputError(f"peak {LinearKind(kind).value} magnitude {vnorm:.3g} too small")
    u = -v / vnorm

    alpha = angular_acceleration(series)
    alpha_peak = alpha[:, peak_index(alpha)]
    anorm = np.linalg.norm(alpha_peak)
    if anorm < MIN_ANG_ACC:
        return Estimate(_location_from_direction(u), degenerate_correction=True)
    n = alpha_peak / anorm
    w = u - (u @ n) * n
    if np.linalg.norm(w) < 1e-12:
        # u parallel to the rotation axis: no orthogonal direction to move to
        return Estimate(_location_from_direction(u), degenerate_correction=True)
    return Estimate(_location_from_direction(w))


def solve_contact_point(F: np.ndarray, T: np.ndarray, radius_m: float) -> tuple[np.ndarray, bool]:
    """Point r (m) on the sphere with ``r x F`` matching T and ``r . F < 0``.

    Only the part of T orthogonal to F can be produced by a point force; the
    axial part is ignored. Returns ``(r, out_of_reach)``; when the required
    moment arm exceeds the radius the nearest sphere point along the arm is
    returned and the flag is set.
    """
    F2 = F @ F
    arm = np.cross(F, T) / F2
    arm_norm = np.linalg.norm(arm)
    if arm_norm > radius_m:
        return arm * (radius_m / arm_norm), True
    lam = -np.sqrt(radius_m * radius_m - arm_norm * arm_norm)
    return arm + lam * F / np.sqrt(F2), False


def matching_force_torque(series: KinematicSeries, params: RigidBodyParams | None = None) -> Estimate:
    params = params or RigidBodyParams()
    a = series.lin_acc
    k = peak_index(a)
    F = params.mass * a[:, k]
    if np.linalg.norm(F) < MIN_FORCE_N:
        raise DegenerateInputError(f"peak force {np.linalg.norm(F):.3g} N too small")
    w = series.ang_vel[:, k]
    I = params.inertia
    T = I @ angular_acceleration(series)[:, k] + np.cross(w, I @ w)
    radius_m = params.sphere_radius / 1000.0
    r, out_of_reach = solve_contact_point(F, T, radius_m)
    loc = to_location(r * (params.sphere_radius / np.linalg.norm(r)), params.sphere_radius)
    return Estimate(loc, force_peak_kN=float(np.linalg.norm(F) / 1000.0), out_of_reach=out_of_reach)


BASELINE_METHODS = (
    "opposite_acceleration",
    "revised_acceleration",
    "revised_velocity",
    "revised_position",
    "matching_force_torque",
)


def estimate(method: str, series: KinematicSeries, params: RigidBodyParams | None = None) -> ImpactLocation:
    """Run a baseline by name and return its location."""
    if method == "opposite_acceleration":
        return opposite_linear_acceleration(series)
    if method.startswith("revised_"):
        return revised_opposite(series, LinearKind(method.removeprefix("revised_"))).location
    if method == "matching_force_torque":
        return matching_force_torque(series, params).location
    raise ValueError(f"unknown baseline method {method!r}")
