"""Impact-line geometry on the 135 mm helmet sphere and the five helmet regions.

Convention (shared with the surrogate simulator): the impactor travels along
the global +x axis. The head is yawed by alpha about z, then pitched by beta
about y, so head-frame vectors map to global by ``R = Rz(alpha) @ Ry(beta)``.
Translating the head by (Y, Z) shifts the impact line to (t, -Y, -Z)
relative to the head center. Under this convention alpha = 180, beta = 0
drives the impactor straight into the face.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoIntersectionError

SPHERE_RADIUS_MM = 135.0
TOP_ETA_DEG = -34.0
NORM_TOL_MM = 1e-6


@dataclass(frozen=True)
class ImpactSetup:
    """alpha, beta in degrees; Y, Z in mm; speed in m/s."""

    alpha: float
    beta: float
    Y: float
    Z: float
    speed: float

    def mirrored(self) -> "ImpactSetup":
        return replace(self, alpha=-self.alpha, Y=-self.Y)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.Y, self.Z, self.speed])


@dataclass(frozen=True)
class ImpactLine:
    point: np.ndarray  # mm, head frame
    direction: np.ndarray  # unit, head frame, impactor -> head


class HelmetRegion(str, enum.Enum):
    FACEMASK = "Facemask"
    TOP = "Top"
    BACK = "Back"
    LEFT = "Left"
    RIGHT = "Right"

    def mirrored(self) -> "HelmetRegion":
        return {HelmetRegion.LEFT: HelmetRegion.RIGHT, HelmetRegion.RIGHT: HelmetRegion.LEFT}.get(self, self)


REGIONS = tuple(HelmetRegion)


@dataclass(frozen=True)
class ImpactLocation:
    theta: float  # deg, (-180, 180], azimuth from +x toward +y
    eta: float  # deg, [-90, 90], positive toward +z (downward)
    radius: float = SPHERE_RADIUS_MM

    def point(self) -> np.ndarray:
        th, et = np.radians(self.theta), np.radians(self.eta)
        return self.radius * np.array([np.cos(et) * np.cos(th), np.cos(et) * np.sin(th), np.sin(et)])

    def mirrored(self) -> "ImpactLocation":
        theta = -self.theta if self.theta != 180.0 else 180.0
        return replace(self, theta=theta)


def rot_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def head_rotation(alpha: float, beta: float) -> np.ndarray:
    """Head-frame to global rotation matrix."""
    return rot_z(alpha) @ rot_y(beta)


def impact_line(setup: ImpactSetup) -> ImpactLine:
    R = head_rotation(setup.alpha, setup.beta)
    point = R.T @ np.array([0.0, -setup.Y, -setup.Z])
    direction = R.T @ np.array([1.0, 0.0, 0.0])
    return ImpactLine(point, direction / np.linalg.norm(direction))


def sphere_intersection(line: ImpactLine, radius: float = SPHERE_RADIUS_MM):
    """First point where the line enters the sphere, or None on a miss."""
    p, d = line.point, line.direction
    pd = float(p @ d)
    disc = pd * pd - (float(p @ p) - radius * radius)
    if disc < 0.0:
        return None
    point = p + (-pd - np.sqrt(disc)) * d
    return point * (radius / np.linalg.norm(point))


def closest_point_on_sphere(line: ImpactLine, radius: float = SPHERE_RADIUS_MM) -> np.ndarray:
    """Sphere point nearest to a line that misses it (projection of the foot of the perpendicular)."""
    p, d = line.point, line.direction
    foot = p - (p @ d) * d
    n = np.linalg.norm(foot)
    if n == 0.0:
        return -radius * d
    return foot * (radius / n)


def to_location(point, radius: float = SPHERE_RADIUS_MM) -> ImpactLocation:
    point = np.asarray(point, dtype=float)
    norm = np.linalg.norm(point)
    if abs(norm - radius) > NORM_TOL_MM:
        raise ValueError(f"point norm {norm:.9f} mm is not on the {radius} mm sphere")
    theta = float(np.degrees(np.arctan2(point[1], point[0])))
    if theta == -180.0:
        theta = 180.0
    eta = float(np.degrees(np.arcsin(np.clip(point[2] / norm, -1.0, 1.0))))
    return ImpactLocation(theta, eta, radius)


def classify_region(loc: ImpactLocation) -> HelmetRegion:
    """Region rule with boundaries closed on the lower edge."""
    if loc.eta < TOP_ETA_DEG:
        return HelmetRegion.TOP
    th = loc.theta
    if -45.0 <= th < 45.0:
        return HelmetRegion.FACEMASK
    if 45.0 <= th < 135.0:
        return HelmetRegion.RIGHT
    if -135.0 <= th < -45.0:
        return HelmetRegion.LEFT
    return HelmetRegion.BACK


def setup_to_location(setup: ImpactSetup) -> ImpactLocation:
    point = sphere_intersection(impact_line(setup))
    if point is None:
        raise NoIntersectionError(f"impact line of {setup} misses the {SPHERE_RADIUS_MM} mm sphere")
    return to_location(point)


def setup_to_region(setup: ImpactSetup) -> HelmetRegion:
    return classify_region(setup_to_location(setup))


def impact_direction(loc: ImpactLocation) -> np.ndarray:
    """Unit vector from the hit point toward the head center."""
    return -loc.point() / loc.radius


def location_to_dict(loc: ImpactLocation) -> dict:
    return {"theta_deg": loc.theta, "eta_deg": loc.eta, "region": classify_region(loc).value}
