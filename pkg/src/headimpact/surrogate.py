"""Lumped-parameter helmeted head-impact simulator and dataset I/O.

The head is a free 6-DOF rigid body held by translational and rotational
spring-dampers (the neck). The impactor is a point mass that travels along
the fixed global +x axis; its face pushes on a body-fixed point of the head,
the point where the impact line first enters the 135 mm sphere. Contact
force along +x is ``k*d**e + c*d_dot`` while the penetration ``d`` is
positive, clamped at zero. Gravity is ignored.

Because the contact acts on a material point and every other element is a
spring or damper, the system is passive: total mechanical energy never
increases (up to integration error).

The whole batch is integrated together with fixed-step RK4. All vector
algebra is written per component, so each impact's result does not depend
on which other impacts share its batch.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import RigidBodyParams
from .errors import NoIntersectionError, ParseError, SimulationDivergedError
from .geometry import (
    SPHERE_RADIUS_MM,
    HelmetRegion,
    ImpactLocation,
    ImpactSetup,
    classify_region,
    head_rotation,
    impact_line,
    sphere_intersection,
    to_location,
)
from .kinematics import (
    N_SAMPLES,
    Frame,
    KinematicSeries,
    mirror_series,
    quat_log,
    read_kinematics_csv,
    write_kinematics_csv,
    zero_phase_lowpass,
)

log = logging.getLogger(__name__)

HEAD_FORCE_FACTOR = 0.8


@dataclass(frozen=True)
class SurrogateConfig:
    impactor_mass: float = 14.0  # kg
    contact_stiffness: float = 3.0e5  # N/m**e
    contact_damping: float = 400.0  # N s/m
    contact_exponent: float = 1.5
    neck_translational_stiffness: float = 2.0e4  # N/m
    neck_translational_damping: float = 300.0  # N s/m
    neck_rotational_stiffness: float = 100.0  # N m/rad
    neck_rotational_damping: float = 2.0  # N m s/rad
    head_force_factor: float = HEAD_FORCE_FACTOR
    head: RigidBodyParams = field(default_factory=RigidBodyParams)
    integration_dt: float = 1e-4
    output_dt: float = 1e-3
    duration: float = 0.150

    def __post_init__(self):
        positive = (
            "impactor_mass", "contact_stiffness", "contact_damping", "contact_exponent",
            "neck_translational_stiffness", "neck_translational_damping",
            "neck_rotational_stiffness", "neck_rotational_damping", "integration_dt",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.head_force_factor <= 1:
            raise ValueError("head_force_factor must lie in (0, 1]")
        if self.integration_dt > self.output_dt / 2:
            raise ValueError("integration_dt must be <= output_dt / 2")
        if abs(self.output_dt - 1e-3) > 1e-15:
            raise ValueError("output_dt must be 1 ms")
        if self.duration + 1e-12 < (N_SAMPLES - 1) * self.output_dt:
            raise ValueError("duration too short for a 145-sample window")

    @property
    def steps_per_sample(self) -> int:
        k = round(self.output_dt / self.integration_dt)
        if abs(k * self.integration_dt - self.output_dt) > 1e-12:
            raise ValueError("output_dt must be an integer multiple of integration_dt")
        return k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head"] = {"mass": self.head.mass, "inertia": np.asarray(self.head.inertia).tolist(),
                     "sphere_radius": self.head.sphere_radius}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        d = dict(d)
        if "head" in d:
            d["head"] = RigidBodyParams(**d["head"])
        return cls(**d)


@dataclass(frozen=True)
class SimulatedImpact:
    setup: ImpactSetup
    series: KinematicSeries  # anatomical frame, filtered
    force_helmet: np.ndarray  # (145,) kN
    force_head: np.ndarray  # (145,) kN
    location: ImpactLocation
    region: HelmetRegion
    force_vector: np.ndarray | None = None  # (3, 145) kN on the helmet, head frame

    def mirrored(self) -> "SimulatedImpact":
        setup = self.setup.mirrored()
        loc = to_location(sphere_intersection(impact_line(setup)))
        fvec = None if self.force_vector is None else self.force_vector * np.array([1.0, -1.0, 1.0])[:, None]
        return SimulatedImpact(setup, mirror_series(self.series), self.force_helmet, self.force_head,
                               loc, classify_region(loc), fvec)


# ----------------------------------------------------------------------------
# Batched rigid-body algebra, per component (arrays have a leading batch axis)
# ----------------------------------------------------------------------------

def _mat(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return (
        (1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
        (2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
        (2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
    )


def _apply(R, v):
    return np.stack([R[i][0] * v[:, 0] + R[i][1] * v[:, 1] + R[i][2] * v[:, 2] for i in range(3)], axis=1)


def _apply_t(R, v):
    return np.stack([R[0][i] * v[:, 0] + R[1][i] * v[:, 1] + R[2][i] * v[:, 2] for i in range(3)], axis=1)


def _cross(a, b):
    return np.stack(
        [
            a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
        ],
        axis=1,
    )


def _const_apply(M, v):
    return np.stack([M[i, 0] * v[:, 0] + M[i, 1] * v[:, 1] + M[i, 2] * v[:, 2] for i in range(3)], axis=1)


def _qmul(p, q):
    pw, px, py, pz = p[:, 0], p[:, 1], p[:, 2], p[:, 3]
    qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=1,
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a proper rotation matrix."""
    w = 0.5 * np.sqrt(max(0.0, 1.0 + R[0, 0] + R[1, 1] + R[2, 2]))
    x = 0.5 * np.copysign(np.sqrt(max(0.0, 1.0 + R[0, 0] - R[1, 1] - R[2, 2])), R[2, 1] - R[1, 2])
    y = 0.5 * np.copysign(np.sqrt(max(0.0, 1.0 - R[0, 0] + R[1, 1] - R[2, 2])), R[0, 2] - R[2, 0])
    z = 0.5 * np.copysign(np.sqrt(max(0.0, 1.0 - R[0, 0] - R[1, 1] + R[2, 2])), R[1, 0] - R[0, 1])
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def setup_quaternion(setup: ImpactSetup) -> np.ndarray:
    """Initial head orientation as a quaternion, built from the yaw and pitch half-angles."""
    a, b = np.radians(setup.alpha) / 2, np.radians(setup.beta) / 2
    qz = np.array([[np.cos(a), 0.0, 0.0, np.sin(a)]])
    qy = np.array([[np.cos(b), 0.0, np.sin(b), 0.0]])
    return _qmul(qz, qy)[0]


# ----------------------------------------------------------------------------
# Simulation
# ----------------------------------------------------------------------------

@dataclass
class _State:
    x: np.ndarray  # (B, 3) head CoG position, m, global
    v: np.ndarray  # (B, 3)
    q: np.ndarray  # (B, 4) head -> global
    w: np.ndarray  # (B, 3) body-frame angular velocity
    s: np.ndarray  # (B,) impactor face position along global x
    u: np.ndarray  # (B,) impactor speed

    def axpy(self, h: float, d: "_State") -> "_State":
        return _State(self.x + h * d.x, self.v + h * d.v, self.q + h * d.q, self.w + h * d.w,
                      self.s + h * d.s, self.u + h * d.u)


class _Dynamics:
    def __init__(self, cfg: SurrogateConfig, r_body: np.ndarray, q0: np.ndarray):
        self.cfg = cfg
        self.r = r_body  # (B, 3) contact point in head frame, m
        self.q0_conj = q0 * np.array([1.0, -1.0, -1.0, -1.0])
        self.I = np.asarray(cfg.head.inertia, dtype=float)
        self.I_inv = np.linalg.inv(self.I)

    def contact_point_x(self, st: _State) -> np.ndarray:
        R = _mat(st.q)
        return st.x[:, 0] + R[0][0] * self.r[:, 0] + R[0][1] * self.r[:, 1] + R[0][2] * self.r[:, 2]

    def contact(self, st: _State, R):
        """Penetration, its rate and the clamped contact force magnitude (N)."""
        cfg = self.cfg
        px = st.x[:, 0] + R[0][0] * self.r[:, 0] + R[0][1] * self.r[:, 1] + R[0][2] * self.r[:, 2]
        wr = _cross(st.w, self.r)
        vpx = st.v[:, 0] + R[0][0] * wr[:, 0] + R[0][1] * wr[:, 1] + R[0][2] * wr[:, 2]
        delta = st.s - px
        ddelta = st.u - vpx
        pos = delta > 0.0
        dpos = np.where(pos, delta, 0.0)
        f = np.where(pos, cfg.contact_stiffness * dpos**cfg.contact_exponent + cfg.contact_damping * ddelta, 0.0)
        return delta, ddelta, np.maximum(f, 0.0)

    def neck_rotation(self, q):
        return quat_log(_qmul(np.broadcast_to(self.q0_conj, q.shape), q))

    def derivative(self, st: _State):
        cfg = self.cfg
        R = _mat(st.q)
        _, _, f = self.contact(st, R)
        m = cfg.head.mass
        force = -cfg.neck_translational_stiffness * st.x - cfg.neck_translational_damping * st.v
        force[:, 0] += f
        acc = force / m
        # contact force along global +x, expressed in the head frame
        f_body = np.stack([R[0][0] * f, R[0][1] * f, R[0][2] * f], axis=1)
        phi = self.neck_rotation(st.q)
        torque = _cross(self.r, f_body) - cfg.neck_rotational_stiffness * phi - cfg.neck_rotational_damping * st.w
        Iw = _const_apply(self.I, st.w)
        wdot = _const_apply(self.I_inv, torque - _cross(st.w, Iw))
        wq = np.concatenate([np.zeros((len(st.w), 1)), st.w], axis=1)
        qdot = 0.5 * _qmul(st.q, wq)
        d = _State(st.v, acc, qdot, wdot, st.u, -f / cfg.impactor_mass)
        return d, acc, f, R

    def energy(self, st: _State) -> np.ndarray:
        cfg = self.cfg
        R = _mat(st.q)
        delta, _, _ = self.contact(st, R)
        e = cfg.contact_exponent
        stored = cfg.contact_stiffness * np.where(delta > 0, delta, 0.0) ** (e + 1) / (e + 1)
        phi = self.neck_rotation(st.q)
        Iw = _const_apply(self.I, st.w)
        return (
            0.5 * cfg.impactor_mass * st.u**2
            + 0.5 * cfg.head.mass * np.sum(st.v**2, axis=1)
            + 0.5 * np.sum(st.w * Iw, axis=1)
            + 0.5 * cfg.neck_translational_stiffness * np.sum(st.x**2, axis=1)
            + 0.5 * cfg.neck_rotational_stiffness * np.sum(phi**2, axis=1)
            + stored
        )


@dataclass
class RawRun:
    """Unfiltered simulator output sampled at 1 ms, (B, 3, n) / (B, n)."""

    lin_acc: np.ndarray
    ang_vel: np.ndarray
    force: np.ndarray  # N, contact force magnitude
    force_vector: np.ndarray  # (B, 3, n) N, head frame
    energy: np.ndarray
    penetration: np.ndarray  # m


def _initial_conditions(setups, cfg: SurrogateConfig):
    B = len(setups)
    r_body = np.empty((B, 3))
    q0 = np.empty((B, 4))
    for i, setup in enumerate(setups):
        hit = sphere_intersection(impact_line(setup), SPHERE_RADIUS_MM)
        if hit is None:
            raise NoIntersectionError(f"impact line of {setup} misses the helmet sphere")
        r_body[i] = hit / 1000.0
        q0[i] = setup_quaternion(setup)
    return r_body, q0


def integrate(setups, cfg: SurrogateConfig, n_samples: int = N_SAMPLES) -> RawRun:
    """Integrate a batch of impacts and sample the first ``n_samples`` ms."""
    setups = list(setups)
    B = len(setups)
    r_body, q0 = _initial_conditions(setups, cfg)
    dyn = _Dynamics(cfg, r_body, q0)
    zeros3 = np.zeros((B, 3))
    st = _State(zeros3.copy(), zeros3.copy(), q0.copy(), zeros3.copy(), np.zeros(B),
                np.array([s.speed for s in setups], dtype=float))
    # impactor face starts touching the hit point
    st.s = dyn.contact_point_x(st)

    h = cfg.integration_dt
    k_sub = cfg.steps_per_sample
    n_steps = int(round(cfg.duration / h))
    lin_acc = np.zeros((B, 3, n_samples))
    ang_vel = np.zeros((B, 3, n_samples))
    force = np.zeros((B, n_samples))
    fvec = np.zeros((B, 3, n_samples))
    energy = np.zeros((B, n_samples))
    pen = np.zeros((B, n_samples))

    def record(j, st):
        d, acc, f, R = dyn.derivative(st)
        lin_acc[:, :, j] = _apply_t(R, acc)
        ang_vel[:, :, j] = st.w
        force[:, j] = f
        fvec[:, :, j] = np.stack([R[0][0] * f, R[0][1] * f, R[0][2] * f], axis=1)
        energy[:, j] = dyn.energy(st)
        pen[:, j] = dyn.contact(st, R)[0]

    record(0, st)
    for step in range(1, n_steps + 1):
        k1 = dyn.derivative(st)[0]
        k2 = dyn.derivative(st.axpy(h / 2, k1))[0]
        k3 = dyn.derivative(st.axpy(h / 2, k2))[0]
        k4 = dyn.derivative(st.axpy(h, k3))[0]
        st = _State(
            st.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x),
            st.v + h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v),
            st.q + h / 6 * (k1.q + 2 * k2.q + 2 * k3.q + k4.q),
            st.w + h / 6 * (k1.w + 2 * k2.w + 2 * k3.w + k4.w),
            st.s + h / 6 * (k1.s + 2 * k2.s + 2 * k3.s + k4.s),
            st.u + h / 6 * (k1.u + 2 * k2.u + 2 * k3.u + k4.u),
        )
        st.q = st.q / np.sqrt(np.sum(st.q**2, axis=1, keepdims=True))
        if step % k_sub == 0:
            j = step // k_sub
            if j >= n_samples:
                break
            if not (np.all(np.isfinite(st.x)) and np.all(np.isfinite(st.w)) and np.all(np.isfinite(st.u))):
                bad = [setups[i] for i in range(B) if not np.all(np.isfinite(st.x[i]))]
                raise SimulationDivergedError(f"state became non-finite at t={step * h:.4f} s for {bad[:3]}")
            record(j, st)
    return RawRun(lin_acc, ang_vel, force, fvec, energy, pen)


def simulate_batch(setups, config: SurrogateConfig | None = None) -> list[SimulatedImpact]:
    cfg = config or SurrogateConfig()
    setups = list(setups)
    if not setups:
        return []
    raw = integrate(setups, cfg)
    lin = zero_phase_lowpass(raw.lin_acc)
    ang = zero_phase_lowpass(raw.ang_vel)
    out = []
    for i, setup in enumerate(setups):
        loc = to_location(sphere_intersection(impact_line(setup)))
        f_helmet = raw.force[i] / 1000.0
        out.append(
            SimulatedImpact(
                setup=setup,
                series=KinematicSeries(lin[i], ang[i], Frame.ANATOMICAL),
                force_helmet=f_helmet,
                force_head=cfg.head_force_factor * f_helmet,
                location=loc,
                region=classify_region(loc),
                force_vector=raw.force_vector[i] / 1000.0,
            )
        )
    return out


def simulate_impact(setup: ImpactSetup, config: SurrogateConfig | None = None) -> SimulatedImpact:
    return simulate_batch([setup], config)[0]


# ----------------------------------------------------------------------------
# Parameter grids
# ----------------------------------------------------------------------------

PARAM_NAMES = ("alpha", "beta", "Y", "Z", "speed")
PAPER_RANGES = {"alpha": (10.0, 180.0), "beta": (-45.0, 70.0), "Y": (-120.0, 120.0), "Z": (-120.0, 120.0),
                "speed": (3.0, 10.0)}
PAPER_GRID = {
    "mode": "grid",
    "alpha": {"min": 10.0, "max": 180.0, "n": 8},
    "beta": {"min": -45.0, "max": 70.0, "n": 8},
    "Y": {"min": -120.0, "max": 120.0, "n": 5},
    "Z": {"min": -120.0, "max": 120.0, "n": 5},
    "speed": {"min": 3.0, "max": 10.0, "n": 5},
}


def _axis_values(spec) -> list[float]:
    if isinstance(spec, dict):
        if spec.get("n", 1) == 1:
            return [float(spec["min"])]
        return [float(v) for v in np.linspace(spec["min"], spec["max"], int(spec["n"]))]
    if isinstance(spec, (list, tuple)):
        return [float(v) for v in spec]
    return [float(spec)]


def expand_grid(grid: dict, seed: int = 0) -> list[ImpactSetup]:
    """Setups for a grid spec.

    ``{"mode": "grid", <param>: [values] | {"min", "max", "n"} | value}`` is a
    Cartesian product in (alpha, beta, Y, Z, speed) order. ``{"mode":
    "random", "n": N, <param>: [lo, hi]}`` draws N setups uniformly with
    ``seed``; missing ranges default to the dataset ranges.
    """
    mode = grid.get("mode", "grid")
    if mode == "grid":
        axes = [_axis_values(grid[p]) for p in PARAM_NAMES]
        return [ImpactSetup(*vals) for vals in np.array(np.meshgrid(*axes, indexing="ij")).reshape(5, -1).T.tolist()]
    if mode == "random":
        rng = np.random.default_rng(seed)
        n = int(grid["n"])
        cols = []
        for p in PARAM_NAMES:
            lo, hi = grid.get(p, PAPER_RANGES[p])
            cols.append(rng.uniform(lo, hi, size=n))
        return [ImpactSetup(*map(float, row)) for row in np.column_stack(cols)]
    raise ValueError(f"unknown grid mode {mode!r}")


def hits_sphere(setup: ImpactSetup) -> bool:
    return sphere_intersection(impact_line(setup)) is not None


# ----------------------------------------------------------------------------
# Dataset files
# ----------------------------------------------------------------------------

MANIFEST_COLUMNS = (
    "id", "source_id", "mirrored", "alpha", "beta", "Y", "Z", "speed", "theta", "eta", "region",
    "peak_force_helmet_kN", "peak_force_head_kN", "kinematics_file", "force_file", "metadata_file",
)
FORCE_HEADER = ["t_ms", "f_helmet_kN", "f_head_kN"]
FORCE_VECTOR_HEADER = ["t_ms", "fx_kN", "fy_kN", "fz_kN"]


def _fmt(x) -> str:
    return repr(float(x))


def write_force_csv(impact: SimulatedImpact, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORCE_HEADER)
        for k in range(N_SAMPLES):
            w.writerow([k, _fmt(impact.force_helmet[k]), _fmt(impact.force_head[k])])


def read_force_csv(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0] != FORCE_HEADER:
        raise ParseError(f"{path}: header must be {','.join(FORCE_HEADER)}")
    if len(rows) - 1 != N_SAMPLES:
        raise ParseError(f"{path}: expected {N_SAMPLES} data rows, found {len(rows) - 1}")
    vals = np.empty((N_SAMPLES, 2))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ParseError(f"{path}: row {i}: expected 3 columns, found {len(row)}")
        try:
            vals[i - 2] = [float(row[1]), float(row[2])]
        except ValueError as exc:
            raise ParseError(f"{path}: row {i}: {exc}") from None
        if not np.all(np.isfinite(vals[i - 2])) or np.any(vals[i - 2] < 0):
            raise ParseError(f"{path}: row {i}: force must be finite and nonnegative")
    return vals[:, 0], vals[:, 1]


def write_force_vector_csv(fvec: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORCE_VECTOR_HEADER)
        for k in range(N_SAMPLES):
            w.writerow([k] + [_fmt(v) for v in fvec[:, k]])


def read_force_vector_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0] != FORCE_VECTOR_HEADER or len(rows) - 1 != N_SAMPLES:
        raise ParseError(f"{path}: malformed force vector file")
    return np.array([[float(c) for c in r[1:]] for r in rows[1:]]).T


def _metadata(impact: SimulatedImpact, impact_id: str, source_id: str, mirrored: bool) -> dict:
    return {
        "id": impact_id,
        "source_id": source_id,
        "mirrored": mirrored,
        "setup": asdict(impact.setup),
        "location": {"theta_deg": impact.location.theta, "eta_deg": impact.location.eta,
                     "region": impact.region.value},
        "peak_force_helmet_kN": float(np.max(impact.force_helmet)),
        "peak_force_head_kN": float(np.max(impact.force_head)),
    }


def _write_impact(impact: SimulatedImpact, impact_id: str, source_id: str, mirrored: bool, out_dir: Path) -> dict:
    sub = out_dir / "impacts"
    kin = f"impacts/{impact_id}_kinematics.csv"
    frc = f"impacts/{impact_id}_force.csv"
    meta = f"impacts/{impact_id}.json"
    write_kinematics_csv(impact.series, out_dir / kin)
    write_force_csv(impact, out_dir / frc)
    if impact.force_vector is not None:
        write_force_vector_csv(impact.force_vector, sub / f"{impact_id}_force_vector.csv")
    (out_dir / meta).write_text(json.dumps(_metadata(impact, impact_id, source_id, mirrored), indent=1) + "\n")
    s = impact.setup
    return {
        "id": impact_id, "source_id": source_id, "mirrored": int(mirrored),
        "alpha": _fmt(s.alpha), "beta": _fmt(s.beta), "Y": _fmt(s.Y), "Z": _fmt(s.Z), "speed": _fmt(s.speed),
        "theta": _fmt(impact.location.theta), "eta": _fmt(impact.location.eta), "region": impact.region.value,
        "peak_force_helmet_kN": _fmt(np.max(impact.force_helmet)),
        "peak_force_head_kN": _fmt(np.max(impact.force_head)),
        "kinematics_file": kin, "force_file": frc, "metadata_file": meta,
    }


def _simulate_chunk(args):
    setups, cfg_dict = args
    return simulate_batch(setups, SurrogateConfig.from_dict(cfg_dict))


def generate_dataset(grid: dict, config: SurrogateConfig | None, out_dir, seed: int = 0, workers: int = 1,
                     chunk_size: int = 200) -> Path:
    """Simulate every grid point, then append a mirrored copy of each; returns the manifest path.

    Grid points whose impact line misses the sphere are skipped with a log
    message. Output is ordered by grid index and independent of ``workers``.
    """
    cfg = config or SurrogateConfig()
    out_dir = Path(out_dir)
    (out_dir / "impacts").mkdir(parents=True, exist_ok=True)
    setups = []
    for idx, setup in enumerate(expand_grid(grid, seed)):
        if hits_sphere(setup):
            setups.append(setup)
        else:
            log.warning("grid point %d skipped: impact line misses the sphere (%s)", idx, setup)
    chunks = [setups[i : i + chunk_size] for i in range(0, len(setups), chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_chunk, [(c, cfg.to_dict()) for c in chunks]))
    else:
        results = [simulate_batch(c, cfg) for c in chunks]
    impacts = [imp for chunk in results for imp in chunk]

    n = len(impacts)
    width = max(5, len(str(2 * n)))
    rows = []
    for i, imp in enumerate(impacts):
        rows.append(_write_impact(imp, f"{i:0{width}d}", f"{i:0{width}d}", False, out_dir))
    for i, imp in enumerate(impacts):
        rows.append(_write_impact(imp.mirrored(), f"{n + i:0{width}d}", f"{i:0{width}d}", True, out_dir))

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out_dir / "dataset.json").write_text(
        json.dumps({"schema": 1, "grid": grid, "seed": seed, "config": cfg.to_dict(), "n_impacts": len(rows),
                    "n_skipped": len(expand_grid(grid, seed)) - n}, indent=1, sort_keys=True) + "\n"
    )
    log.info("wrote %d impacts (%d mirrored) to %s", len(rows), n, out_dir)
    return manifest


@dataclass(frozen=True)
class DatasetRecord:
    impact_id: str
    source_id: str
    mirrored: bool
    impact: SimulatedImpact


def load_records(manifest) -> list[DatasetRecord]:
    manifest = Path(manifest)
    if not manifest.exists():
        raise ParseError(f"{manifest}: manifest not found")
    base = manifest.parent
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != MANIFEST_COLUMNS:
            raise ParseError(f"{manifest}: unexpected manifest header")
        records = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ParseError(f"{manifest}: row {row_no}: expected {len(MANIFEST_COLUMNS)} columns, found {len(row)}")
            rec = dict(zip(MANIFEST_COLUMNS, row))
            try:
                nums = {k: float(rec[k]) for k in ("alpha", "beta", "Y", "Z", "speed", "theta", "eta")}
            except ValueError as exc:
                raise ParseError(f"{manifest}: row {row_no}: {exc}") from None
            if not all(np.isfinite(v) for v in nums.values()):
                raise ParseError(f"{manifest}: row {row_no}: non-finite value")
            try:
                region = HelmetRegion(rec["region"])
            except ValueError:
                raise ParseError(f"{manifest}: row {row_no}: unknown region {rec['region']!r}") from None
            series = read_kinematics_csv(base / rec["kinematics_file"])
            f_helmet, f_head = read_force_csv(base / rec["force_file"])
            fvec_path = base / "impacts" / f"{rec['id']}_force_vector.csv"
            fvec = read_force_vector_csv(fvec_path) if fvec_path.exists() else None
            setup = ImpactSetup(nums["alpha"], nums["beta"], nums["Y"], nums["Z"], nums["speed"])
            impact = SimulatedImpact(setup, series, f_helmet, f_head, ImpactLocation(nums["theta"], nums["eta"]),
                                     region, fvec)
            records.append(DatasetRecord(rec["id"], rec["source_id"], bool(int(rec["mirrored"])), impact))
    return records


def load_dataset(manifest) -> list[SimulatedImpact]:
    return [r.impact for r in load_records(manifest)]
