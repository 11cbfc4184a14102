"""Head kinematics preprocessing: filtering, frame transforms and the 48-channel feature tensor.

Axis convention of the anatomical (head) frame: x posterior->anterior,
y left->right, z top->bottom. All series are 145 samples at 1 kHz.

Quaternions are stored as ``(..., 4)`` arrays in ``(w, x, y, z)`` order and
map head-frame vectors to the global frame: ``v_global = q v_head q*``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import InvalidStateError, ParseError

N_SAMPLES = 145
DT = 0.001
FS = 1000.0
CUTOFF_HZ = 300.0
FILTER_ORDER = 2
PAD_LEN = 3 * FILTER_ORDER
MIN_FILTER_LENGTH = 10
SPHERICAL_EPS = 1e-12
STD_EPS = 1e-12

KINEMATICS_HEADER = ["t_ms", "ax", "ay", "az", "wx", "wy", "wz"]


class Frame(str, enum.Enum):
    ANATOMICAL = "anatomical"
    GLOBAL = "global"


@dataclass(frozen=True)
class KinematicSeries:
    """Tri-axial linear acceleration (m/s^2) and angular velocity (rad/s), shape (3, 145)."""

    lin_acc: np.ndarray
    ang_vel: np.ndarray
    frame: Frame = Frame.ANATOMICAL
    dt: float = DT

    def __post_init__(self):
        lin_acc = np.array(self.lin_acc, dtype=float)
        ang_vel = np.array(self.ang_vel, dtype=float)
        for name, arr in (("lin_acc", lin_acc), ("ang_vel", ang_vel)):
            if arr.shape != (3, N_SAMPLES):
                raise ValueError(f"{name} must have shape (3, {N_SAMPLES}), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.dt != DT:
            raise ValueError(f"dt must be {DT} s, got {self.dt}")
        lin_acc.flags.writeable = False
        ang_vel.flags.writeable = False
        object.__setattr__(self, "lin_acc", lin_acc)
        object.__setattr__(self, "ang_vel", ang_vel)
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def n_samples(self) -> int:
        return self.lin_acc.shape[1]

    @property
    def t_ms(self) -> np.ndarray:
        return np.arange(self.n_samples)

    @classmethod
    def zeros(cls, frame: Frame = Frame.ANATOMICAL) -> "KinematicSeries":
        return cls(np.zeros((3, N_SAMPLES)), np.zeros((3, N_SAMPLES)), frame)


# ----------------------------------------------------------------------------
# Filtering and differentiation
# ----------------------------------------------------------------------------

def filter_coefficients(cutoff_hz: float = CUTOFF_HZ, fs: float = FS) -> tuple[np.ndarray, np.ndarray]:
    """Second-order Butterworth low-pass ``(b, a)``.

    At 300 Hz / 1 kHz: b = [0.391336, 0.782672, 0.391336], a = [1, 0.369527, 0.195816].
    """
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={fs / 2} Hz)")
    return signal.butter(FILTER_ORDER, cutoff_hz, btype="low", fs=fs)


def zero_phase_lowpass(x, cutoff_hz: float = CUTOFF_HZ, fs: float = FS) -> np.ndarray:
    """Zero-phase low-pass along the last axis.

    The filter runs forward-backward with odd reflective padding of
    ``3 * order`` samples. The forward-backward and backward-forward passes are
    averaged so the result commutes exactly with time reversal; both passes
    have magnitude response ``|H(f)|**2`` away from the edges.
    """
    x = np.asarray(x, dtype=float)
    b, a = filter_coefficients(cutoff_hz, fs)
    if x.shape[-1] < MIN_FILTER_LENGTH:
        raise ValueError(f"signal length {x.shape[-1]} too short for edge padding (need >= {MIN_FILTER_LENGTH})")
    fwd = signal.filtfilt(b, a, x, axis=-1, padtype="odd", padlen=PAD_LEN)
    rev = signal.filtfilt(b, a, x[..., ::-1], axis=-1, padtype="odd", padlen=PAD_LEN)[..., ::-1]
    return 0.5 * (fwd + rev)


def filter_series(series: KinematicSeries, cutoff_hz: float = CUTOFF_HZ) -> KinematicSeries:
    return replace(
        series,
        lin_acc=zero_phase_lowpass(series.lin_acc, cutoff_hz),
        ang_vel=zero_phase_lowpass(series.ang_vel, cutoff_hz),
    )


def differentiate(x: np.ndarray, dt: float = DT) -> np.ndarray:
    """Central differences inside, one-sided first differences at both ends."""
    return np.gradient(np.asarray(x, dtype=float), dt, axis=-1, edge_order=1)


def angular_acceleration(series: KinematicSeries) -> np.ndarray:
    return differentiate(series.ang_vel, series.dt)


# ----------------------------------------------------------------------------
# Quaternions
# ----------------------------------------------------------------------------

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle, rad)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x/2)/x, with its series for tiny angles
    small = angle < 1e-8
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), k * rotvec], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion, shortest arc (angle in [0, pi])."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    k = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return k * v


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v`` (..., 3) by quaternions ``q`` (..., 4)."""
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=float))


def integrate_orientation(ang_vel: np.ndarray, dt: float = DT) -> np.ndarray:
    """Head orientation history from body-frame angular velocity (3, n).

    Starts at identity. Each step applies ``q[k+1] = q[k] * exp(dt/2 * w_mid)``
    with ``w_mid`` the mean of the two bracketing samples, which is exact
    for constant angular velocity. Returns (n, 4) unit quaternions.
    """
    w = np.asarray(ang_vel, dtype=float)
    n = w.shape[1]
    increments = quat_exp(0.5 * (w[:, :-1] + w[:, 1:]).T * dt)
    q = np.empty((n, 4))
    q[0] = IDENTITY_QUAT
    for k in range(n - 1):
        q[k + 1] = quat_normalize(quat_mul(q[k], increments[k]))
    return q


def to_global(series: KinematicSeries, q_seq: np.ndarray) -> KinematicSeries:
    if series.frame is not Frame.ANATOMICAL:
        raise InvalidStateError(f"series is already in the {series.frame.value} frame")
    q_seq = np.asarray(q_seq, dtype=float)
    if q_seq.shape != (series.n_samples, 4):
        raise ValueError(f"expected quaternion sequence of shape ({series.n_samples}, 4), got {q_seq.shape}")
    R = quat_to_matrix(q_seq)
    return KinematicSeries(
        lin_acc=np.einsum("nij,jn->in", R, series.lin_acc),
        ang_vel=np.einsum("nij,jn->in", R, series.ang_vel),
        frame=Frame.GLOBAL,
    )


def to_spherical_channels(vec: np.ndarray) -> np.ndarray:
    """(3, n) Cartesian -> (3, n) rows of (rho, azimuth, elevation); angles are 0 where rho < 1e-12."""
    vec = np.asarray(vec, dtype=float)
    rho = np.linalg.norm(vec, axis=0)
    ok = rho >= SPHERICAL_EPS
    azimuth = np.where(ok, np.arctan2(vec[1], vec[0]), 0.0)
    # atan2 gives (-pi, pi]; map an exact -pi to +pi
    azimuth = np.where(azimuth == -np.pi, np.pi, azimuth)
    # atan2 stays well conditioned near the poles, unlike arcsin(z / rho)
    elevation = np.where(ok, np.arctan2(vec[2], np.hypot(vec[0], vec[1])), 0.0)
    return np.stack([rho, azimuth, elevation])


def from_spherical_channels(sph: np.ndarray) -> np.ndarray:
    rho, az, el = np.asarray(sph, dtype=float)
    return np.stack([rho * np.cos(el) * np.cos(az), rho * np.cos(el) * np.sin(az), rho * np.sin(el)])


# ----------------------------------------------------------------------------
# Feature tensor
# ----------------------------------------------------------------------------

FEATURE_FRAMES = ("global", "global_spherical", "local", "local_spherical")
FEATURE_QUANTITIES = ("ang_vel", "ang_acc", "lin_acc")
CARTESIAN_COMPONENTS = ("x", "y", "z", "mag")
SPHERICAL_COMPONENTS = ("rho", "azimuth", "elevation", "mag")


def _channel_layout() -> tuple[str, ...]:
    names = []
    for frame in FEATURE_FRAMES:
        comps = SPHERICAL_COMPONENTS if frame.endswith("spherical") else CARTESIAN_COMPONENTS
        for quantity in FEATURE_QUANTITIES:
            names.extend(f"{frame}.{quantity}.{c}" for c in comps)
    return tuple(names)


CHANNEL_LAYOUT = _channel_layout()
N_CHANNELS = len(CHANNEL_LAYOUT)
assert N_CHANNELS == 48


@dataclass(frozen=True)
class FeatureTensor:
    data: np.ndarray  # (145, 48)
    channel_layout: tuple[str, ...] = field(default=CHANNEL_LAYOUT)

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.shape != (N_SAMPLES, N_CHANNELS):
            raise ValueError(f"feature tensor must be ({N_SAMPLES}, {N_CHANNELS}), got {data.shape}")
        if tuple(self.channel_layout) != CHANNEL_LAYOUT:
            raise ValueError("unexpected channel layout")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_layout", tuple(self.channel_layout))


def _cartesian_block(vec: np.ndarray) -> np.ndarray:
    return np.vstack([vec, np.linalg.norm(vec, axis=0)])


def _spherical_block(vec: np.ndarray) -> np.ndarray:
    sph = to_spherical_channels(vec)
    return np.vstack([sph, sph[:1]])


def build_features(series: KinematicSeries) -> FeatureTensor:
    """Assemble the (145, 48) tensor in ``CHANNEL_LAYOUT`` order.

    Global angular acceleration is the body-frame derivative rotated per
    sample; for a rigid body this equals the derivative of the global
    angular velocity.
    """
    if series.frame is not Frame.ANATOMICAL:
        raise InvalidStateError("build_features expects an anatomical-frame series")
    local = {
        "ang_vel": series.ang_vel,
        "ang_acc": angular_acceleration(series),
        "lin_acc": series.lin_acc,
    }
    R = quat_to_matrix(integrate_orientation(series.ang_vel, series.dt))
    glob = {k: np.einsum("nij,jn->in", R, v) for k, v in local.items()}
    by_frame = {"global": glob, "local": local}

    blocks = []
    for frame in FEATURE_FRAMES:
        vectors = by_frame[frame.split("_")[0]]
        make = _spherical_block if frame.endswith("spherical") else _cartesian_block
        blocks.extend(make(vectors[q]) for q in FEATURE_QUANTITIES)
    return FeatureTensor(np.vstack(blocks).T)


def build_feature_batch(series_list) -> np.ndarray:
    """Stack features of many series into an (N, 145, 48) array."""
    if not series_list:
        return np.zeros((0, N_SAMPLES, N_CHANNELS))
    return np.stack([build_features(s).data for s in series_list])


# ----------------------------------------------------------------------------
# Mirror augmentation
# ----------------------------------------------------------------------------

LIN_ACC_MIRROR = np.array([1.0, -1.0, 1.0])[:, None]
ANG_VEL_MIRROR = np.array([-1.0, 1.0, -1.0])[:, None]


def mirror_series(series: KinematicSeries) -> KinematicSeries:
    if series.frame is not Frame.ANATOMICAL:
        raise InvalidStateError("mirroring is defined in the anatomical frame")
    return replace(series, lin_acc=series.lin_acc * LIN_ACC_MIRROR, ang_vel=series.ang_vel * ANG_VEL_MIRROR)


def mirror(series: KinematicSeries, setup, forces):
    """Reflect an impact about the sagittal plane.

    Negates lin_acc_y, ang_vel_x, ang_vel_z and the setup's alpha and Y.
    Scalar force magnitude profiles are mirror invariant and returned as is.
    """
    return mirror_series(series), setup.mirrored(), forces


# ----------------------------------------------------------------------------
# Normalization
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")

    @classmethod
    def fit(cls, data: np.ndarray) -> "ChannelStats":
        """Per-channel moments over all samples and timesteps of an (N, T, C) array."""
        data = np.asarray(data, dtype=float)
        flat = data.reshape(-1, data.shape[-1])
        return cls(flat.mean(axis=0), flat.std(axis=0))

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def normalize(tensor, stats: ChannelStats) -> np.ndarray:
    """Z-score the last axis; channels with std < 1e-12 are only centered.

    Accepts a FeatureTensor or any array whose last axis is the channel axis.
    """
    data = tensor.data if isinstance(tensor, FeatureTensor) else np.asarray(tensor, dtype=float)
    if data.shape[-1] != stats.n_channels:
        raise ValueError(f"stats have {stats.n_channels} channels, data has {data.shape[-1]}")
    scale = np.where(stats.std < STD_EPS, 1.0, stats.std)
    return (data - stats.mean) / scale


# ----------------------------------------------------------------------------
# CSV I/O
# ----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_kinematics_csv(series: KinematicSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KINEMATICS_HEADER)
        for k in range(series.n_samples):
            w.writerow([k] + [_fmt(v) for v in series.lin_acc[:, k]] + [_fmt(v) for v in series.ang_vel[:, k]])


def read_kinematics_csv(path) -> KinematicSeries:
    """Parse an anatomical-frame kinematics CSV; errors name the file and row."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != KINEMATICS_HEADER:
        raise ParseError(f"{path}: header must be {','.join(KINEMATICS_HEADER)}")
    body = [r for r in rows[1:] if r]
    if len(body) != N_SAMPLES:
        raise ParseError(f"{path}: expected {N_SAMPLES} data rows, found {len(body)}")
    values = np.empty((N_SAMPLES, 6))
    for i, row in enumerate(body, start=2):
        if len(row) != len(KINEMATICS_HEADER):
            raise ParseError(f"{path}: row {i}: expected {len(KINEMATICS_HEADER)} columns, found {len(row)}")
        try:
            nums = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(f"{path}: row {i}: {exc}") from None
        if not all(np.isfinite(nums)):
            raise ParseError(f"{path}: row {i}: non-finite value")
        values[i - 2] = nums[1:]
    return KinematicSeries(values[:, :3].T, values[:, 3:].T, Frame.ANATOMICAL)


def write_features_csv(tensor: FeatureTensor, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ms", *tensor.channel_layout])
        for k, row in enumerate(tensor.data):
            w.writerow([k] + [_fmt(v) for v in row])


def read_features_csv(path) -> FeatureTensor:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or tuple(rows[0][1:]) != CHANNEL_LAYOUT:
        raise ParseError(f"{path}: feature header does not match the channel layout")
    if len(rows) - 1 != N_SAMPLES:
        raise ParseError(f"{path}: expected {N_SAMPLES} data rows, found {len(rows) - 1}")
    try:
        data = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return FeatureTensor(data)
