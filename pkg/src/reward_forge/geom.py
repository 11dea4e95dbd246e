"""Quaternion and keypoint helpers.

Quaternions are stored as ``(x, y, z, w)`` along the last axis, matching the
layout the simulator-facing code uses. Every function broadcasts over leading
batch dimensions, so the same call works for one pose or a batch of envs.
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])

#: default keypoint basis, one point along each signed coordinate axis
DEFAULT_KP_BASIS = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)

GIMBAL_EPS = 1e-6


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip sign so that ``w >= 0``; both signs encode the same rotation."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., 3:4] < 0.0, -q, q)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.concatenate([-q[..., :3], q[..., 3:]], axis=-1)


def quat_mul(a: np.ndarray, b: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """Hamilton product ``a * b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az, aw = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx, by, bz, bw = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )
    if renormalize:
        out = normalize(out)
    return out


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross is several times slower on small batches
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * _cross(u, v)
    return v + w * t + _cross(u, t)


def quat_rotate_inverse(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_rotate(quat_conjugate(q), v)


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([axis * np.sin(half), np.cos(half)], axis=-1)


def integrate(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation ``q`` by world-frame angular velocity ``omega`` over ``dt``.

    Uses the exact exponential map for a constant rate over the step.
    """
    omega = np.asarray(omega, dtype=float)
    rate = np.sqrt(np.sum(omega * omega, axis=-1))
    angle = rate * dt
    safe = np.where(rate > 0.0, rate, 1.0)
    axis = omega / safe[..., None]
    half = 0.5 * angle
    dq = np.concatenate([axis * np.sin(half)[..., None], np.cos(half)[..., None]], axis=-1)
    return canonicalize(quat_mul(dq, q))


def random_quat(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniformly distributed unit quaternions (Shoemake's method)."""
    shape = () if n is None else (n,)
    u1, u2, u3 = rng.random((3,) + shape)
    s1 = np.sqrt(1.0 - u1)
    s2 = np.sqrt(u1)
    q = np.stack(
        [
            s1 * np.sin(2 * np.pi * u2),
            s1 * np.cos(2 * np.pi * u2),
            s2 * np.sin(2 * np.pi * u3),
            s2 * np.cos(2 * np.pi * u3),
        ],
        axis=-1,
    )
    return canonicalize(q)


def rot_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle between two orientations, in ``[0, pi]``."""
    diff = quat_mul(a, quat_conjugate(b))
    s = np.sqrt(np.sum(diff[..., :3] ** 2, axis=-1))
    return 2.0 * np.arcsin(np.minimum(s, 1.0))


def keypoints(pos: np.ndarray, orn: np.ndarray, basis: np.ndarray = DEFAULT_KP_BASIS,
              kp_dist: float = 0.03) -> np.ndarray:
    """Keypoints rigidly attached to a pose; returns ``(..., k, 3)``."""
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] == 0:
        raise ValueError("keypoint basis must be a non-empty (k, 3) array")
    if kp_dist <= 0:
        raise ValueError(f"kp_dist must be positive, got {kp_dist}")
    pos = np.asarray(pos, dtype=float)
    orn = np.asarray(orn, dtype=float)
    local = basis * kp_dist
    rotated = local @ np.swapaxes(_rotation_matrices(orn), -1, -2)
    return pos[..., None, :] + rotated


def _rotation_matrices(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    rows = [
        1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
        2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
        2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
    ]
    return np.stack(rows, axis=-1).reshape(q.shape[:-1] + (3, 3))


def mean_keypoint_distance(kp_a: np.ndarray, kp_b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(kp_a - kp_b, axis=-1).mean(axis=-1)


def lgsk_kernel(x, scale: float = 50.0, eps: float = 2.0):
    """Logistic kernel ``1 / (exp(s*x) + eps + exp(-s*x))``.

    Peaks at ``1 / (2 + eps)`` for ``x = 0`` and decays to 0.
    """
    x = np.asarray(x, dtype=float)
    return 1.0 / (np.exp(scale * x) + eps + np.exp(-scale * x))


def axis_deviation(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Angle between two axis directions, in ``[0, pi]``."""
    target = np.asarray(target, dtype=float)
    current = np.asarray(current, dtype=float)
    nt = np.sqrt(np.sum(target * target, axis=-1))
    nc = np.sqrt(np.sum(current * current, axis=-1))
    if np.any(nt == 0.0) or np.any(nc == 0.0):
        raise ValueError("axis_deviation is undefined for a zero-length axis")
    cos = np.sum(target * current, axis=-1) / (nt * nc)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def euler_xyz(q: np.ndarray) -> np.ndarray:
    """Roll, pitch, yaw of ``q`` in ``[0, 2*pi)``, as the simulator's helper returns them."""
    q = np.asarray(q, dtype=float)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    roll = np.arctan2(2.0 * (w * x + y * z), w * w - x * x - y * y + z * z)
    sinp = 2.0 * (w * y - z * x)
    pitch = np.where(np.abs(sinp) >= 1.0, np.copysign(np.pi / 2.0, sinp), np.arcsin(np.clip(sinp, -1.0, 1.0)))
    yaw = np.arctan2(2.0 * (w * z + x * y), w * w + x * x - y * y - z * z)
    two_pi = 2.0 * np.pi
    return np.stack([roll % two_pi, pitch % two_pi, yaw % two_pi], axis=-1)


def euler_xyz_delta(a: np.ndarray, b: np.ndarray, return_flags: bool = False):
    """Euler XYZ angles of ``a * conj(b)``, each wrapped into ``(-pi, pi]``.

    With ``return_flags`` also returns a boolean mask marking inputs whose pitch
    sits within ``GIMBAL_EPS`` of +-pi/2, where roll and yaw are ill-conditioned.
    """
    diff = quat_mul(a, quat_conjugate(b))
    rpy = euler_xyz(diff)
    rpy = np.where(rpy > np.pi, rpy - 2.0 * np.pi, rpy)
    if return_flags:
        pitch = rpy[..., 1]
        flags = np.abs(np.abs(pitch) - np.pi / 2.0) < GIMBAL_EPS
        return rpy, flags
    return rpy

