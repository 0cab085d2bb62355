"""Axis-angle rotations: Rodrigues exponential, its exact adjoint, and slerp.

All functions are batched over a leading axis and preserve the input dtype.
The exponential map and its derivative coefficients switch to truncated
Taylor series below SMALL_ANGLE so there is no 0/0 at the identity.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-4  # series error is O(theta^4) ~ 1e-16 at the switch point


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrices for a batch of 3-vectors, shape (..., 3, 3)."""
    w = np.asarray(w)
    z = np.zeros_like(w[..., 0])
    return np.stack(
        [
            np.stack([z, -w[..., 2], w[..., 1]], axis=-1),
            np.stack([w[..., 2], z, -w[..., 0]], axis=-1),
            np.stack([-w[..., 1], w[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def _sinc_coeffs(theta: np.ndarray):
    """Coefficients a = sin(t)/t and b = (1-cos(t))/t^2, series-safe near 0."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)  # avoid 0/0 in the exact branch
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    return a, b


def _dcoeffs_over_theta(theta: np.ndarray):
    """g1 = a'(t)/t and g2 = b'(t)/t where a, b are the Rodrigues coefficients.

    a'(t)/t = (t cos t - sin t) / t^3      -> -1/3  + t^2/30   near 0
    b'(t)/t = (t sin t - 2 + 2 cos t)/t^4  -> -1/12 + t^2/180  near 0
    """
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    g1 = np.where(small, -1.0 / 3.0 + t2 / 30.0, (t * np.cos(t) - np.sin(t)) / t**3)
    g2 = np.where(small, -1.0 / 12.0 + t2 / 180.0, (t * np.sin(t) - 2.0 + 2.0 * np.cos(t)) / t**4)
    return g1, g2


def axis_angle_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: (..., 3) axis-angle vectors to (..., 3, 3) rotations."""
    w = np.asarray(w)
    theta = np.linalg.norm(w, axis=-1)
    a, b = _sinc_coeffs(theta)
    K = skew(w)
    K2 = K @ K
    eye = np.eye(3, dtype=w.dtype)
    return eye + a[..., None, None] * K + b[..., None, None] * K2


def axis_angle_vjp(w: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Adjoint of `axis_angle_to_matrix`: pull (..., 3, 3) upstream back to (..., 3).

    R(w) = I + a K + b K^2 with K = skew(w), a = sin|w|/|w|, b = (1-cos|w|)/|w|^2.
    dL/dw = (a'/t <dR,K> + b'/t <dR,K2>) w + a S(dR) - b S(dR K + K dR)
    where S is the adjoint of skew: S(M) = (M32-M23, M13-M31, M21-M12).
    """
    w = np.asarray(w)
    dR = np.asarray(dR)
    theta = np.linalg.norm(w, axis=-1)
    a, b = _sinc_coeffs(theta)
    g1, g2 = _dcoeffs_over_theta(theta)
    K = skew(w)
    K2 = K @ K

    def frob(m1, m2):
        return np.sum(m1 * m2, axis=(-2, -1))

    def skew_vjp(m):
        return np.stack(
            [
                m[..., 2, 1] - m[..., 1, 2],
                m[..., 0, 2] - m[..., 2, 0],
                m[..., 1, 0] - m[..., 0, 1],
            ],
            axis=-1,
        )

    radial = (g1 * frob(dR, K) + g2 * frob(dR, K2))[..., None] * w
    lin = a[..., None] * skew_vjp(dR)
    # d(K^2) = dK K + K dK; <dR, dK K> = <dR K^T, dK>, K^T = -K
    quad = b[..., None] * skew_vjp(-(dR @ K) - (K @ dR))
    return radial + lin + quad


def axis_angle_to_quat(w: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a batch of axis-angle vectors."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    half = 0.5 * theta
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    # sin(t/2)/t, series-safe
    s = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / t)
    q = np.empty(w.shape[:-1] + (4,), dtype=w.dtype)
    q[..., 0] = np.cos(half)
    q[..., 1:] = w * s[..., None]
    return q


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    """Inverse of `axis_angle_to_quat`; returns the minimal-angle representative."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # force the scalar part nonnegative so the angle lands in [0, pi]
    flip = np.where(q[..., 0] < 0.0, -1.0, 1.0)
    q = q * flip[..., None]
    sin_half = np.linalg.norm(q[..., 1:], axis=-1)
    angle = 2.0 * np.arctan2(sin_half, q[..., 0])
    small = sin_half < 1e-12
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, sin_half))
    return q[..., 1:] * scale[..., None]


def slerp_axis_angle(w0: np.ndarray, w1: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation between two axis-angle rotations at parameter t."""
    q0 = axis_angle_to_quat(np.asarray(w0, dtype=float))
    q1 = axis_angle_to_quat(np.asarray(w1, dtype=float))
    dot = np.sum(q0 * q1, axis=-1)
    q1 = np.where(dot[..., None] < 0.0, -q1, q1)  # shortest path
    dot = np.abs(dot)
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    near = omega < 1e-6
    so = np.where(near, 1.0, np.sin(np.where(near, 1.0, omega)))
    c0 = np.where(near, 1.0 - t, np.sin((1.0 - t) * omega) / so)
    c1 = np.where(near, t, np.sin(t * omega) / so)
    q = c0[..., None] * q0 + c1[..., None] * q1
    return quat_to_axis_angle(q)
