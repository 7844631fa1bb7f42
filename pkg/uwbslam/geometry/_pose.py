"""

Copyright (c) 2024 The uwbslam Project

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import math
from typing import Iterable, Union

import numpy as np

from ..config.slam_types import Vector3

__all__ = [
    "Pose2",
    "wrap_angle",
    "wrap_angles",
    "compose",
    "inverse",
    "between",
    "interpolate_pose",
    "compose_many",
    "between_many",
    "inverse_many",
    "as_pose",
]

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """
    Maps an angle to (-pi, pi]. Values already in range are returned untouched, so
    operations involving the identity stay exact.
    """
    theta = float(theta)
    if -math.pi < theta <= math.pi:
        return theta
    w = math.fmod(theta + math.pi, _TWO_PI)
    if w <= 0.0:
        w += _TWO_PI
    w -= math.pi
    if w <= -math.pi:
        return math.pi
    return w


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    theta = np.array(theta, dtype=float, copy=True)
    outside = ~((theta > -math.pi) & (theta <= math.pi))
    if np.any(outside):
        w = np.fmod(theta[outside] + math.pi, _TWO_PI)
        w = np.where(w <= 0.0, w + _TWO_PI, w) - math.pi
        theta[outside] = np.where(w <= -math.pi, math.pi, w)
    return theta


class Pose2:
    """
    Immutable element of SE(2): translation (x, y) in meters and heading theta in
    radians, always wrapped to (-pi, pi].

    >>> Pose2(1, 0, math.pi / 2) * Pose2(1, 0, 0)
    Pose2(x=1.0, y=1.0, theta=1.5707963267948966)
    """
    __slots__ = ("_x", "_y", "_theta")

    def __init__(self, x: float = 0.0, y: float = 0.0, theta: float = 0.0):
        object.__setattr__(self, "_x", float(x))
        object.__setattr__(self, "_y", float(y))
        object.__setattr__(self, "_theta", wrap_angle(theta))

    def __setattr__(self, key, value):
        raise AttributeError("Pose2 is immutable")

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: Vector3) -> "Pose2":
        x, y, theta = values
        return cls(x, y, theta)

    @property
    def x(self) -> float:
        return self._x

    @property
    def y(self) -> float:
        return self._y

    @property
    def theta(self) -> float:
        return self._theta

    @property
    def translation(self) -> np.ndarray:
        return np.array([self._x, self._y])

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self._theta), math.sin(self._theta)
        return np.array([[c, -s], [s, c]])

    def as_array(self) -> np.ndarray:
        return np.array([self._x, self._y, self._theta])

    def as_tuple(self):
        return self._x, self._y, self._theta

    def almost_equal(self, other: "Pose2", tol: float = 1e-9) -> bool:
        other = as_pose(other)
        return (abs(self._x - other.x) <= tol and abs(self._y - other.y) <= tol
                and abs(wrap_angle(self._theta - other.theta)) <= tol)

    def __iter__(self):
        return iter((self._x, self._y, self._theta))

    def __len__(self):
        return 3

    def __getitem__(self, item):
        return self.as_tuple()[item]

    def __eq__(self, other):
        if not isinstance(other, Pose2):
            return NotImplemented
        return self.as_tuple() == other.as_tuple()

    def __hash__(self):
        return hash(self.as_tuple())

    def __mul__(self, other: "Pose2") -> "Pose2":
        return compose(self, other)

    def __invert__(self) -> "Pose2":
        return inverse(self)

    def __repr__(self):
        return f"Pose2(x={self._x!r}, y={self._y!r}, theta={self._theta!r})"


def as_pose(value: Union[Pose2, Iterable[float]]) -> Pose2:
    if isinstance(value, Pose2):
        return value
    return Pose2.from_array(value)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """a ⊕ b: ``b`` expressed after the motion ``a``."""
    a, b = as_pose(a), as_pose(b)
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y,
                 a.y + s * b.x + c * b.y,
                 wrap_angle(a.theta + b.theta))


def inverse(a: Pose2) -> Pose2:
    a = as_pose(a)
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), s * a.x - c * a.y, wrap_angle(-a.theta))


def between(a: Pose2, b: Pose2) -> Pose2:
    """inverse(a) ⊕ b, evaluated directly."""
    a, b = as_pose(a), as_pose(b)
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.theta - a.theta))


def interpolate_pose(a: Pose2, b: Pose2, alpha: float) -> Pose2:
    """Linear in position, shortest arc in heading. ``alpha`` in [0, 1]."""
    a, b = as_pose(a), as_pose(b)
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    return Pose2(a.x + alpha * (b.x - a.x),
                 a.y + alpha * (b.y - a.y),
                 a.theta + alpha * wrap_angle(b.theta - a.theta))


def compose_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise compose of (n, 3) arrays; either side may be a single (3,) pose."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    out[..., 1] = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    out[..., 2] = wrap_angles(a[..., 2] + b[..., 2])
    return out


def inverse_many(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(a.shape)
    out[..., 0] = -(c * a[..., 0] + s * a[..., 1])
    out[..., 1] = s * a[..., 0] - c * a[..., 1]
    out[..., 2] = wrap_angles(-a[..., 2])
    return out


def between_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    dx = b[..., 0] - a[..., 0]
    dy = b[..., 1] - a[..., 1]
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = wrap_angles(b[..., 2] - a[..., 2])
    return out
