"""Foot-swap map: momentum transfer to the new contact and the new CoM angle.

The same map serves both working planes.  Callers pass the in-plane
horizontal component of the stance-to-swing foot vector (x sagittally,
y frontally) together with its vertical component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .alip import AlipState, PendulumProfile, RobotParams
from .errors import GeometryError, InvalidStateError, ParameterError

__all__ = [
    "PreImpactState",
    "FootDisplacement",
    "post_impact_state",
    "contact_length",
    "hybrid_impact",
]


def _finite(*vals):
    return all(math.isfinite(v) for v in vals)


@dataclass(frozen=True)
class PreImpactState:
    """Pendulum quantities just before touchdown, about the old contact."""

    theta_c_minus: float
    theta_dot_minus: float
    r_c_minus: float
    r_dot_minus: float
    L_B_minus: float

    def __post_init__(self):
        if not _finite(self.theta_c_minus, self.theta_dot_minus, self.r_c_minus,
                       self.r_dot_minus, self.L_B_minus):
            raise InvalidStateError("pre-impact state has non-finite entries")
        if not self.r_c_minus > 0:
            raise GeometryError(f"r_c_minus={self.r_c_minus} is not positive",
                                value=self.r_c_minus)

    @classmethod
    def from_state(cls, x: AlipState, r_c: float, r_dot: float, params: RobotParams):
        """Build from an ALIP state, deriving theta_dot from L."""
        if not r_c > 0:
            raise GeometryError(f"r_c={r_c} is not positive", value=r_c)
        thd = x.L / (params.m * r_c * r_c)
        return cls(x.theta_c, thd, r_c, r_dot, x.L)


@dataclass(frozen=True)
class FootDisplacement:
    """Stance-to-swing foot vector in the working plane (m)."""

    horizontal: float
    vertical: float

    def __post_init__(self):
        if not _finite(self.horizontal, self.vertical):
            raise InvalidStateError("foot displacement must be finite")


def post_impact_state(pre: PreImpactState, P: FootDisplacement, r_c_plus: float,
                      params: RobotParams) -> AlipState:
    """State about the new contact right after the foot swap.

    Parameters
    ----------
    pre : PreImpactState
        Must satisfy ``L_B_minus == m r_c_minus^2 theta_dot_minus``.
    P : FootDisplacement
        Stance-to-swing foot vector.
    r_c_plus : float
        Pendulum length about the new contact.
    params : RobotParams

    Returns
    -------
    AlipState
        ``theta_c = arccos((r- cos(theta-) - P_z) / r+)``, always in [0, pi],
        so a CoM behind the new contact still comes out non-negative.  ``L``
        is the momentum about the old contact plus the transfer term
        ``m (P_z v_x - P_x v_z)`` written out in polar rates.

    Raises
    ------
    GeometryError
        If the arccos argument leaves [-1, 1]; ``value`` holds it.
    ParameterError
        If `r_c_plus` is not positive.
    """
    if not (r_c_plus > 0 and math.isfinite(r_c_plus)):
        raise ParameterError(f"r_c_plus={r_c_plus} must be positive")
    m = params.m
    th, thd = pre.theta_c_minus, pre.theta_dot_minus
    r, rd, LB = pre.r_c_minus, pre.r_dot_minus, pre.L_B_minus
    if abs(LB - m * r * r * thd) > 1e-9 * max(1.0, abs(LB)):
        raise InvalidStateError("L_B_minus inconsistent with theta_dot_minus")
    Px, Pz = P.horizontal, P.vertical
    s, c = math.sin(th), math.cos(th)

    a = (r * c - Pz) / r_c_plus
    if not (-1.0 <= a <= 1.0):
        raise GeometryError(f"arccos argument {a!r} outside [-1, 1]", value=a)
    # arccos(a) loses half the digits near a = 1, so form 1 - a from the
    # half-angle identity and recover the angle with atan2.
    sh = math.sin(0.5 * th)
    one_minus = (r_c_plus - r + 2.0 * r * sh * sh + Pz) / r_c_plus
    one_plus = (r_c_plus + r * c - Pz) / r_c_plus
    theta_plus = math.atan2(math.sqrt(max(one_minus, 0.0) * max(one_plus, 0.0)), a)

    L_plus = LB + m * (Pz * (r * c * thd + rd * s) - Px * (-r * s * thd + rd * c))
    return AlipState(theta_plus, L_plus)


def contact_length(theta_c: float, r_c_minus: float, P: FootDisplacement) -> float:
    """Distance from the new contact point to the CoM at touchdown."""
    return math.hypot(r_c_minus * math.sin(theta_c) - P.horizontal,
                      r_c_minus * math.cos(theta_c) - P.vertical)


def hybrid_impact(x: AlipState, profile: PendulumProfile, T: float,
                  P: FootDisplacement, params: RobotParams,
                  mirror: bool = False) -> AlipState:
    """Foot swap at the end of a step, as used by every hybrid simulation.

    The new pendulum length is the actual distance from the new contact to
    the CoM.  The angle is the same arccos angle, signed by the CoM's
    horizontal offset from the new contact (negative when the CoM is still
    behind it); it is taken from atan2 of that offset, which keeps full
    precision near upright.  With ``mirror=True`` the result is reflected
    into the next stance leg's frame, which is how the frontal plane
    alternates sides.
    """
    r = profile.length(1.0)
    pre = PreImpactState.from_state(x, r, profile.rate(1.0, T), params)
    r_plus = contact_length(x.theta_c, r, P)
    if not r_plus > 0.0:
        raise GeometryError("CoM coincides with the new contact point", value=r_plus)
    post = post_impact_state(pre, P, r_plus, params)
    th = math.atan2(r * math.sin(x.theta_c) - P.horizontal,
                    r * math.cos(x.theta_c) - P.vertical)
    if mirror:
        return AlipState(-th, -post.L)
    return AlipState(th, post.L)
