"""Central numeric tolerances shared by solvers, certificates, and checks."""
from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    """Tolerance bundle threaded through the whole toolkit.

    feas    slack allowed when testing constraint satisfaction
    active  residual threshold below which a constraint counts as active
    eig     eigenvalue threshold for curvature classification
    sign    entrywise threshold for sign-coherence tests
    pivot   smallest pivot magnitude the simplex will accept
    """

    feas: float = 1e-8
    active: float = 1e-7
    eig: float = 1e-10
    sign: float = 1e-10
    pivot: float = 1e-12

    def with_overrides(self, **kwargs) -> "Tolerances":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def to_dict(self) -> dict:
        return {
            "feas": self.feas,
            "active": self.active,
            "eig": self.eig,
            "sign": self.sign,
            "pivot": self.pivot,
        }


DEFAULT = Tolerances()
