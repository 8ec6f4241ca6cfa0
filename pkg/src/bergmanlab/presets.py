"""Built-in weights: the Fubini-Study metric, a radial bump and the two divisor examples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .envelope import SlopeWindow
from .weight import Bump, Weight


@dataclass(frozen=True)
class Preset:
    name: str
    weight: Weight
    window: Optional[SlopeWindow]
    description: str

    def slope_window(self) -> SlopeWindow:
        return self.window if self.window is not None else SlopeWindow.full(self.weight)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "weight": self.weight.to_dict(),
            "window": None if self.window is None else [self.window.s_lo, self.window.s_hi],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preset":
        w = d.get("window")
        return cls(
            d["name"],
            Weight.from_dict(d["weight"]),
            None if w is None else SlopeWindow(float(w[0]), float(w[1])),
            d["description"],
        )


PRESETS = {
    p.name: p
    for p in [
        Preset(
            "fs",
            Weight(1),
            None,
            "Fubini-Study metric ln(1+|z|^2) on O(1) over P^1; "
            "B_k is identically k+1.",
        ),
        Preset(
            "bump",
            Weight(1, Bump(-1.5, 0.0, 2.0)),
            None,
            "Fubini-Study plus a radial mollifier dip of depth 1.5 on |ln|z|^2| < 2; "
            "the contact set is the band |ln|z|^2| < 0.48 around the unit circle.",
        ),
        Preset(
            "example_5_2",
            Weight(2),
            SlopeWindow(0.0, 1.0),
            "O(2) with 2*phi_FS, sections vanishing to order k at infinity; "
            "contact set is the unit disc.",
        ),
        Preset(
            "example_5_3",
            Weight(2),
            SlopeWindow(1.0, 2.0),
            "O(2) with 2*phi_FS, sections vanishing to order k at the origin "
            "(blow-up picture); contact set is the complement of the unit disc.",
        ),
    ]
}


def list_presets() -> list[dict]:
    return [p.to_dict() for p in PRESETS.values()]
