"""Hyperelastic material parameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Material:
    youngs_modulus: float  # Pa
    poisson_ratio: float
    density: float = 1070.0  # kg/m^3
    # "bulk": lambda = E / (3(1 - 2 nu)); "classical": lambda = E nu / ((1 + nu)(1 - 2 nu))
    lame_convention: str = "bulk"

    def __post_init__(self):
        if self.youngs_modulus <= 0 or self.density <= 0:
            raise ValueError("modulus and density must be positive")
        if not (-1.0 < self.poisson_ratio < 0.5):
            raise ValueError("poisson ratio must lie in (-1, 0.5)")
        if self.lame_convention not in ("bulk", "classical"):
            raise ValueError(f"unknown lame convention {self.lame_convention!r}")

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def lam(self) -> float:
        e, nu = self.youngs_modulus, self.poisson_ratio
        if self.lame_convention == "classical":
            return e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return e / (3.0 * (1.0 - 2.0 * nu))

    @classmethod
    def sample(cls, rng: np.random.Generator, e_range=(3000.0, 30000.0), nu_range=(0.45, 0.48),
               rho_range=(1050.0, 1090.0), lame_convention="bulk") -> "Material":
        return cls(float(rng.uniform(*e_range)), float(rng.uniform(*nu_range)), float(rng.uniform(*rho_range)),
                   lame_convention)

    def to_dict(self) -> dict:
        return {**asdict(self), "mu": self.mu, "lambda": self.lam}
