"""Polynomial fuel-rate models and trajectory-level fuel accounting."""

from __future__ import annotations

from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

GRAMS_PER_GALLON = 2839.0
METERS_PER_MILE = 1609.344

VEHICLE_CLASSES = (
    "compact_sedan",
    "midsize_sedan",
    "midsize_suv",
    "pickup",
    "class4_pnd",
    "class8_tractor",
)

# Operating range over which Q(v) and Z(v) must stay positive.
V_RANGE = (0.0, 40.0)


@dataclass(frozen=True)
class EnergyModel:
    class_name: str
    beta: float
    c0: float
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    p0: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    q0: float = 0.0
    q1: float = 0.0
    z0: float = 0.0
    z1: float = 0.0
    z2: float = 0.0
    # False: linear term uses the raw acceleration (as the model is usually
    # written). True: linear term also uses the clamped a_plus.
    linear_uses_a_plus: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"{self.class_name}: beta must be >= 0")
        if not self.c0 > 0:
            raise ValueError(f"{self.class_name}: c0 must be > 0 (idle consumption)")
        v = np.linspace(*V_RANGE, 401)
        if np.any(self.Q(v) <= 0):
            raise ValueError(f"{self.class_name}: Q(v) must be > 0 on {V_RANGE}")
        if np.any(self.Z(v) <= 0):
            raise ValueError(f"{self.class_name}: Z(v) must be > 0 on {V_RANGE}")

    def C(self, v):
        return self.c0 + v * (self.c1 + v * (self.c2 + v * self.c3))

    def P(self, v):
        return self.p0 + v * (self.p1 + v * self.p2)

    def Q(self, v):
        return self.q0 + self.q1 * v

    def Z(self, v):
        return self.z0 + v * (self.z1 + v * self.z2)


def fuel_rate(v, a, theta, model: EnergyModel):
    """Instantaneous fuel rate [g/s]; vectorised over v, a, theta."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("fuel_rate: negative speed")
    a = np.asarray(a, dtype=float)
    P = model.P(v)
    Q = model.Q(v)
    a_plus = np.maximum(-P / (2.0 * Q), a)
    a_lin = a_plus if model.linear_uses_a_plus else a
    raw = model.C(v) + P * a_lin + Q * a_plus**2 + model.Z(v) * theta
    out = np.maximum(model.beta, raw)
    return float(out) if out.ndim == 0 else out


def finite_difference_accel(speeds, dt: float):
    """Central differences inside, one-sided at the ends."""
    speeds = np.asarray(speeds, dtype=float)
    if speeds.size < 2:
        return np.zeros_like(speeds)
    return np.gradient(speeds, dt)


def trajectory_fuel(speeds, grades, model: EnergyModel, dt: float) -> float:
    """Total fuel [g] of a speed trace sampled every ``dt`` seconds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    speeds = np.asarray(speeds, dtype=float)
    grades = np.zeros_like(speeds) if grades is None else np.asarray(grades, dtype=float)
    if grades.shape != speeds.shape:
        raise ValueError(f"length mismatch: {speeds.shape} speeds vs {grades.shape} grades")
    if speeds.size == 0:
        return 0.0
    acc = finite_difference_accel(speeds, dt)
    return float(np.sum(fuel_rate(speeds, acc, grades, model)) * dt)


def fuel_economy(total_fuel: float, total_distance: float,
                 fuel_density: float = GRAMS_PER_GALLON) -> float:
    """Miles per gallon from grams of fuel and metres driven."""
    if not total_fuel > 0:
        raise ValueError("fuel economy undefined for zero fuel")
    return (total_distance / METERS_PER_MILE) / (total_fuel / fuel_density)


def _coefficient_keys():
    return {f.name for f in fields(EnergyModel)} - {"class_name"}


def load_energy_models(path=None, linear_uses_a_plus: bool = False):
    """Load every class in a coefficient file. Returns (models, fuel_density)."""
    if path is None:
        text = (resources.files("megacontroller") / "data" / "energy_models.yaml").read_text()
    else:
        text = Path(path).read_text()
    doc = yaml.safe_load(text)
    allowed = _coefficient_keys()
    models = {}
    for name, rec in doc["classes"].items():
        unknown = set(rec) - allowed
        if unknown:
            raise ValueError(f"{name}: unknown coefficient keys {sorted(unknown)}")
        rec = dict(rec)
        rec.setdefault("linear_uses_a_plus", linear_uses_a_plus)
        models[name] = EnergyModel(class_name=name, **rec)
    return models, float(doc.get("fuel_density_g_per_gal", GRAMS_PER_GALLON))


@lru_cache(maxsize=None)
def default_model(class_name: str = "midsize_sedan") -> EnergyModel:
    return load_energy_models()[0][class_name]
