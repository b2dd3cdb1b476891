"""Physical configuration of an indoor VLC link: room, LED transmitters, photodetector.

Coordinates use a corner-origin frame: (0, 0, 0) at a floor corner, x in [0, lx],
y in [0, ly], z in [0, lz]. LEDs sit on the ceiling plane facing straight down;
the photodetector faces straight up. Orientations are fixed and not configurable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = [
    "Room",
    "Transmitter",
    "Receiver",
    "Scene",
    "preset_scene",
    "variable_scene",
    "PRESET_ROOMS",
]

# Room dimensions (lx, ly, lz) in meters for the three fixed-size presets.
PRESET_ROOMS = {
    "small": (3.0, 3.0, 2.8),
    "mid": (5.0, 5.0, 3.0),
    "big": (6.5, 6.5, 3.5),
}

# Shared transceiver parameters across all presets.
_PD_AREA_M2 = 1e-4
_HPA_DEG = 60.0
_FOV_DEG = 85.0
_TX_POWER_MW = 1000.0
_FILTER_GAIN = 1.0
_REFRACTIVE_INDEX = 1.5
_WALL_REFLECTANCE = 0.8
_RESPONSIVITY = 1.0


@dataclass(frozen=True)
class Room:
    """Rectangular room extents in meters."""

    lx: float
    ly: float
    lz: float

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0 and self.lz > 0):
            raise ValueError(f"room dimensions must be positive, got {self.lx}x{self.ly}x{self.lz}")


@dataclass(frozen=True)
class Transmitter:
    """Ceiling-mounted LED, normal fixed to (0, 0, -1)."""

    position: tuple[float, float, float]
    power_mw: float = _TX_POWER_MW
    hpa_deg: float = _HPA_DEG

    def __post_init__(self):
        if self.power_mw <= 0:
            raise ValueError(f"power_mw must be positive, got {self.power_mw}")
        if not 0 < self.hpa_deg < 90:
            raise ValueError(f"hpa_deg must be in (0, 90), got {self.hpa_deg}")
        if len(self.position) != 3:
            raise ValueError("position must be a 3D point")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))


@dataclass(frozen=True)
class Receiver:
    """Upward-facing photodetector, normal fixed to (0, 0, +1).

    Responsivity is carried for completeness but not applied to RSS: with
    responsivity 1.0 the photocurrent-domain figure equals the optical one.
    """

    area_m2: float = _PD_AREA_M2
    fov_deg: float = _FOV_DEG
    filter_gain: float = _FILTER_GAIN
    refractive_index: float = _REFRACTIVE_INDEX
    responsivity: float = _RESPONSIVITY

    def __post_init__(self):
        if self.area_m2 <= 0:
            raise ValueError(f"area_m2 must be positive, got {self.area_m2}")
        if not 0 < self.fov_deg <= 90:
            raise ValueError(f"fov_deg must be in (0, 90], got {self.fov_deg}")
        if self.filter_gain <= 0:
            raise ValueError(f"filter_gain must be positive, got {self.filter_gain}")
        if self.refractive_index < 1:
            raise ValueError(f"refractive_index must be >= 1, got {self.refractive_index}")


@dataclass(frozen=True)
class Scene:
    """Immutable description of one VLC system under simulation."""

    room: Room
    transmitters: tuple[Transmitter, ...]
    receiver: Receiver = field(default_factory=Receiver)
    wall_reflectance: float = _WALL_REFLECTANCE

    def __post_init__(self):
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        if not self.transmitters:
            raise ValueError("scene needs at least one transmitter")
        if not 0 <= self.wall_reflectance <= 1:
            raise ValueError(f"wall_reflectance must be in [0, 1], got {self.wall_reflectance}")
        for tx in self.transmitters:
            x, y, z = tx.position
            if not (0 <= x <= self.room.lx and 0 <= y <= self.room.ly):
                raise ValueError(f"transmitter at {tx.position} outside the ceiling rectangle")
            if abs(z - self.room.lz) > 1e-9:
                raise ValueError(f"transmitter z={z} must sit on the ceiling plane z={self.room.lz}")

    def to_dict(self) -> dict:
        return {
            "room": {"lx": self.room.lx, "ly": self.room.ly, "lz": self.room.lz},
            "transmitters": [
                {"position": list(tx.position), "power_mw": tx.power_mw, "hpa_deg": tx.hpa_deg}
                for tx in self.transmitters
            ],
            "receiver": {
                "area_m2": self.receiver.area_m2,
                "fov_deg": self.receiver.fov_deg,
                "filter_gain": self.receiver.filter_gain,
                "refractive_index": self.receiver.refractive_index,
                "responsivity": self.receiver.responsivity,
            },
            "wall_reflectance": self.wall_reflectance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        room = Room(**d["room"])
        txs = tuple(
            Transmitter(position=tuple(t["position"]), power_mw=t["power_mw"], hpa_deg=t["hpa_deg"])
            for t in d["transmitters"]
        )
        rx = Receiver(**d["receiver"])
        return cls(room=room, transmitters=txs, receiver=rx, wall_reflectance=d["wall_reflectance"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Scene":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _led_positions(room: Room, led_count: int) -> list[tuple[float, float, float]]:
    """One LED at the ceiling center, or four at the quadrant centers."""
    lx, ly, lz = room.lx, room.ly, room.lz
    if led_count == 1:
        return [(lx / 2, ly / 2, lz)]
    if led_count == 4:
        return [
            (lx / 4, ly / 4, lz),
            (3 * lx / 4, ly / 4, lz),
            (lx / 4, 3 * ly / 4, lz),
            (3 * lx / 4, 3 * ly / 4, lz),
        ]
    raise ValueError(f"led_count must be 1 or 4, got {led_count}")


def _build_scene(room: Room, led_count: int) -> Scene:
    txs = tuple(Transmitter(position=p) for p in _led_positions(room, led_count))
    return Scene(room=room, transmitters=txs)


def preset_scene(name: str, led_count: int = 1) -> Scene:
    """Return one of the fixed-size scenes ('small', 'mid', 'big') with 1 or 4 LEDs."""
    if name not in PRESET_ROOMS:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESET_ROOMS)}")
    return _build_scene(Room(*PRESET_ROOMS[name]), led_count)


def variable_scene(lx: float, ly: float, led_count: int = 1) -> Scene:
    """Scene with a 3 m tall room of configurable footprint, both sides in [3, 7] m."""
    if not (3.0 <= lx <= 7.0 and 3.0 <= ly <= 7.0):
        raise ValueError(f"room footprint must lie in [3, 7] m, got {lx}x{ly}")
    return _build_scene(Room(lx, ly, 3.0), led_count)
