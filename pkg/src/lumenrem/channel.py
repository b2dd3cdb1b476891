"""Lambertian DC channel gains and received optical power.

The direct path uses the generalized-Lambertian LOS gain; the reflected path
integrates single-bounce contributions over a midpoint-rule tiling of the four
walls. Ceiling and floor are non-reflective, rooms are empty, and all angles
come from exact vector geometry against the fixed +/-z transceiver normals.

Everything here is pure and deterministic; the additive noise applied to
training data lives in `dataset`, keeping this module usable as ground truth.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scene import Receiver, Room, Scene, Transmitter

__all__ = [
    "DEFAULT_PATCH_EDGE_M",
    "LinkGeometry",
    "WallPatch",
    "PowerBreakdown",
    "lambertian_order",
    "concentrator_gain",
    "link_geometry",
    "los_gain",
    "discretize_walls",
    "nlos_gain",
    "received_power",
    "received_power_many",
    "rss_dbm",
    "path_loss_db",
]

DEFAULT_PATCH_EDGE_M = 0.2

# Positions are processed in chunks this size so the (chunk x patches) work
# arrays stay small regardless of dataset size.
_CHUNK = 512

_THREADS_ENV = "LUMEN_REM_THREADS"


def _max_workers() -> int:
    raw = os.environ.get(_THREADS_ENV, "").strip()
    if raw:
        n = int(raw)
        if n > 0:
            return n
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Scalar channel quantities
# ---------------------------------------------------------------------------

def lambertian_order(hpa_deg: float) -> float:
    """Lambertian order m = -ln 2 / ln cos(half-power semi-angle)."""
    if not 0 < hpa_deg < 90:
        raise ValueError(f"half-power semi-angle must be in (0, 90) degrees, got {hpa_deg}")
    return -math.log(2.0) / math.log(math.cos(math.radians(hpa_deg)))


def concentrator_gain(cos_psi, fov_deg: float, n: float):
    """Non-imaging concentrator gain: n^2 / sin^2(fov) inside the FOV, else 0.

    Accepts a scalar or an ndarray of incidence cosines.
    """
    if n < 1:
        raise ValueError(f"refractive index must be >= 1, got {n}")
    if not 0 < fov_deg <= 90:
        raise ValueError(f"FOV semi-angle must be in (0, 90] degrees, got {fov_deg}")
    fov_rad = math.radians(fov_deg)
    g_inside = n * n / math.sin(fov_rad) ** 2
    cos_fov = math.cos(fov_rad)
    if np.isscalar(cos_psi):
        return g_inside if cos_psi >= cos_fov else 0.0
    cos_psi = np.asarray(cos_psi, dtype=float)
    return np.where(cos_psi >= cos_fov, g_inside, 0.0)


@dataclass(frozen=True)
class LinkGeometry:
    """Distance and angle cosines of one Tx -> Rx link."""

    d: float
    cos_phi: float
    cos_psi: float


def link_geometry(tx: Transmitter, rx_pos) -> LinkGeometry:
    """Geometry between a down-facing LED and an up-facing PD at rx_pos."""
    tx_pos = tx.position
    dx = rx_pos[0] - tx_pos[0]
    dy = rx_pos[1] - tx_pos[1]
    dz = rx_pos[2] - tx_pos[2]
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d == 0.0:
        raise ValueError("receiver position coincides with the transmitter")
    # Tx normal is (0,0,-1) and Rx normal (0,0,+1); both cosines reduce to dz/d.
    cos_phi = -dz / d
    return LinkGeometry(d=d, cos_phi=cos_phi, cos_psi=cos_phi)


def los_gain(tx: Transmitter, rx: Receiver, rx_pos) -> float:
    """DC gain of the direct path; 0 outside the receiver FOV."""
    geo = link_geometry(tx, rx_pos)
    if geo.cos_phi <= 0:
        return 0.0
    fov_rad = math.radians(rx.fov_deg)
    if geo.cos_psi < math.cos(fov_rad):
        return 0.0
    m = lambertian_order(tx.hpa_deg)
    g = rx.refractive_index ** 2 / math.sin(fov_rad) ** 2
    return (
        (m + 1.0) * rx.area_m2 / (2.0 * math.pi * geo.d ** 2)
        * geo.cos_phi ** m * rx.filter_gain * g * geo.cos_psi
    )


# ---------------------------------------------------------------------------
# Wall discretization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WallPatch:
    """One reflective wall element: center, inward unit normal, extents.

    `edge_u` is the in-plane horizontal extent (along y for x-walls, along x
    for y-walls) and `edge_v` the vertical extent; `area_m2 == edge_u * edge_v`.
    """

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    area_m2: float
    edge_u: float
    edge_v: float

    def __post_init__(self):
        if self.area_m2 <= 0 or self.edge_u <= 0 or self.edge_v <= 0:
            raise ValueError("patch area and edges must be positive")


class _PatchArrays:
    """Struct-of-arrays view of the wall tiling, shared by the vector kernels."""

    __slots__ = ("centers", "normals", "areas", "edges_u", "edges_v")

    def __init__(self, centers, normals, areas, edges_u, edges_v):
        self.centers = centers
        self.normals = normals
        self.areas = areas
        self.edges_u = edges_u
        self.edges_v = edges_v

    @classmethod
    def from_room(cls, room: Room, patch_edge_m: float) -> "_PatchArrays":
        if not 0 < patch_edge_m <= min(room.lx, room.ly, room.lz):
            raise ValueError(
                f"patch edge must be in (0, min room extent], got {patch_edge_m}"
            )
        centers, normals, areas, edges_u, edges_v = [], [], [], [], []
        # Four walls, fixed order: x=0, x=lx, y=0, y=ly. Each is tiled with
        # ceil(extent/edge) patches per direction and exact sizes extent/count,
        # so the tiling covers the wall exactly and is reflection-symmetric.
        walls = [
            ("x", 0.0, (1.0, 0.0, 0.0), room.ly),
            ("x", room.lx, (-1.0, 0.0, 0.0), room.ly),
            ("y", 0.0, (0.0, 1.0, 0.0), room.lx),
            ("y", room.ly, (0.0, -1.0, 0.0), room.lx),
        ]
        for axis, offset, normal, extent in walls:
            nu = math.ceil(extent / patch_edge_m - 1e-12)
            nv = math.ceil(room.lz / patch_edge_m - 1e-12)
            du = extent / nu
            dv = room.lz / nv
            u = (np.arange(nu) + 0.5) * du
            v = (np.arange(nv) + 0.5) * dv
            uu, vv = np.meshgrid(u, v, indexing="ij")
            uu = uu.ravel()
            vv = vv.ravel()
            if axis == "x":
                c = np.column_stack([np.full_like(uu, offset), uu, vv])
            else:
                c = np.column_stack([uu, np.full_like(uu, offset), vv])
            centers.append(c)
            normals.append(np.tile(np.asarray(normal), (len(uu), 1)))
            areas.append(np.full(len(uu), du * dv))
            edges_u.append(np.full(len(uu), du))
            edges_v.append(np.full(len(uu), dv))
        return cls(
            centers=np.concatenate(centers),
            normals=np.concatenate(normals),
            areas=np.concatenate(areas),
            edges_u=np.concatenate(edges_u),
            edges_v=np.concatenate(edges_v),
        )

    @classmethod
    def from_patches(cls, patches) -> "_PatchArrays":
        return cls(
            centers=np.asarray([p.center for p in patches], dtype=float),
            normals=np.asarray([p.normal for p in patches], dtype=float),
            areas=np.asarray([p.area_m2 for p in patches], dtype=float),
            edges_u=np.asarray([p.edge_u for p in patches], dtype=float),
            edges_v=np.asarray([p.edge_v for p in patches], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.areas)


def discretize_walls(room: Room, patch_edge_m: float) -> list[WallPatch]:
    """Tile the four walls with rectangular midpoint-rule patches."""
    pa = _PatchArrays.from_room(room, patch_edge_m)
    return [
        WallPatch(center=tuple(c), normal=tuple(n), area_m2=float(a),
                  edge_u=float(eu), edge_v=float(ev))
        for c, n, a, eu, ev in zip(pa.centers, pa.normals, pa.areas,
                                   pa.edges_u, pa.edges_v)
    ]


# ---------------------------------------------------------------------------
# Vectorized gain kernels
# ---------------------------------------------------------------------------

def _los_gain_block(tx: Transmitter, rx: Receiver, pos: np.ndarray) -> np.ndarray:
    """LOS DC gain for a (n, 3) block of receiver positions."""
    tx_pos = np.asarray(tx.position)
    delta = pos - tx_pos
    d_sq = np.einsum("ij,ij->i", delta, delta)
    if np.any(d_sq == 0.0):
        raise ValueError("receiver position coincides with a transmitter")
    d = np.sqrt(d_sq)
    cos_phi = (tx_pos[2] - pos[:, 2]) / d
    m = lambertian_order(tx.hpa_deg)
    fov_rad = math.radians(rx.fov_deg)
    g = rx.refractive_index ** 2 / math.sin(fov_rad) ** 2
    visible = cos_phi > 0
    in_fov = cos_phi >= math.cos(fov_rad)
    cos_clip = np.where(visible, cos_phi, 0.0)
    gain = (
        (m + 1.0) * rx.area_m2 / (2.0 * math.pi * d_sq)
        * cos_clip ** m * rx.filter_gain * g * cos_clip
    )
    return np.where(visible & in_fov, gain, 0.0)


def _nlos_gain_block(
    tx: Transmitter, rx: Receiver, pos: np.ndarray, pa: _PatchArrays, rho: float
) -> np.ndarray:
    """Single-bounce reflected DC gain for a (n, 3) block of positions."""
    tx_pos = np.asarray(tx.position)
    m = lambertian_order(tx.hpa_deg)
    fov_rad = math.radians(rx.fov_deg)
    g = rx.refractive_index ** 2 / math.sin(fov_rad) ** 2
    cos_fov = math.cos(fov_rad)

    # Tx -> patch leg depends only on the tiling; computed once per block.
    v1 = pa.centers - tx_pos
    d1_sq = np.einsum("ij,ij->i", v1, v1)
    if np.any(d1_sq == 0.0):
        raise ValueError("a wall patch coincides with a transmitter")
    d1 = np.sqrt(d1_sq)
    cos_phi = (tx_pos[2] - pa.centers[:, 2]) / d1
    cos_alpha = -np.einsum("ij,ij->i", v1, pa.normals) / d1
    tx_leg = np.where(
        (cos_phi > 0) & (cos_alpha > 0),
        np.where(cos_phi > 0, cos_phi, 0.0) ** m * cos_alpha * pa.areas / d1_sq,
        0.0,
    )

    # Patch -> Rx leg, (n, N) per component to avoid an (n, N, 3) temporary.
    dx = pos[:, 0, None] - pa.centers[None, :, 0]
    dy = pos[:, 1, None] - pa.centers[None, :, 1]
    dz = pos[:, 2, None] - pa.centers[None, :, 2]
    d2_sq = dx * dx + dy * dy + dz * dz
    if np.any(d2_sq == 0.0):
        raise ValueError("receiver position coincides with a wall patch")
    d2 = np.sqrt(d2_sq)
    cos_beta = (
        dx * pa.normals[None, :, 0]
        + dy * pa.normals[None, :, 1]
        + dz * pa.normals[None, :, 2]
    ) / d2
    cos_psi = -dz / d2  # patch is at -dz above the receiver plane
    accept = (cos_beta > 0) & (cos_psi > 0) & (cos_psi >= cos_fov)
    contrib = np.where(accept, tx_leg[None, :] / d2_sq * cos_beta * cos_psi, 0.0)
    k = (m + 1.0) * rx.area_m2 / (2.0 * math.pi) * rho * rx.filter_gain * g

    # The midpoint rule degrades when the receiver sits close to a patch
    # (the 1/d2^2 factor varies too much across it). Such patches are
    # re-evaluated by recursive subdivision until every sub-patch satisfies
    # edge <= d2/4, keeping the discretization error small everywhere.
    needs = d2 < 4.0 * np.maximum(pa.edges_u, pa.edges_v)[None, :]
    if needs.any():
        contrib = np.where(needs, 0.0, contrib)
        total = contrib.sum(axis=1)
        tx3 = (float(tx_pos[0]), float(tx_pos[1]), float(tx_pos[2]))
        for i, j in zip(*np.nonzero(needs)):
            rx3 = (float(pos[i, 0]), float(pos[i, 1]), float(pos[i, 2]))
            total[i] += _adaptive_patch_term(tx3, m, cos_fov, rx3, pa, int(j))
    else:
        total = contrib.sum(axis=1)
    return k * total


_REFINE_MAX_DEPTH = 12


def _adaptive_patch_term(tx3, m, cos_fov, rx3, pa: _PatchArrays, j: int) -> float:
    cx, cy, cz = (float(v) for v in pa.centers[j])
    normal = tuple(float(v) for v in pa.normals[j])
    if normal[0] != 0.0:
        make, u, v = (lambda a, b: (cx, a, b)), cy, cz
    else:
        make, u, v = (lambda a, b: (a, cy, b)), cx, cz
    return _patch_term(tx3, m, cos_fov, rx3, make, normal,
                       u, v, float(pa.edges_u[j]), float(pa.edges_v[j]), 0)


def _patch_term(tx3, m, cos_fov, rx3, make, normal, u, v, eu, ev, depth) -> float:
    """Midpoint term for one (sub-)patch, splitting 2x2 while it is too close
    to the receiver for its size. Without the leading constant k."""
    c = make(u, v)
    wx, wy, wz = rx3[0] - c[0], rx3[1] - c[1], rx3[2] - c[2]
    d2 = math.sqrt(wx * wx + wy * wy + wz * wz)
    if 4.0 * (eu if eu > ev else ev) > d2 and depth < _REFINE_MAX_DEPTH:
        qu, qv = 0.25 * eu, 0.25 * ev
        hu, hv = 0.5 * eu, 0.5 * ev
        return (
            _patch_term(tx3, m, cos_fov, rx3, make, normal, u - qu, v - qv, hu, hv, depth + 1)
            + _patch_term(tx3, m, cos_fov, rx3, make, normal, u - qu, v + qv, hu, hv, depth + 1)
            + _patch_term(tx3, m, cos_fov, rx3, make, normal, u + qu, v - qv, hu, hv, depth + 1)
            + _patch_term(tx3, m, cos_fov, rx3, make, normal, u + qu, v + qv, hu, hv, depth + 1)
        )
    cos_beta = (wx * normal[0] + wy * normal[1] + wz * normal[2]) / d2
    cos_psi = -wz / d2
    if cos_beta <= 0.0 or cos_psi <= 0.0 or cos_psi < cos_fov:
        return 0.0
    tx_x, tx_y, tx_z = tx3
    v1x, v1y, v1z = c[0] - tx_x, c[1] - tx_y, c[2] - tx_z
    d1_sq = v1x * v1x + v1y * v1y + v1z * v1z
    d1 = math.sqrt(d1_sq)
    cos_phi = -v1z / d1
    cos_alpha = -(v1x * normal[0] + v1y * normal[1] + v1z * normal[2]) / d1
    if cos_phi <= 0.0 or cos_alpha <= 0.0:
        return 0.0
    return cos_phi ** m * cos_alpha * (eu * ev) / d1_sq * cos_beta * cos_psi / (d2 * d2)


def nlos_gain(tx: Transmitter, rx: Receiver, rx_pos, patches, rho: float) -> float:
    """Reflected-path DC gain at one position, summed over the wall tiling."""
    pa = patches if isinstance(patches, _PatchArrays) else _PatchArrays.from_patches(patches)
    pos = np.asarray(rx_pos, dtype=float).reshape(1, 3)
    return float(_nlos_gain_block(tx, rx, pos, pa, rho)[0])


# ---------------------------------------------------------------------------
# Received power
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerBreakdown:
    """Received optical power in mW, split by path and by transmitter."""

    p_los_mw: float
    p_nlos_mw: float
    per_tx: tuple[tuple[float, float], ...]

    @property
    def total_mw(self) -> float:
        return self.p_los_mw + self.p_nlos_mw


def _check_inside(scene: Scene, pos: np.ndarray) -> None:
    room = scene.room
    ok = (
        (pos[:, 0] >= 0) & (pos[:, 0] <= room.lx)
        & (pos[:, 1] >= 0) & (pos[:, 1] <= room.ly)
        & (pos[:, 2] >= 0) & (pos[:, 2] < room.lz)
    )
    if not np.all(ok):
        bad = pos[~ok][0]
        raise ValueError(f"receiver position {tuple(bad)} outside the room (or on the ceiling)")


def received_power(scene: Scene, rx_pos, patch_edge_m: float = DEFAULT_PATCH_EDGE_M) -> PowerBreakdown:
    """Deterministic received power at one position, LOS/NLOS per transmitter."""
    pos = np.asarray(rx_pos, dtype=float).reshape(1, 3)
    _check_inside(scene, pos)
    pa = _PatchArrays.from_room(scene.room, patch_edge_m)
    per_tx = []
    for tx in scene.transmitters:
        h_los = _los_gain_block(tx, scene.receiver, pos)[0]
        h_ref = _nlos_gain_block(tx, scene.receiver, pos, pa, scene.wall_reflectance)[0]
        per_tx.append((tx.power_mw * float(h_los), tx.power_mw * float(h_ref)))
    return PowerBreakdown(
        p_los_mw=sum(p for p, _ in per_tx),
        p_nlos_mw=sum(p for _, p in per_tx),
        per_tx=tuple(per_tx),
    )


def received_power_many(
    scene: Scene, positions, patch_edge_m: float = DEFAULT_PATCH_EDGE_M
) -> tuple[np.ndarray, np.ndarray]:
    """Total LOS and NLOS received power (mW) for an (n, 3) array of positions.

    Positions are evaluated in fixed-size chunks; chunks are independent, so the
    result is identical whether they run serially or on the worker pool capped
    by LUMEN_REM_THREADS.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    _check_inside(scene, pos)
    pa = _PatchArrays.from_room(scene.room, patch_edge_m)
    n = len(pos)
    p_los = np.zeros(n)
    p_nlos = np.zeros(n)

    def work(lo: int, hi: int) -> None:
        block = pos[lo:hi]
        for tx in scene.transmitters:
            p_los[lo:hi] += tx.power_mw * _los_gain_block(tx, scene.receiver, block)
            p_nlos[lo:hi] += tx.power_mw * _nlos_gain_block(
                tx, scene.receiver, block, pa, scene.wall_reflectance
            )

    spans = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]
    workers = min(_max_workers(), len(spans))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda s: work(*s), spans))
    else:
        for lo, hi in spans:
            work(lo, hi)
    return p_los, p_nlos


# ---------------------------------------------------------------------------
# Decibel conversions
# ---------------------------------------------------------------------------

def rss_dbm(p_mw):
    """Optical power in mW to RSS in dBm. Vectorizes over ndarrays.

    Scalars go through the same log10 kernel as arrays so that a value
    converted alone is bit-identical to the same value inside a batch.
    """
    arr = np.asarray(p_mw, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("received power must be positive to express in dBm")
    out = 10.0 * np.log10(arr)
    return float(out) if arr.ndim == 0 else out


def path_loss_db(h0: float) -> float:
    """Path loss in dB of a total DC gain."""
    if h0 <= 0:
        raise ValueError("DC gain must be positive to express a path loss")
    return -10.0 * math.log10(h0)
