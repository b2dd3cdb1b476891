"""Dataset generation, noise injection, splitting, and normalization.

Rows pair an RSS value in dBm with the receiver position (and, for rooms of
varying footprint, the room length/width). Training sets combine per-axis
uniform draws into a Cartesian product; reference sets used as prediction
ground truth are fully independent draws. All randomness is derived from a
single user seed through keyed sub-streams, so any part of a dataset can be
regenerated independently and the result never depends on evaluation order
or worker count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import channel
from .scene import Scene, variable_scene

__all__ = [
    "RX_Z_MAX",
    "ChannelSample",
    "Dataset",
    "SplitSets",
    "NormStats",
    "generate_fixed",
    "generate_variable",
    "generate_reference",
    "generate_reference_variable",
    "add_noise",
    "split",
    "subsample",
    "fit_norm",
    "apply_norm",
    "invert_norm",
]

# Receivers live between the floor and desk/head height, never near the ceiling.
RX_Z_MAX = 1.7

# Floor for noisy linear powers so the dBm transform stays defined.
_POWER_FLOOR_MW = 1e-12

FIXED_FEATURES = ("x", "y", "z")
VARIABLE_FEATURES = ("x", "y", "z", "lx", "ly")


def _stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key); the same key always replays."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# ---------------------------------------------------------------------------
# Container types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelSample:
    """One labelled row: RSS plus the inputs that produced it."""

    rss_dbm: float
    x: float
    y: float
    z: float
    lx: float | None = None
    ly: float | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable column store of samples.

    `features` is (n, k) float64 ordered as `feature_names`; `rss_dbm` is the
    (n,) target column. `meta` records how the rows were produced (generator,
    seeds, scene) so a dataset can be regenerated bit-for-bit.
    """

    feature_names: tuple[str, ...]
    features: np.ndarray
    rss_dbm: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        rss = np.ascontiguousarray(self.rss_dbm, dtype=np.float64)
        if feats.ndim != 2 or rss.ndim != 1 or feats.shape[0] != rss.shape[0]:
            raise ValueError("features must be (n, k) and rss_dbm (n,) with matching n")
        if feats.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length does not match feature columns")
        if not np.all(np.isfinite(rss)):
            raise ValueError("rss_dbm contains non-finite values")
        feats.setflags(write=False)
        rss.setflags(write=False)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "rss_dbm", rss)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> ChannelSample:
        row = dict(zip(self.feature_names, self.features[i]))
        return ChannelSample(
            rss_dbm=float(self.rss_dbm[i]),
            x=float(row["x"]),
            y=float(row["y"]),
            z=float(row["z"]),
            lx=float(row["lx"]) if "lx" in row else None,
            ly=float(row["ly"]) if "ly" in row else None,
        )

    def take(self, indices, extra_meta: dict | None = None) -> "Dataset":
        """New dataset holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        meta = dict(self.meta)
        if extra_meta:
            meta.update(extra_meta)
        return Dataset(
            feature_names=self.feature_names,
            features=self.features[idx],
            rss_dbm=self.rss_dbm[idx],
            meta=meta,
        )

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        """Write `<path>` as CSV plus a `<stem>.meta.json` sidecar."""
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(("rss_dbm",) + self.feature_names) + "\n")
            for i in range(len(self)):
                cells = [repr(float(self.rss_dbm[i]))]
                cells += [repr(float(v)) for v in self.features[i]]
                f.write(",".join(cells) + "\n")
        sidecar = {"feature_names": list(self.feature_names), "n_rows": len(self), **self.meta}
        with open(path.with_suffix(".meta.json"), "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split(",")
            if header[0] != "rss_dbm":
                raise ValueError(f"{path} is not a dataset CSV (header {header[:1]!r})")
            body = np.loadtxt(f, delimiter=",", ndmin=2) if path.stat().st_size else None
        if body is None or body.size == 0:
            raise ValueError(f"{path} holds no rows")
        meta = {}
        sidecar = path.with_suffix(".meta.json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text(encoding="utf-8"))
            meta.pop("feature_names", None)
            meta.pop("n_rows", None)
        return cls(
            feature_names=tuple(header[1:]),
            features=body[:, 1:],
            rss_dbm=body[:, 0],
            meta=meta,
        )


@dataclass(frozen=True)
class SplitSets:
    """Disjoint train/validation/test partition of one dataset."""

    train: Dataset
    validation: Dataset
    test: Dataset


@dataclass(frozen=True)
class NormStats:
    """Z-score statistics fit on a training set (features and target)."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    def to_dict(self) -> dict:
        return {
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            feature_mean=np.asarray(d["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(d["feature_std"], dtype=np.float64),
            target_mean=float(d["target_mean"]),
            target_std=float(d["target_std"]),
        )


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _rss_for(scene: Scene, positions: np.ndarray, patch_edge_m: float) -> np.ndarray:
    p_los, p_nlos = channel.received_power_many(scene, positions, patch_edge_m)
    return channel.rss_dbm(p_los + p_nlos)


def generate_fixed(
    scene: Scene,
    per_axis: int,
    patch_edge_m: float = channel.DEFAULT_PATCH_EDGE_M,
    seed: int = 0,
) -> Dataset:
    """Cartesian product of per-axis uniform draws in a fixed-size room.

    Draws `per_axis` values on each of [0, lx], [0, ly], [0, RX_Z_MAX] and
    combines them into per_axis**3 rows with features (x, y, z).
    """
    if per_axis < 1:
        raise ValueError(f"per_axis must be >= 1, got {per_axis}")
    room = scene.room
    xs = _stream(seed, 0, 0).uniform(0.0, room.lx, per_axis)
    ys = _stream(seed, 0, 1).uniform(0.0, room.ly, per_axis)
    zs = _stream(seed, 0, 2).uniform(0.0, RX_Z_MAX, per_axis)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pos = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    rss = _rss_for(scene, pos, patch_edge_m)
    meta = {
        "generator": "fixed",
        "scene": scene.to_dict(),
        "per_axis": per_axis,
        "patch_edge_m": patch_edge_m,
        "seed": seed,
    }
    return Dataset(feature_names=FIXED_FEATURES, features=pos, rss_dbm=rss, meta=meta)


def generate_variable(
    led_count: int,
    per_xy: int,
    per_z: int,
    per_dim: int,
    patch_edge_m: float = channel.DEFAULT_PATCH_EDGE_M,
    seed: int = 0,
) -> Dataset:
    """Cartesian-product rows across rooms of varying footprint.

    Draws per_dim lengths and per_dim widths on [3, 7]; every (lx, ly) pair is
    one room. Each room gets its own per_xy x/y position fractions and per_z
    heights, producing per_xy**2 * per_z rows per room with features
    (x, y, z, lx, ly).
    """
    if min(per_xy, per_z, per_dim) < 1:
        raise ValueError("all draw counts must be >= 1")
    lxs = _stream(seed, 1, 0).uniform(3.0, 7.0, per_dim)
    lys = _stream(seed, 1, 1).uniform(3.0, 7.0, per_dim)
    blocks_x = []
    blocks_y = []
    for i, lx in enumerate(lxs):
        for j, ly in enumerate(lys):
            fx = _stream(seed, 2, i, j, 0).uniform(0.0, 1.0, per_xy)
            fy = _stream(seed, 2, i, j, 1).uniform(0.0, 1.0, per_xy)
            zs = _stream(seed, 2, i, j, 2).uniform(0.0, RX_Z_MAX, per_z)
            gx, gy, gz = np.meshgrid(fx * lx, fy * ly, zs, indexing="ij")
            pos = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
            scene = variable_scene(float(lx), float(ly), led_count)
            rss = _rss_for(scene, pos, patch_edge_m)
            n = len(pos)
            feats = np.column_stack([pos, np.full(n, lx), np.full(n, ly)])
            blocks_x.append(feats)
            blocks_y.append(rss)
    meta = {
        "generator": "variable",
        "led_count": led_count,
        "per_xy": per_xy,
        "per_z": per_z,
        "per_dim": per_dim,
        "patch_edge_m": patch_edge_m,
        "seed": seed,
    }
    return Dataset(
        feature_names=VARIABLE_FEATURES,
        features=np.concatenate(blocks_x),
        rss_dbm=np.concatenate(blocks_y),
        meta=meta,
    )


def generate_reference(
    scene: Scene,
    n: int,
    patch_edge_m: float = channel.DEFAULT_PATCH_EDGE_M,
    seed: int = 0,
) -> Dataset:
    """n fully independent uniform positions in a fixed room (ground truth)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    room = scene.room
    pos = np.column_stack(
        [
            _stream(seed, 3, 0).uniform(0.0, room.lx, n),
            _stream(seed, 3, 1).uniform(0.0, room.ly, n),
            _stream(seed, 3, 2).uniform(0.0, RX_Z_MAX, n),
        ]
    )
    rss = _rss_for(scene, pos, patch_edge_m)
    meta = {
        "generator": "reference",
        "scene": scene.to_dict(),
        "n": n,
        "patch_edge_m": patch_edge_m,
        "seed": seed,
    }
    return Dataset(feature_names=FIXED_FEATURES, features=pos, rss_dbm=rss, meta=meta)


def generate_reference_variable(
    led_count: int,
    n: int,
    patch_edge_m: float = channel.DEFAULT_PATCH_EDGE_M,
    seed: int = 0,
) -> Dataset:
    """n independent draws, each with its own room footprint on [3, 7]^2."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    lx = _stream(seed, 3, 3).uniform(3.0, 7.0, n)
    ly = _stream(seed, 3, 4).uniform(3.0, 7.0, n)
    x = _stream(seed, 3, 0).uniform(0.0, 1.0, n) * lx
    y = _stream(seed, 3, 1).uniform(0.0, 1.0, n) * ly
    z = _stream(seed, 3, 2).uniform(0.0, RX_Z_MAX, n)
    rss = np.empty(n)
    for i in range(n):
        scene = variable_scene(float(lx[i]), float(ly[i]), led_count)
        bd = channel.received_power(scene, (x[i], y[i], z[i]), patch_edge_m)
        rss[i] = channel.rss_dbm(bd.total_mw)
    meta = {
        "generator": "reference_variable",
        "led_count": led_count,
        "n": n,
        "patch_edge_m": patch_edge_m,
        "seed": seed,
    }
    return Dataset(
        feature_names=VARIABLE_FEATURES,
        features=np.column_stack([x, y, z, lx, ly]),
        rss_dbm=rss,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Noise injection
# ---------------------------------------------------------------------------

def add_noise(ds: Dataset, noise_factor: float, seed: int = 0) -> tuple[Dataset, float]:
    """Additive Gaussian noise in the linear power domain.

    sigma = noise_factor * std(P) over the dataset's clean linear powers; each
    power gets an independent zero-mean draw, is floored at 1e-12 mW, and is
    converted back to dBm. Returns the noisy dataset and the mean OSNR in dB,
    where per-row OSNR is clean power over sigma. A zero noise_factor returns
    the dataset unchanged with infinite OSNR.
    """
    if noise_factor < 0:
        raise ValueError(f"noise_factor must be >= 0, got {noise_factor}")
    if noise_factor == 0:
        return ds, math.inf
    p_clean = 10.0 ** (ds.rss_dbm / 10.0)
    sigma = noise_factor * float(np.std(p_clean))
    if sigma == 0.0:
        return ds, math.inf
    rng = _stream(seed, 4)
    p_noisy = np.maximum(p_clean + rng.normal(0.0, sigma, len(ds)), _POWER_FLOOR_MW)
    osnr_db = float(np.mean(10.0 * np.log10(p_clean / sigma)))
    meta = dict(ds.meta)
    meta.update({"noise_factor": noise_factor, "noise_seed": seed, "mean_osnr_db": osnr_db})
    noisy = Dataset(
        feature_names=ds.feature_names,
        features=ds.features,
        rss_dbm=10.0 * np.log10(p_noisy),
        meta=meta,
    )
    return noisy, osnr_db


# ---------------------------------------------------------------------------
# Splitting and subsampling
# ---------------------------------------------------------------------------

def split(ds: Dataset, seed: int = 0) -> SplitSets:
    """Seeded shuffle, then 60/20/20 (train/validation get the floors)."""
    n = len(ds)
    if n < 5:
        raise ValueError(f"need at least 5 rows to split 60/20/20, got {n}")
    perm = _stream(seed, 5).permutation(n)
    n_tr = int(math.floor(0.6 * n))
    n_va = int(math.floor(0.2 * n))
    return SplitSets(
        train=ds.take(perm[:n_tr], {"split": "train", "split_seed": seed}),
        validation=ds.take(perm[n_tr : n_tr + n_va], {"split": "validation", "split_seed": seed}),
        test=ds.take(perm[n_tr + n_va :], {"split": "test", "split_seed": seed}),
    )


def subsample(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """Uniform sample of n rows without replacement."""
    if not 1 <= n <= len(ds):
        raise ValueError(f"subsample size must be in [1, {len(ds)}], got {n}")
    idx = _stream(seed, 6).choice(len(ds), size=n, replace=False)
    return ds.take(idx, {"subsample_n": n, "subsample_seed": seed})


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def fit_norm(train: Dataset) -> NormStats:
    """Z-score statistics from a training set; constant columns are rejected."""
    f_mean = train.features.mean(axis=0)
    f_std = train.features.std(axis=0)
    t_mean = float(train.rss_dbm.mean())
    t_std = float(train.rss_dbm.std())
    if np.any(f_std == 0.0):
        bad = train.feature_names[int(np.argmax(f_std == 0.0))]
        raise ValueError(f"feature {bad!r} is constant; cannot z-score")
    if t_std == 0.0:
        raise ValueError("target is constant; cannot z-score")
    return NormStats(feature_mean=f_mean, feature_std=f_std, target_mean=t_mean, target_std=t_std)


def apply_norm(stats: NormStats, features: np.ndarray, targets: np.ndarray | None = None):
    """Standardize features (and optionally targets) with training statistics."""
    xn = (np.asarray(features, dtype=np.float64) - stats.feature_mean) / stats.feature_std
    if targets is None:
        return xn
    yn = (np.asarray(targets, dtype=np.float64) - stats.target_mean) / stats.target_std
    return xn, yn


def invert_norm(stats: NormStats, features: np.ndarray, targets: np.ndarray | None = None):
    """Inverse of apply_norm."""
    x = np.asarray(features, dtype=np.float64) * stats.feature_std + stats.feature_mean
    if targets is None:
        return x
    y = np.asarray(targets, dtype=np.float64) * stats.target_std + stats.target_mean
    return x, y
