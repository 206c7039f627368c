"""Non-learned selection arms: random, centroid-distance band, and the
truth-flag oracle used as an upper bound on synthetic benchmarks.

Selection counts reference the original training class sizes (carried by the
centroids), so ratio 0.5 adds half a class's worth of candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .featurestore import CandidatePool, ClassCentroids, pool_distances
from .numkit import RngStream


@dataclass
class SelectionMask:
    """Per-class selected candidate indices plus how they were chosen."""

    method: str
    ratio: float | None
    per_class: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.per_class = {int(c): [int(i) for i in idx] for c, idx in self.per_class.items()}
        for c, idx in self.per_class.items():
            if len(set(idx)) != len(idx):
                raise ValidationError(f"duplicate candidate indices for class {c}")
            if idx and min(idx) < 0:
                raise ValidationError(f"negative candidate index for class {c}")

    def validate_against(self, pool: CandidatePool) -> None:
        for c, idx in self.per_class.items():
            if c not in pool.features:
                raise ValidationError(f"mask class {c} not in pool")
            if idx and max(idx) >= pool.size(c):
                raise ValidationError(f"mask index {max(idx)} out of range for class {c}")

    def total_selected(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in sorted(self.per_class.items())}

    def as_candidates(self, pool: CandidatePool) -> list[tuple[int, np.ndarray]]:
        self.validate_against(pool)
        out = []
        for c in sorted(self.per_class):
            for i in self.per_class[c]:
                out.append((c, pool.features[c][i]))
        return out

    def corrupted_fraction(self, pool: CandidatePool) -> float:
        if pool.clean_flags is None:
            raise ValidationError("pool carries no truth flags")
        total = self.total_selected()
        if total == 0:
            return 0.0
        bad = sum(int((~pool.clean_flags[c][idx]).sum()) for c, idx in self.per_class.items() if idx)
        return bad / total

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "ratio": self.ratio,
            "per_class": {str(c): idx for c, idx in sorted(self.per_class.items())},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SelectionMask":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["method"], d.get("ratio"),
                   {int(c): idx for c, idx in d["per_class"].items()})


def _requested_counts(pool: CandidatePool, centroids: ClassCentroids, ratio: float) -> dict[int, int]:
    counts = {}
    for c in pool.class_ids:
        want = int(np.ceil(ratio * int(centroids.counts[c])))
        counts[c] = min(want, pool.size(c))
    return counts


def select_random(pool: CandidatePool, centroids: ClassCentroids, ratio: float,
                  rng: RngStream) -> SelectionMask:
    """Uniformly sample ceil(ratio * original class size) per class, without
    replacement, capped at the pool size."""
    if not (0.0 < ratio <= 1.0):
        raise ConfigError(f"selection ratio must lie in (0, 1], got {ratio}")
    gen = rng.generator()
    per_class = {}
    for c, want in _requested_counts(pool, centroids, ratio).items():
        chosen = gen.choice(pool.size(c), size=want, replace=False)
        per_class[c] = sorted(int(i) for i in chosen)
    return SelectionMask("random", ratio, per_class)


def select_by_centroid_distance(
    pool: CandidatePool,
    centroids: ClassCentroids,
    ratio: float,
    band: tuple[float, float] = (10.0, 90.0),
    fill_order: str = "nearest-first",
) -> SelectionMask:
    """Drop candidates outside the [p_low, p_high] distance percentile band,
    then fill the requested count from the survivors.

    nearest-first takes ascending distances; band-center-first takes the
    survivors closest to the band's median distance.
    """
    p_low, p_high = band
    if not (0.0 <= p_low < p_high <= 100.0):
        raise ConfigError(f"percentile band must satisfy 0 <= low < high <= 100, got {band}")
    if fill_order not in ("nearest-first", "band-center-first"):
        raise ConfigError(f"unknown fill order {fill_order!r}")
    distances = pool_distances(pool, centroids)
    per_class = {}
    for c, want in _requested_counts(pool, centroids, ratio).items():
        d = distances[c]
        lo, hi = np.percentile(d, [p_low, p_high])
        survivors = [i for i in range(len(d)) if lo <= d[i] <= hi]
        if not survivors:
            raise ValidationError(
                f"percentile band {band} leaves no candidates for class {c}; widen the band"
            )
        if fill_order == "nearest-first":
            survivors.sort(key=lambda i: (d[i], i))
        else:
            center = float(np.median(d[survivors]))
            survivors.sort(key=lambda i: (abs(d[i] - center), i))
        per_class[c] = sorted(survivors[:want])
    return SelectionMask("centroid-distance", ratio, per_class)


def select_oracle(pool: CandidatePool, centroids: ClassCentroids,
                  ratio: float | None = None) -> SelectionMask:
    """Select only clean-flagged candidates, nearest-centroid-first.

    ratio=None requests every clean candidate; otherwise the per-class count
    is ceil(ratio * original class size), capped at the clean count.
    """
    if pool.clean_flags is None:
        raise ValidationError("oracle selection needs truth flags on the pool")
    distances = pool_distances(pool, centroids)
    per_class = {}
    for c in pool.class_ids:
        flags = pool.clean_flags[c]
        clean = [i for i in range(pool.size(c)) if flags[i]]
        clean.sort(key=lambda i: (distances[c][i], i))
        if ratio is None:
            want = len(clean)
        else:
            want = min(int(np.ceil(ratio * int(centroids.counts[c]))), len(clean))
        per_class[c] = sorted(clean[:want])
    return SelectionMask("oracle", ratio, per_class)
