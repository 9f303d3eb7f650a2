"""Porous substrates: non-overlapping circles (axons) inside a square.

Coordinates are in micrometres with the domain square spanning
``[0, side] x [0, side]``.  Circles may stick out of the square; only their
in-domain part matters when diffusivity is assigned.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import PackingError, ParameterError, ParseError

#: Default radius range in micrometres (1901-circle case study).
DEFAULT_RMIN = 0.150
DEFAULT_RMAX = 1.141
DEFAULT_SIDE = 50.0
DEFAULT_COUNT = 1901
DEFAULT_K0 = 450.0


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ParameterError(f"circle radius must be positive, got {self.r}")

    @property
    def center(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class Substrate:
    """Square domain of side ``side`` with circular axons and diffusivity ``k0``.

    ``k0`` is in um^2/s and applies to the extracellular region; the axons
    are non-diffusive.
    """

    side: float
    circles: tuple = ()
    k0: float = DEFAULT_K0
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.side > 0:
            raise ParameterError(f"side must be positive, got {self.side}")
        if not self.k0 > 0:
            raise ParameterError(f"k0 must be positive, got {self.k0}")
        circles = tuple(self.circles)
        object.__setattr__(self, "circles", circles)
        if circles:
            arr = np.array([(c.x, c.y, c.r) for c in circles], dtype=float)
        else:
            arr = np.zeros((0, 3))
        arr.setflags(write=False)
        object.__setattr__(self, "_arrays", (arr[:, :2], arr[:, 2]))

    @classmethod
    def from_arrays(cls, side, centers, radii, k0=DEFAULT_K0):
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        radii = np.asarray(radii, dtype=float).reshape(-1)
        circles = tuple(Circle(float(x), float(y), float(r)) for (x, y), r in zip(centers, radii))
        return cls(float(side), circles, float(k0))

    @property
    def centers(self) -> np.ndarray:
        return self._arrays[0]

    @property
    def radii(self) -> np.ndarray:
        return self._arrays[1]

    def __len__(self):
        return len(self.circles)

    @property
    def center(self):
        return (0.5 * self.side, 0.5 * self.side)

    def overlaps(self, tol=1e-12):
        """Return index pairs ``(i, j)`` of circles closer than ``r_i + r_j - tol``."""
        return _overlapping_pairs(self.centers, self.radii, tol)

    def validate(self, tol=1e-12):
        """Report invariant violations as human-readable strings (empty if valid)."""
        problems = [
            f"circles {i} and {j} overlap" for i, j in self.overlaps(tol)
        ]
        return problems

    def area_fraction(self, resolution=1000):
        """Fraction of the domain square covered by disks (pixel estimate)."""
        return float(np.mean(self.contains_axon_many(_pixel_centers(self.side, resolution))))

    def contains_axon(self, p) -> bool:
        """True iff point ``p`` lies in some closed disk."""
        return bool(self.contains_axon_many(np.asarray(p, dtype=float).reshape(1, 2))[0])

    def contains_axon_many(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self) == 0:
            return np.zeros(len(points), dtype=bool)
        return self._index().query(points)

    def _index(self):
        return _circle_index(self)


def _pixel_centers(side, n):
    c = (np.arange(n) + 0.5) * (side / n)
    xx, yy = np.meshgrid(c, c)
    return np.column_stack([xx.ravel(), yy.ravel()])


class CircleGrid:
    """Uniform bucket grid over circles for point and proximity queries."""

    def __init__(self, centers, radii, cell=None, pad=0.0):
        self.centers = np.asarray(centers, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        lo = (self.centers - self.radii[:, None]).min(axis=0) - pad
        hi = (self.centers + self.radii[:, None]).max(axis=0) + pad
        if cell is None:
            cell = max(2.0 * float(self.radii.max()) + pad, 1e-9)
        self.cell = float(cell)
        self.origin = lo
        self.shape = np.maximum(np.ceil((hi - lo) / self.cell).astype(np.int64), 1)
        nx, ny = (int(s) for s in self.shape)
        # each circle registered in every cell its padded bounding box touches
        i0 = np.floor((self.centers[:, 0] - self.radii - pad - lo[0]) / self.cell).astype(np.int64)
        i1 = np.floor((self.centers[:, 0] + self.radii + pad - lo[0]) / self.cell).astype(np.int64)
        j0 = np.floor((self.centers[:, 1] - self.radii - pad - lo[1]) / self.cell).astype(np.int64)
        j1 = np.floor((self.centers[:, 1] + self.radii + pad - lo[1]) / self.cell).astype(np.int64)
        i0, i1 = np.clip(i0, 0, nx - 1), np.clip(i1, 0, nx - 1)
        j0, j1 = np.clip(j0, 0, ny - 1), np.clip(j1, 0, ny - 1)
        cells, items = [], []
        for c in range(len(self.radii)):
            ii, jj = np.meshgrid(np.arange(i0[c], i1[c] + 1), np.arange(j0[c], j1[c] + 1))
            cells.append((jj * nx + ii).ravel())
            items.append(np.full(ii.size, c, dtype=np.int64))
        cells = np.concatenate(cells)
        items = np.concatenate(items)
        order = np.lexsort((items, cells))
        self.items = items[order]
        counts = np.bincount(cells, minlength=nx * ny)
        self.start = np.zeros(nx * ny + 1, dtype=np.int64)
        np.cumsum(counts, out=self.start[1:])

    def cell_of(self, points):
        ij = np.floor((points - self.origin) / self.cell).astype(np.int64)
        inside = np.all((ij >= 0) & (ij < self.shape), axis=1)
        ij = np.clip(ij, 0, self.shape - 1)
        return ij[:, 1] * self.shape[0] + ij[:, 0], inside

    def query(self, points):
        """Closed-disk membership for each point."""
        cell, inside = self.cell_of(points)
        out = np.zeros(len(points), dtype=bool)
        counts = self.start[cell + 1] - self.start[cell]
        counts[~inside] = 0
        max_count = int(counts.max()) if len(counts) else 0
        for slot in range(max_count):
            live = np.flatnonzero(counts > slot)
            c = self.items[self.start[cell[live]] + slot]
            d = points[live] - self.centers[c]
            hit = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] <= self.radii[c] ** 2
            out[live[hit]] = True
        return out


@lru_cache(maxsize=16)
def _circle_index(substrate):
    return CircleGrid(substrate.centers, substrate.radii)


def _overlapping_pairs(centers, radii, tol):
    n = len(radii)
    if n < 2:
        return []
    grid = CircleGrid(centers, radii)
    pairs = set()
    for cell in range(len(grid.start) - 1):
        members = grid.items[grid.start[cell]:grid.start[cell + 1]]
        if len(members) < 2:
            continue
        c = centers[members]
        d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
        bad = d < radii[members][:, None] + radii[members][None, :] - tol
        for a, b in zip(*np.nonzero(np.triu(bad, 1))):
            i, j = sorted((int(members[a]), int(members[b])))
            pairs.add((i, j))
    return sorted(pairs)


# --------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution for radii, clipped to ``[rmin, rmax]``."""

    shape: float
    scale: float
    rmin: float = DEFAULT_RMIN
    rmax: float = DEFAULT_RMAX

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ParameterError("gamma shape and scale must be positive")
        if not (0 < self.rmin < self.rmax):
            raise ParameterError(f"need 0 < rmin < rmax, got {self.rmin}, {self.rmax}")

    @classmethod
    def from_range(cls, rmin=DEFAULT_RMIN, rmax=DEFAULT_RMAX, lower_q=0.01, upper_q=0.99):
        """Pick shape/scale so the given quantiles land on ``rmin`` and ``rmax``."""
        if not (0 < rmin < rmax):
            raise ParameterError(f"need 0 < rmin < rmax, got {rmin}, {rmax}")
        shape, scale = _gamma_from_quantiles(float(rmin), float(rmax), lower_q, upper_q)
        return cls(shape, scale, rmin, rmax)


@lru_cache(maxsize=32)
def _gamma_from_quantiles(rmin, rmax, lower_q, upper_q):
    from scipy import optimize, stats

    target = math.log(rmax / rmin)

    def gap(log_shape):
        a = math.exp(log_shape)
        return math.log(stats.gamma.ppf(upper_q, a) / stats.gamma.ppf(lower_q, a)) - target

    # the quantile ratio falls monotonically with shape
    log_shape = optimize.brentq(gap, math.log(1e-2), math.log(1e4), xtol=1e-14)
    shape = math.exp(log_shape)
    scale = rmin / stats.gamma.ppf(lower_q, shape)
    return shape, scale


def sample_radii(params: GammaParams, n: int, seed) -> np.ndarray:
    """Draw ``n`` gamma radii, clipped into ``[params.rmin, params.rmax]``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    r = rng.gamma(params.shape, params.scale, size=int(n))
    return np.clip(r, params.rmin, params.rmax)


def pack_circles(side, radii, seed, max_attempts=100_000, k0=DEFAULT_K0) -> Substrate:
    """Random sequential adsorption of ``radii`` into the square ``[0, side]^2``.

    Circles are placed largest first at uniformly random centres; a candidate
    overlapping an already placed circle is rejected and redrawn.

    Raises
    ------
    PackingError
        If some circle cannot be placed within ``max_attempts`` draws.  The
        error carries the index (into ``radii``) of the circle that failed.
    """
    if not side > 0:
        raise ParameterError(f"side must be positive, got {side}")
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if radii.size == 0:
        raise ParameterError("radii must be nonempty")
    if np.any(radii <= 0):
        raise ParameterError("radii must be positive")
    rng = np.random.default_rng(seed)
    order = np.argsort(-radii, kind="stable")

    rmax = float(radii.max())
    cell = 2.0 * rmax
    nc = max(int(math.ceil((side + 2 * rmax) / cell)), 1)
    buckets = [[] for _ in range(nc * nc)]
    cx = np.empty(radii.size)
    cy = np.empty(radii.size)
    cr = np.empty(radii.size)
    placed = 0

    def bucket(x, y):
        i = min(max(int((x + rmax) // cell), 0), nc - 1)
        j = min(max(int((y + rmax) // cell), 0), nc - 1)
        return i, j

    for idx in order:
        r = radii[idx]
        for _ in range(max_attempts):
            x, y = rng.uniform(0.0, side, size=2)
            i, j = bucket(x, y)
            ok = True
            for jj in range(max(j - 1, 0), min(j + 2, nc)):
                for ii in range(max(i - 1, 0), min(i + 2, nc)):
                    for k in buckets[jj * nc + ii]:
                        dx = x - cx[k]
                        dy = y - cy[k]
                        if dx * dx + dy * dy < (r + cr[k]) ** 2:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                cx[placed], cy[placed], cr[placed] = x, y, r
                buckets[j * nc + i].append(placed)
                placed += 1
                break
        else:
            raise PackingError(
                f"could not place circle {int(idx)} (radius {r:g}) after {max_attempts} attempts; "
                f"{placed} of {radii.size} placed",
                index=int(idx),
                placed=placed,
                partial=Substrate.from_arrays(
                    side, np.column_stack([cx[:placed], cy[:placed]]), cr[:placed], k0=k0
                ),
            )
    return Substrate.from_arrays(side, np.column_stack([cx, cy]), cr, k0=k0)


def generate_substrate(side=DEFAULT_SIDE, count=DEFAULT_COUNT, rmin=DEFAULT_RMIN, rmax=DEFAULT_RMAX,
                       k0=DEFAULT_K0, seed=0, max_attempts=100_000) -> Substrate:
    """Sample gamma radii and pack them; ``count=0`` gives a free substrate."""
    if count == 0:
        return Substrate(float(side), (), float(k0))
    params = GammaParams.from_range(rmin, rmax)
    seq = np.random.SeedSequence(seed)
    radius_seed, pack_seed = seq.spawn(2)
    radii = sample_radii(params, count, radius_seed)
    return pack_circles(side, radii, pack_seed, max_attempts=max_attempts, k0=k0)


# --------------------------------------------------------------------------
# file format

def format_substrate(substrate: Substrate) -> str:
    lines = [f"# substrate side={substrate.side!r} k0={substrate.k0!r}"]
    lines += [f"{c.x:.17g},{c.y:.17g},{c.r:.17g}" for c in substrate.circles]
    return "\n".join(lines) + "\n"


def substrate_digest(substrate: Substrate) -> str:
    """SHA-256 of the canonical text form; equal digests mean equal substrates."""
    return hashlib.sha256(format_substrate(substrate).encode("utf-8")).hexdigest()


def save_substrate(substrate: Substrate, path) -> None:
    Path(path).write_text(format_substrate(substrate), encoding="utf-8")


def parse_substrate(text: str, path=None) -> Substrate:
    side = k0 = None
    circles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].split()
            if body and body[0] == "substrate":
                try:
                    fields = dict(tok.split("=", 1) for tok in body[1:])
                    side = float(fields["side"])
                    k0 = float(fields["k0"])
                except (KeyError, ValueError) as exc:
                    raise ParseError(f"bad substrate header: {raw!r}", lineno, path) from exc
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 'x,y,r', got {raw!r}", lineno, path)
        try:
            x, y, r = (float(p) for p in parts)
            circles.append(Circle(x, y, r))
        except ValueError as exc:
            raise ParseError(f"bad circle line {raw!r}: {exc}", lineno, path) from exc
    if side is None:
        raise ParseError("missing '# substrate side=<L> k0=<k0>' header", None, path)
    try:
        return Substrate(side, tuple(circles), k0)
    except ParameterError as exc:
        raise ParseError(str(exc), None, path) from exc


def load_substrate(path) -> Substrate:
    return parse_substrate(Path(path).read_text(encoding="utf-8"), path=str(path))
