"""Over-decomposition of a rank's domain into subdomains.

Coordinates are absolute: a subdomain slab ``[lo, hi)`` refers to global
cell indexes, never to offsets inside the rank's storage.  Storage adds
``halo`` ghost layers on every axis, so ``LocalGrid.index`` is the only
place where absolute coordinates become array positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .regions import Region


class Face(NamedTuple):
    axis: int
    side: int  # -1 low face, +1 high face

    @property
    def opposite(self) -> Face:
        return Face(self.axis, -self.side)


def faces(ndim: int) -> list[Face]:
    return [Face(a, s) for a in range(ndim) for s in (-1, 1)]


@dataclass(frozen=True)
class DomainSpec:
    """Global problem shape, rank grid, halo width and this rank's position.

    ``origin`` is the absolute index of the first global interior cell (0
    for C-style code, 1 when mirroring Fortran-style numbering).  ``order``
    is the memory layout: contiguous slabs are cut along the slowest-varying
    axis, i.e. axis 0 for ``"C"`` and the last axis for ``"F"``.
    """

    global_extents: tuple[int, ...]
    rank_grid: tuple[int, ...]
    halo: int = 1
    coords: tuple[int, ...] | None = None
    order: str = "C"
    origin: int = 0

    def __post_init__(self):
        ge, rg = tuple(self.global_extents), tuple(self.rank_grid)
        object.__setattr__(self, "global_extents", ge)
        object.__setattr__(self, "rank_grid", rg)
        if self.coords is None:
            object.__setattr__(self, "coords", (0,) * len(ge))
        else:
            object.__setattr__(self, "coords", tuple(self.coords))
        if len(ge) != len(rg) or len(ge) != len(self.coords):
            raise ValueError("extents, rank grid and coords must have the same dimension")
        if self.halo < 1:
            raise ValueError("halo width must be >= 1")
        if self.order not in ("C", "F"):
            raise ValueError("order must be 'C' or 'F'")
        for n, p, c in zip(ge, rg, self.coords):
            if p < 1 or n < p or n % p:
                raise ValueError(f"global extent {n} is not divisible into {p} rank domains")
            if not 0 <= c < p:
                raise ValueError(f"rank coordinate {c} outside rank grid {p}")

    @property
    def ndim(self) -> int:
        return len(self.global_extents)

    @property
    def contiguous_axis(self) -> int:
        return 0 if self.order == "C" else self.ndim - 1

    def rank_box(self) -> tuple[tuple[int, int], ...]:
        box = []
        for n, p, c in zip(self.global_extents, self.rank_grid, self.coords):
            w = n // p
            box.append((self.origin + c * w, self.origin + (c + 1) * w))
        return tuple(box)

    def with_coords(self, coords: Sequence[int]) -> DomainSpec:
        return DomainSpec(self.global_extents, self.rank_grid, self.halo, tuple(coords), self.order, self.origin)


@dataclass(frozen=True)
class Subdomain:
    id: int
    owner: int
    slab: tuple[tuple[int, int], ...]
    boundary: tuple[tuple[bool, bool], ...]
    regions: tuple[Region, ...] = field(default=(), compare=False)

    def extent(self, axis: int) -> int:
        lo, hi = self.slab[axis]
        return hi - lo

    def on_boundary(self, face: Face) -> bool:
        return self.boundary[face.axis][0 if face.side < 0 else 1]

    @property
    def is_boundary(self) -> bool:
        return any(lo or hi for lo, hi in self.boundary)

    @property
    def size(self) -> int:
        n = 1
        for lo, hi in self.slab:
            n *= hi - lo
        return n


def _boundary_flags(slab, box):
    return tuple((lo == blo, hi == bhi) for (lo, hi), (blo, bhi) in zip(slab, box))


def _cuts(lo: int, hi: int, grainsize: int) -> list[tuple[int, int]]:
    return [(a, min(a + grainsize, hi)) for a in range(lo, hi, grainsize)]


def rank_subdomain(domain: DomainSpec, owner: int = 0) -> Subdomain:
    """The whole rank domain as a single subdomain."""
    box = domain.rank_box()
    return Subdomain(0, owner, box, _boundary_flags(box, box))


def partition(domain: DomainSpec, grainsize: int, cut_axis: int | None = None, owner: int = 0) -> list[Subdomain]:
    """Cut the rank domain into slabs of ``grainsize`` cells along ``cut_axis``.

    Only the slowest-varying axis yields slabs that are contiguous in
    memory; any other axis is rejected.  The last slab takes the remainder.
    """
    if grainsize < 1:
        raise ValueError("grainsize must be >= 1")
    if cut_axis is None:
        cut_axis = domain.contiguous_axis
    if not 0 <= cut_axis < domain.ndim:
        raise ValueError(f"cut axis {cut_axis} out of range for a {domain.ndim}-D domain")
    if cut_axis != domain.contiguous_axis:
        raise ValueError(
            f"cutting axis {cut_axis} gives non-contiguous slabs for order {domain.order!r}; "
            f"cut axis {domain.contiguous_axis} instead"
        )
    box = domain.rank_box()
    subs = []
    for i, (a, b) in enumerate(_cuts(*box[cut_axis], grainsize)):
        slab = tuple((a, b) if ax == cut_axis else rng for ax, rng in enumerate(box))
        subs.append(Subdomain(i, owner, slab, _boundary_flags(slab, box)))
    return subs


def blocks(domain: DomainSpec, block_shape: Sequence[int], owner: int = 0) -> list[list[Subdomain]]:
    """2-D tiling of a rank domain into compute blocks, row-major.

    Unlike :func:`partition` this cuts every axis; tiles are compute units
    only and are never sent as messages.
    """
    if domain.ndim != 2 or len(block_shape) != 2:
        raise ValueError("blocks() tiles 2-D domains")
    if min(block_shape) < 1:
        raise ValueError("block extents must be >= 1")
    box = domain.rank_box()
    rows = _cuts(*box[0], block_shape[0])
    cols = _cuts(*box[1], block_shape[1])
    grid = []
    k = 0
    for r in rows:
        line = []
        for c in cols:
            slab = (r, c)
            line.append(Subdomain(k, owner, slab, _boundary_flags(slab, box)))
            k += 1
        grid.append(line)
    return grid


@dataclass(frozen=True)
class GrainsizeVerdict:
    ok: bool
    reason: str

    def __bool__(self):
        return self.ok


def validate_grainsize(grainsize: int, halo: int, parallel: bool) -> GrainsizeVerdict:
    """Check that halo exchange between neighbouring ranks stays aligned.

    When messages travel parallel to the subdomain cuts, the subdomains on
    both sides of the rank boundary must pair up one-to-one over the halo
    layers; this holds iff the grainsize divides the halo width or the halo
    width divides the grainsize.  Exchanges orthogonal to the cuts are
    always valid.
    """
    if grainsize < 1:
        return GrainsizeVerdict(False, "grainsize must be >= 1")
    if not parallel:
        return GrainsizeVerdict(True, "communication orthogonal to the cuts is unconstrained")
    if halo % grainsize == 0 or grainsize % halo == 0:
        return GrainsizeVerdict(True, f"grainsize {grainsize} aligns with halo width {halo}")
    return GrainsizeVerdict(
        False,
        f"grainsize {grainsize} does not align with halo width N_h={halo} for communication parallel "
        f"to the subdomain cuts: the grainsize must divide N_h or be a multiple of it",
    )


def to_local(sub: Subdomain) -> tuple[tuple[int, int], ...]:
    """Absolute loop bounds ``(i0, i1)`` per axis, half-open, covering exactly the slab."""
    return tuple(sub.slab)


class LocalGrid:
    """A rank's array with ``halo`` ghost layers on every axis."""

    def __init__(self, domain: DomainSpec, dtype=np.float64, fill=0.0):
        self.domain = domain
        self.box = domain.rank_box()
        h = domain.halo
        shape = tuple(hi - lo + 2 * h for lo, hi in self.box)
        self.data = np.full(shape, fill, dtype=dtype, order=domain.order)
        self.offset = tuple(lo - h for lo, _ in self.box)

    @property
    def halo(self) -> int:
        return self.domain.halo

    def index(self, ranges: Sequence[tuple[int, int]]) -> tuple[slice, ...]:
        return tuple(slice(lo - o, hi - o) for (lo, hi), o in zip(ranges, self.offset))

    def view(self, ranges: Sequence[tuple[int, int]]) -> np.ndarray:
        for (lo, hi), (blo, bhi) in zip(ranges, self.box):
            if lo < blo - self.halo or hi > bhi + self.halo:
                raise IndexError(f"range [{lo}, {hi}) outside storage")
        return self.data[self.index(ranges)]

    def interior(self) -> np.ndarray:
        return self.view(self.box)

    def __getitem__(self, coords):
        return self.data[tuple(c - o for c, o in zip(coords, self.offset))]

    def __setitem__(self, coords, value):
        self.data[tuple(c - o for c, o in zip(coords, self.offset))] = value


def halo_slab(grid: LocalGrid, sub: Subdomain, face: Face, ghost: bool) -> tuple[tuple[int, int], ...]:
    """Absolute ranges of the ``halo``-deep layer next to ``face`` (inside, or the ghosts outside)."""
    h = grid.halo
    lo, hi = sub.slab[face.axis]
    if face.side > 0:
        rng = (hi, hi + h) if ghost else (hi - h, hi)
    else:
        rng = (lo - h, lo) if ghost else (lo, lo + h)
    return tuple(rng if ax == face.axis else r for ax, r in enumerate(sub.slab))


@dataclass
class HaloBuffer:
    """Contiguous staging array for one face of a subdomain."""

    face: Face
    direction: str
    data: np.ndarray
    shape: tuple[int, ...]
    region: Region | None = None


def _require_boundary(sub: Subdomain, face: Face) -> None:
    if not sub.on_boundary(face):
        raise ValueError(f"face {tuple(face)} of subdomain {sub.id} is interior to the rank domain")


def pack_halo(grid: LocalGrid, sub: Subdomain, face: Face, out: HaloBuffer | None = None) -> HaloBuffer:
    """Copy the interior layer adjacent to ``face`` into a contiguous send buffer."""
    _require_boundary(sub, face)
    src = grid.view(halo_slab(grid, sub, face, ghost=False))
    if out is None:
        out = HaloBuffer(face, "send", np.empty(src.size, dtype=grid.data.dtype), src.shape)
    out.data.reshape(src.shape)[...] = src
    return out


def recv_buffer(grid: LocalGrid, sub: Subdomain, face: Face) -> HaloBuffer:
    """Empty staging buffer sized for the ghost layer beyond ``face``."""
    _require_boundary(sub, face)
    shape = grid.view(halo_slab(grid, sub, face, ghost=True)).shape
    return HaloBuffer(face, "recv", np.empty(int(np.prod(shape)), dtype=grid.data.dtype), shape)


def unpack_halo(buf: HaloBuffer, grid: LocalGrid, sub: Subdomain, face: Face) -> None:
    """Write a received staging buffer into the ghost layer beyond ``face``."""
    _require_boundary(sub, face)
    dst = grid.view(halo_slab(grid, sub, face, ghost=True))
    if buf.data.size != dst.size:
        raise ValueError(f"halo buffer holds {buf.data.size} values, ghost layer needs {dst.size}")
    dst[...] = buf.data.reshape(dst.shape)


def mirror_ghosts(grid: LocalGrid, axis: int, symmetry_point: int, depth: int | None = None) -> None:
    """Symmetry boundary in absolute indexes: ``v[i] = v[2*s - i]`` for ``i`` in ``[s+1, s+depth]``."""
    depth = grid.halo if depth is None else depth
    s = symmetry_point
    others = [r for ax, r in enumerate(grid.box)]
    for i in range(s + 1, s + depth + 1):
        dst = list(others)
        src = list(others)
        dst[axis] = (i, i + 1)
        src[axis] = (2 * s - i, 2 * s - i + 1)
        grid.view(dst)[...] = grid.view(src)
