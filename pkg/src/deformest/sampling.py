"""Contact-displacement sampling protocols and dataset generation.

For each contact region, target displacements are laid out on a lattice (an
axis-aligned box grid around the contact centroid, or a spheroid oriented
along the fixed-to-contact direction with an optional surface-normal filter).
Each target is pushed through the incremental FEM solver and the resulting
full displacement field is stored as one sample.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .fem import FemError, deform
from .mesh import ScaleConvention, TetMesh, vertex_normals

__all__ = [
    "DatasetError",
    "DatasetFormatError",
    "MeshHashMismatchError",
    "SamplingSpec",
    "DeformationSample",
    "SampleFailure",
    "Dataset",
    "grid_points",
    "ellipsoid_points",
    "fixed_to_contact_direction",
    "region_surface_normal",
    "ellipsoid_spec_for_region",
    "sample_points_for_region",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "dataset_to_csv",
]

_MAGIC = b"DEFDS1\n"


class DatasetError(ValueError):
    """Invalid sampling specification or dataset content."""


class DatasetFormatError(DatasetError):
    """Malformed dataset file; byte_offset locates the problem."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte {byte_offset})")
        self.byte_offset = byte_offset


class MeshHashMismatchError(DatasetError):
    """Dataset was generated from a different mesh than the one supplied."""


@dataclass(frozen=True)
class SamplingSpec:
    """Where to place target displacements for one contact region.

    Box mode: axis-aligned lattice of the given full extents around `center`
    (contact centroid when None). Ellipsoid mode: cubic lattice inside a
    spheroid with radius r_para along the fixed-to-contact direction and
    r_perp orthogonal to it; when normal_filter is a vector, only offsets at
    a strictly acute angle to it survive. All lengths in simulation units.
    """

    mode: str
    spacing: float
    extents: tuple | None = None
    r_para: float | None = None
    r_perp: float | None = None
    center: tuple | None = None
    normal_filter: object = None  # None, "auto", or a 3-vector
    reference_length: float | None = None

    def __post_init__(self):
        if self.mode not in ("box", "ellipsoid"):
            raise DatasetError(f"mode must be 'box' or 'ellipsoid', got {self.mode!r}")
        if not self.spacing > 0:
            raise DatasetError(f"spacing must be positive, got {self.spacing}")
        if self.mode == "box":
            if self.extents is None or len(self.extents) != 3 or any(e < 0 for e in self.extents):
                raise DatasetError(f"box mode needs 3 non-negative extents, got {self.extents}")
        else:
            if not (self.r_para and self.r_para > 0 and self.r_perp and self.r_perp > 0):
                raise DatasetError(
                    f"ellipsoid mode needs positive radii, got r_para={self.r_para} r_perp={self.r_perp}"
                )
        if self.normal_filter is not None and not isinstance(self.normal_filter, str):
            v = np.asarray(self.normal_filter, dtype=float).reshape(3)
            norm = np.linalg.norm(v)
            if not norm > 0:
                raise DatasetError("normal_filter vector must be nonzero")
            object.__setattr__(self, "normal_filter", tuple(v / norm))
        if self.reference_length is not None and not self.reference_length > 0:
            raise DatasetError(f"reference_length must be positive, got {self.reference_length}")


def _axis_count(extent: float, spacing: float, axis: int) -> int:
    ratio = extent / spacing
    cells = round(ratio)
    if abs(ratio - cells) > 1e-9 * max(1.0, abs(cells)):
        raise DatasetError(
            f"extent {extent} on axis {axis} is not an integer multiple of spacing {spacing}"
        )
    return cells + 1


def grid_points(center, extents, spacing: float) -> np.ndarray:
    """Axis-aligned lattice centered at `center`, boundary included.

    extents are full edge lengths; each must be an integer multiple of
    spacing. Points are ordered lexicographically by lattice coordinate.
    """
    center = np.asarray(center, dtype=float).reshape(3)
    counts = [_axis_count(e, spacing, i) for i, e in enumerate(extents)]
    axes = [(np.arange(c) - (c - 1) / 2.0) * spacing for c in counts]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return center + np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


def _orthonormal_frame(v_fc) -> np.ndarray:
    """Rows: unit v_fc, then two orthogonal directions chosen deterministically."""
    v = np.asarray(v_fc, dtype=float).reshape(3)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise DatasetError("fixed-to-contact direction has zero length")
    e1 = v / norm
    pivot = np.zeros(3)
    pivot[np.argmin(np.abs(e1))] = 1.0  # global axis least parallel to e1
    e2 = pivot - np.dot(pivot, e1) * e1
    e2 /= np.linalg.norm(e2)
    e3 = np.cross(e1, e2)
    return np.vstack([e1, e2, e3])


def ellipsoid_points(spec: SamplingSpec, contact_centroid, v_fc) -> np.ndarray:
    """Cubic lattice points inside the sampling spheroid around the centroid.

    The lattice is aligned to the frame spanned by v_fc; points satisfy
    (d_para/r_para)^2 + (d_perp/r_perp)^2 <= 1 (boundary inclusive). With a
    normal filter, the offset must form a strictly acute angle with it.
    Ordered lexicographically by lattice coordinate.
    """
    if spec.mode != "ellipsoid":
        raise DatasetError(f"expected ellipsoid spec, got mode {spec.mode!r}")
    if isinstance(spec.normal_filter, str):
        raise DatasetError(f"unresolved normal_filter {spec.normal_filter!r}; resolve it first")
    centroid = np.asarray(contact_centroid, dtype=float).reshape(3)
    frame = _orthonormal_frame(v_fc)
    h = spec.spacing
    ni = int(np.floor(spec.r_para / h * (1 + 1e-12)))
    nj = int(np.floor(spec.r_perp / h * (1 + 1e-12)))
    ii, jj, kk = np.meshgrid(
        np.arange(-ni, ni + 1), np.arange(-nj, nj + 1), np.arange(-nj, nj + 1), indexing="ij"
    )
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    d_para = ii * h
    d_perp_sq = (jj * h) ** 2 + (kk * h) ** 2
    inside = (d_para / spec.r_para) ** 2 + d_perp_sq / spec.r_perp**2 <= 1.0
    offsets = (
        ii[inside, None] * h * frame[0]
        + jj[inside, None] * h * frame[1]
        + kk[inside, None] * h * frame[2]
    )
    if spec.normal_filter is not None:
        v_nv = np.asarray(spec.normal_filter, dtype=float)
        offsets = offsets[offsets @ v_nv > 0.0]
    return centroid + offsets


def fixed_to_contact_direction(mesh: TetMesh, region: str):
    """(unit direction, distance) from the fixed-vertex centroid to the region centroid."""
    if region not in mesh.contact_regions:
        raise DatasetError(f"unknown contact region {region!r}")
    if mesh.fixed_ids.size == 0:
        raise DatasetError("mesh has no fixed vertices; fixed-to-contact direction undefined")
    v = mesh.vertices[mesh.contact_regions[region]].mean(axis=0) - mesh.vertices[
        mesh.fixed_ids
    ].mean(axis=0)
    length = float(np.linalg.norm(v))
    if not length > 0:
        raise DatasetError(f"region {region!r} centroid coincides with the fixed centroid")
    return v / length, length


def region_surface_normal(mesh: TetMesh, region: str) -> np.ndarray:
    """Unit mean of the boundary-vertex normals over a contact region."""
    normals = vertex_normals(mesh)
    ids = mesh.contact_regions[region]
    missing = [int(v) for v in ids if int(v) not in normals]
    if missing:
        raise DatasetError(f"region {region!r} vertices {missing} are not on the boundary surface")
    mean = np.mean([normals[int(v)] for v in ids], axis=0)
    norm = np.linalg.norm(mean)
    if not norm > 0:
        raise DatasetError(f"region {region!r} normals average to zero")
    return mean / norm


def ellipsoid_spec_for_region(
    mesh: TetMesh,
    region: str,
    r_para_ratio: float,
    r_perp_ratio: float,
    spacing_ratio: float = 0.01,
    reference_length: float | None = None,
    normal_filter="auto",
) -> SamplingSpec:
    """Ellipsoid spec with radii and spacing given as ratios of the reference length.

    The reference length defaults to the fixed-to-contact distance; pass it
    explicitly (e.g. an object diameter) to override. normal_filter "auto"
    averages the surface normals of the region's vertices; a vector overrides
    the direction; None disables the filter.
    """
    _, l = fixed_to_contact_direction(mesh, region)
    if reference_length is not None:
        l = reference_length
    if isinstance(normal_filter, str):
        if normal_filter != "auto":
            raise DatasetError(f"normal_filter must be 'auto', None, or a vector, got {normal_filter!r}")
        normal_filter = tuple(region_surface_normal(mesh, region))
    return SamplingSpec(
        mode="ellipsoid",
        spacing=spacing_ratio * l,
        r_para=r_para_ratio * l,
        r_perp=r_perp_ratio * l,
        normal_filter=normal_filter,
        reference_length=l,
    )


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class DeformationSample:
    """One FEM run: the prescribed contact translation and the full field."""

    region: str
    target_disp: np.ndarray
    u_all: np.ndarray  # (3 * n_free,) vertex-major (x, y, z), free vertices sorted by id
    contact_forces: np.ndarray | None = None


@dataclass
class SampleFailure:
    region: str
    point_index: int
    reason: str


@dataclass
class Dataset:
    """Deformation samples tied to one mesh (by content hash) and one observation list."""

    mesh_hash: str
    free_ids: np.ndarray
    observation_ids: np.ndarray
    mm_per_unit: float
    samples: list
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.free_ids = np.asarray(self.free_ids, dtype=np.int64)
        self.observation_ids = np.asarray(self.observation_ids, dtype=np.int64)
        if len(self.samples) < 1:
            raise DatasetError("dataset needs at least one sample")
        width = 3 * self.free_ids.size
        for i, s in enumerate(self.samples):
            if s.u_all.shape != (width,):
                raise DatasetError(
                    f"sample {i} field length {s.u_all.shape} != (3 * n_free,) = ({width},)"
                )
        if not np.isin(self.observation_ids, self.free_ids).all():
            raise DatasetError("observation vertices must be free vertices")

    @property
    def m(self) -> int:
        return len(self.samples)

    @property
    def n_free(self) -> int:
        return self.free_ids.size

    @property
    def n_obs(self) -> int:
        return self.observation_ids.size

    @property
    def region_names(self) -> list:
        return list(dict.fromkeys(s.region for s in self.samples))

    def observation_flat_indices(self) -> np.ndarray:
        """Indices into a flat field selecting the observation components."""
        slots = np.searchsorted(self.free_ids, self.observation_ids)
        return (3 * slots[:, None] + np.arange(3)).reshape(-1)

    def targets(self) -> np.ndarray:
        """(m, 3*n_free) matrix of full displacement fields."""
        return np.vstack([s.u_all for s in self.samples])

    def inputs(self) -> np.ndarray:
        """(m, 3*n_obs) observation slices of the fields; the network input."""
        return self.targets()[:, self.observation_flat_indices()]

    def target_displacements(self) -> np.ndarray:
        return np.vstack([s.target_disp for s in self.samples])

    def max_contact_displacement(self) -> float:
        """Largest prescribed contact translation, simulation units."""
        return float(np.linalg.norm(self.target_displacements(), axis=1).max())

    def require_mesh(self, mesh: TetMesh):
        got = mesh.content_hash()
        if got != self.mesh_hash:
            raise MeshHashMismatchError(
                f"mesh hash mismatch: dataset was built from {self.mesh_hash[:12]}..., "
                f"got mesh {got[:12]}..."
            )


# --- generation -------------------------------------------------------------

_WORKER_CTX: dict = {}


def _worker_init(mesh, d, n_steps):
    _WORKER_CTX["mesh"] = mesh
    _WORKER_CTX["d"] = d
    _WORKER_CTX["n_steps"] = n_steps


def _run_sample(task):
    region, target = task
    try:
        result = deform(
            _WORKER_CTX["mesh"], _WORKER_CTX["d"], region, target, _WORKER_CTX["n_steps"]
        )
        return "ok", result.flat_displacements, result.contact_forces
    except FemError as exc:
        return "fail", str(exc), None


def sample_points_for_region(mesh: TetMesh, region: str, spec: SamplingSpec) -> np.ndarray:
    """Lattice of absolute sample positions for one region."""
    centroid = mesh.vertices[mesh.contact_regions[region]].mean(axis=0)
    if spec.mode == "box":
        center = centroid if spec.center is None else np.asarray(spec.center, dtype=float)
        return grid_points(center, spec.extents, spec.spacing)
    resolved = spec
    if isinstance(spec.normal_filter, str):
        if spec.normal_filter != "auto":
            raise DatasetError(f"unknown normal_filter {spec.normal_filter!r}")
        resolved = replace(spec, normal_filter=tuple(region_surface_normal(mesh, region)))
    v_fc, _ = fixed_to_contact_direction(mesh, region)
    return ellipsoid_points(resolved, centroid, v_fc)


def build_dataset(
    mesh: TetMesh,
    d: np.ndarray,
    specs: Mapping[str, SamplingSpec],
    n_steps: int = 1000,
    scale: ScaleConvention = ScaleConvention(),
    workers: int = 1,
) -> Dataset:
    """Run the FEM once per (region, sample point) and collect the fields.

    Targets are point - contact centroid, generated region by region in spec
    order, lattice points in lexicographic order. FEM failures are recorded
    and skipped; results do not depend on the worker count.
    """
    unknown = [r for r in specs if r not in mesh.contact_regions]
    if unknown:
        raise DatasetError(f"specs reference unknown regions {unknown}; have {list(mesh.contact_regions)}")

    tasks = []
    for region, spec in specs.items():
        centroid = mesh.vertices[mesh.contact_regions[region]].mean(axis=0)
        for point in sample_points_for_region(mesh, region, spec):
            tasks.append((region, point - centroid))

    if workers > 1:
        chunk = max(1, len(tasks) // (workers * 8))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(mesh, d, n_steps)
        ) as pool:
            outcomes = list(pool.map(_run_sample, tasks, chunksize=chunk))
    else:
        _worker_init(mesh, d, n_steps)
        outcomes = [_run_sample(t) for t in tasks]

    free_index = mesh.free_index_of()
    samples, failures = [], []
    point_counter: dict = {}
    for (region, target), outcome in zip(tasks, outcomes):
        idx = point_counter.get(region, 0)
        point_counter[region] = idx + 1
        status, payload, forces = outcome
        if status == "fail":
            failures.append(SampleFailure(region=region, point_index=idx, reason=payload))
            continue
        slots = free_index[mesh.contact_regions[region]]
        echo = payload.reshape(-1, 3)[slots]
        if np.abs(echo - target).max() > 1e-9:
            failures.append(
                SampleFailure(
                    region=region,
                    point_index=idx,
                    reason=f"contact displacement echo off by {np.abs(echo - target).max():.2e}",
                )
            )
            continue
        samples.append(
            DeformationSample(
                region=region,
                target_disp=np.asarray(target, dtype=np.float64),
                u_all=payload,
                contact_forces=forces,
            )
        )

    return Dataset(
        mesh_hash=mesh.content_hash(),
        free_ids=mesh.free_ids,
        observation_ids=mesh.observation_ids,
        mm_per_unit=scale.mm_per_unit,
        samples=samples,
        failures=failures,
    )


# --- file format -------------------------------------------------------------
# binary container:
#   magic "DEFDS1\n"
#   u64 little-endian header length
#   UTF-8 JSON header (sorted keys)
#   m records of little-endian float64: [region id, target(3), u_all(3*n_free)]

def save_dataset(dataset: Dataset, path):
    regions = dataset.region_names
    region_id = {name: i for i, name in enumerate(regions)}
    header = {
        "format": "deformest-dataset",
        "version": 1,
        "mesh_hash": dataset.mesh_hash,
        "free_ids": dataset.free_ids.tolist(),
        "observation_ids": dataset.observation_ids.tolist(),
        "mm_per_unit": dataset.mm_per_unit,
        "n_free": dataset.n_free,
        "n_obs": dataset.n_obs,
        "sample_count": dataset.m,
        "regions": regions,
        "record_fields": ["region_id", "target_disp", "u_all"],
        "failures": [
            {"region": f.region, "point_index": f.point_index, "reason": f.reason}
            for f in dataset.failures
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for s in dataset.samples:
            record = np.concatenate(
                [[float(region_id[s.region])], s.target_disp, s.u_all]
            ).astype("<f8")
            fh.write(record.tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise DatasetFormatError("bad magic; not a dataset file", byte_offset=0)
    off = len(_MAGIC)
    if len(data) < off + 8:
        raise DatasetFormatError("truncated header length", byte_offset=len(data))
    (header_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) < off + header_len:
        raise DatasetFormatError("truncated header", byte_offset=len(data))
    try:
        header = json.loads(data[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"unparseable header: {exc}", byte_offset=off) from None
    off += header_len

    try:
        n_free = int(header["n_free"])
        m = int(header["sample_count"])
        regions = list(header["regions"])
        free_ids = header["free_ids"]
        obs_ids = header["observation_ids"]
        mm_per_unit = float(header["mm_per_unit"])
        mesh_hash = str(header["mesh_hash"])
        failures = header.get("failures", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"header missing field: {exc}", byte_offset=off) from None

    record_len = 8 * (4 + 3 * n_free)
    samples = []
    for i in range(m):
        start = off + i * record_len
        if len(data) < start + record_len:
            raise DatasetFormatError(
                f"truncated record {i} of {m}", byte_offset=len(data)
            )
        rec = np.frombuffer(data, dtype="<f8", count=4 + 3 * n_free, offset=start)
        rid = int(rec[0])
        if not 0 <= rid < len(regions):
            raise DatasetFormatError(f"record {i} has bad region id {rid}", byte_offset=start)
        samples.append(
            DeformationSample(
                region=regions[rid],
                target_disp=rec[1:4].astype(np.float64),
                u_all=rec[4:].astype(np.float64),
            )
        )
    return Dataset(
        mesh_hash=mesh_hash,
        free_ids=free_ids,
        observation_ids=obs_ids,
        mm_per_unit=mm_per_unit,
        samples=samples,
        failures=[SampleFailure(**f) for f in failures],
    )


def dataset_to_csv(dataset: Dataset, path):
    """Plain-text export for inspection: one row per sample."""
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["region", "target_x", "target_y", "target_z"]
        cols += [f"u{i}_{ax}" for i in dataset.free_ids for ax in "xyz"]
        fh.write(",".join(cols) + "\n")
        for s in dataset.samples:
            vals = [s.region] + [repr(float(v)) for v in s.target_disp]
            vals += [repr(float(v)) for v in s.u_all]
            fh.write(",".join(vals) + "\n")
