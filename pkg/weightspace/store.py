"""Multiview INR datasets: generation, and the WSDS on-disk format.

A saved dataset is a directory holding ``manifest.yaml`` (generation
metadata, enough to regenerate every weight) and ``weights.wsds``, a binary
blob::

    "WSDS"                     magic
    u32 version, u32 count     little-endian
    per sample:
        u32 object_id, u32 view_id, u32 label index
        per tensor (W_1, b_1, W_2, b_2, ...):
            u32 rank, u32 dims[rank], f32 data (little-endian, row-major)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import dataclasses
import logging
import struct
import zlib
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import dacite
import numpy as np
import yaml

from weightspace import __version__
from weightspace.core import (
    LabeledSample,
    MlpSpec,
    WeightSpaceVector,
    derive_seed,
    validate,
)
from weightspace.errors import (
    ChecksumError,
    ConfigError,
    DatasetBuildError,
    EmptyDatasetError,
    FormatError,
    ShapeError,
    TruncatedError,
    VersionMismatchError,
    WeightSpaceError,
)
from weightspace.nnrun import TrainConfig, fit_inr, psnr
from weightspace.signals import SIGNAL_KINDS, Signal, make_signal

logger = logging.getLogger(__name__)

MAGIC = b"WSDS"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.yaml"
BLOB_NAME = "weights.wsds"

_HEADER = struct.Struct(
    "<"
    "4s"  # magic
    "I"  # format version
    "I"  # sample count
)
_SAMPLE = struct.Struct(
    "<"
    "I"  # object id
    "I"  # view id
    "I"  # label index
)
_U32 = struct.Struct("<I")
_CRC = _U32

PathLike = Union[str, Path]


@dataclass
class DatasetManifest:
    """Everything needed to regenerate a dataset bit for bit."""

    dims: List[int]
    activations: List[str]
    kinds: List[str]
    resolution: int
    num_objects: int
    views_per_object: int
    seed: int
    fit: TrainConfig = field(default_factory=TrainConfig)
    # Generated object ids are object_offset..object_offset+num_objects-1,
    # view ids likewise.
    object_offset: int = 0
    view_offset: int = 0
    format_version: int = FORMAT_VERSION
    toolkit_version: str = __version__
    # Free-form provenance, e.g. the pipeline an augmented copy was made with.
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def spec(self) -> MlpSpec:
        return MlpSpec(tuple(self.dims), tuple(self.activations))

    @property
    def num_classes(self) -> int:
        return len(self.kinds)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> DatasetManifest:
        try:
            return dacite.from_dict(cls, data, config=dacite.Config(strict=True))
        except dacite.DaciteError as err:
            raise FormatError(f"Invalid dataset manifest: {err}") from err


@dataclass
class InrDataset:
    spec: MlpSpec
    samples: List[LabeledSample]
    manifest: Optional[DatasetManifest] = None

    def __post_init__(self) -> None:
        seen = set()
        sizes = set()
        for sample in self.samples:
            validate(sample.v, self.spec)
            key = (sample.object_id, sample.view_id)
            if key in seen:
                raise ShapeError(f"Duplicate sample (object {key[0]}, view {key[1]})")
            seen.add(key)
            sizes.add(sample.num_classes)
        if len(sizes) > 1:
            raise ShapeError(
                f"Samples disagree on the number of classes: {sorted(sizes)}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        if self.manifest is not None:
            return self.manifest.num_classes
        if not self.samples:
            raise EmptyDatasetError("Dataset is empty")
        return self.samples[0].num_classes

    def class_ids(self) -> np.ndarray:
        return np.array([s.class_id for s in self.samples], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> InrDataset:
        return InrDataset(self.spec, [self.samples[i] for i in indices], self.manifest)

    def replace_samples(self, samples: List[LabeledSample]) -> InrDataset:
        return InrDataset(self.spec, samples, self.manifest)


@dataclass(frozen=True)
class FitJob:
    """One (object, view) fit; everything a worker needs besides the manifest."""

    object_id: int
    view_id: int
    kind: str
    label: int
    signal_seed: int
    fit_seed: int


def make_manifest(
    num_objects: int,
    views_per_object: int,
    kinds: Sequence[str] = SIGNAL_KINDS,
    resolution: int = 32,
    fit_cfg: Optional[TrainConfig] = None,
    seed: int = 0,
    spec: Optional[MlpSpec] = None,
    object_offset: int = 0,
    view_offset: int = 0,
) -> DatasetManifest:
    if num_objects < 1:
        raise ConfigError("num_objects must be at least 1", key="num_objects")
    if views_per_object < 1:
        raise ConfigError("views_per_object must be at least 1", key="views_per_object")
    if not kinds:
        raise ConfigError("At least one signal kind is required", key="kinds")
    for kind in kinds:
        if kind not in SIGNAL_KINDS:
            raise ConfigError(f"Unknown signal kind {kind!r}", key="kinds")
    if object_offset < 0 or view_offset < 0:
        raise ConfigError("Offsets must be non-negative", key="object_offset")
    spec = spec or MlpSpec.siren([2, 32, 32, 1])
    return DatasetManifest(
        dims=list(spec.dims),
        activations=[a.value for a in spec.activations],
        kinds=list(kinds),
        resolution=resolution,
        num_objects=num_objects,
        views_per_object=views_per_object,
        seed=seed,
        fit=fit_cfg or TrainConfig(),
        object_offset=object_offset,
        view_offset=view_offset,
    )


def fit_job(manifest: DatasetManifest, object_id: int, view_id: int) -> FitJob:
    """Object ``o`` gets kind ``kinds[o % len(kinds)]`` and signal seed
    ``derive_seed(seed, o)``; its view ``w`` is fit with ``derive_seed(seed, o, w)``.
    """
    label = object_id % len(manifest.kinds)
    return FitJob(
        object_id=object_id,
        view_id=view_id,
        kind=manifest.kinds[label],
        label=label,
        signal_seed=derive_seed(manifest.seed, object_id),
        fit_seed=derive_seed(manifest.seed, object_id, view_id),
    )


def plan_fits(manifest: DatasetManifest) -> List[FitJob]:
    """All fits of a manifest, ordered by (object, view)."""
    first_object, first_view = manifest.object_offset, manifest.view_offset
    objects = range(first_object, first_object + manifest.num_objects)
    views = range(first_view, first_view + manifest.views_per_object)
    return [fit_job(manifest, obj, view) for obj in objects for view in views]


def object_signal(manifest: DatasetManifest, object_id: int) -> Signal:
    """The target signal every view of ``object_id`` is fit to."""
    job = fit_job(manifest, object_id, 0)
    return make_signal(job.kind, manifest.resolution, job.signal_seed)


def run_fit_job(
    job: FitJob,
    manifest: DatasetManifest,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> LabeledSample:
    """Fit one view. Failures are raised as :class:`DatasetBuildError`."""
    spec = manifest.spec
    try:
        signal = make_signal(job.kind, manifest.resolution, job.signal_seed)
        cfg = dataclasses.replace(manifest.fit, seed=job.fit_seed)
        v = fit_inr(signal, spec, cfg, on_step=on_step)
        quality = psnr(v, spec, signal)
    except WeightSpaceError as err:
        raise DatasetBuildError(job.object_id, job.view_id, err) from err
    target = manifest.fit.early_stop_psnr
    if target is not None and quality < target:
        logger.warning(
            "Object %d view %d (%s) stopped at %.2f dB, below the %.1f dB target",
            job.object_id,
            job.view_id,
            job.kind,
            quality,
            target,
        )
    else:
        logger.info(
            "Fit object %d view %d (%s): %.2f dB",
            job.object_id,
            job.view_id,
            job.kind,
            quality,
        )
    return LabeledSample.one_hot(
        v, job.label, manifest.num_classes, job.object_id, job.view_id
    )


def assemble(manifest: DatasetManifest, samples: Sequence[LabeledSample]) -> InrDataset:
    """Collect fitted samples into a dataset, ordered by (object, view)."""
    ordered = sorted(samples, key=lambda s: (s.object_id, s.view_id))
    return InrDataset(manifest.spec, list(ordered), manifest)


def build_from_manifest(
    manifest: DatasetManifest, executor: Optional[Executor] = None
) -> InrDataset:
    jobs = plan_fits(manifest)
    logger.info(
        "Building %d INRs (%d objects x %d views)",
        len(jobs),
        manifest.num_objects,
        manifest.views_per_object,
    )

    def fit(job: FitJob) -> LabeledSample:
        return run_fit_job(job, manifest)

    if executor is None:
        samples = [fit(job) for job in jobs]
    else:
        samples = list(executor.map(fit, jobs))
    return assemble(manifest, samples)


def build_dataset(
    num_objects: int,
    views_per_object: int,
    kinds: Sequence[str] = SIGNAL_KINDS,
    resolution: int = 32,
    fit_cfg: Optional[TrainConfig] = None,
    seed: int = 0,
    spec: Optional[MlpSpec] = None,
    *,
    executor: Optional[Executor] = None,
    object_offset: int = 0,
    view_offset: int = 0,
) -> InrDataset:
    """Fit ``views_per_object`` INRs to each of ``num_objects`` random shapes.

    Deterministic in ``seed`` regardless of ``executor``. Offsets select
    different objects (external test sets) or different views of the same
    objects (internal test sets) from the same root seed.
    """
    manifest = make_manifest(
        num_objects,
        views_per_object,
        kinds,
        resolution,
        fit_cfg,
        seed,
        spec,
        object_offset,
        view_offset,
    )
    return build_from_manifest(manifest, executor)


def regenerate(
    manifest: DatasetManifest, executor: Optional[Executor] = None
) -> InrDataset:
    """Rebuild a dataset from its manifest alone."""
    if manifest.format_version != FORMAT_VERSION:
        raise VersionMismatchError(manifest.format_version, FORMAT_VERSION)
    if "derived_from" in manifest.notes:
        raise FormatError(
            "Manifest describes a derived dataset; regenerate its source "
            f"{manifest.notes['derived_from']} instead"
        )
    return build_from_manifest(manifest, executor)


# Binary encoding


def _encode_tensors(v: WeightSpaceVector) -> bytes:
    parts = []
    for tensor in v.tensors():
        parts.append(_U32.pack(tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.astype("<f4").tobytes())
    return b"".join(parts)


def encode_samples(
    samples: Sequence[LabeledSample], version: int = FORMAT_VERSION
) -> bytes:
    body = [_HEADER.pack(MAGIC, version, len(samples))]
    for sample in samples:
        body.append(_SAMPLE.pack(sample.object_id, sample.view_id, sample.class_id))
        body.append(_encode_tensors(sample.v))
    payload = b"".join(body)
    return payload + _CRC.pack(zlib.crc32(payload))


def _record_size(spec: MlpSpec) -> int:
    size = _SAMPLE.size
    for m in range(1, spec.num_layers + 1):
        rows, cols = spec.weight_shape(m)
        size += _U32.size * 3 + 4 * rows * cols  # W_m: rank, 2 dims, data
        size += _U32.size * 2 + 4 * rows  # b_m: rank, 1 dim, data
    return size


def decode_samples(
    data: bytes, spec: MlpSpec, num_classes: int
) -> List[Tuple[int, int, int, WeightSpaceVector]]:
    """Parse a WSDS blob into ``(object_id, view_id, label, v)`` records.

    Checks run in order: header, version, length, checksum, tensor shapes.
    """
    if len(data) < _HEADER.size:
        raise TruncatedError(
            f"WSDS blob has {len(data)} bytes, shorter than its header"
        )
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"Not a WSDS blob (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(version, FORMAT_VERSION)
    expected = _HEADER.size + count * _record_size(spec) + _CRC.size
    if len(data) < expected:
        raise TruncatedError(f"WSDS blob has {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise FormatError(f"WSDS blob has {len(data) - expected} trailing bytes")
    (stored_crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    actual_crc = zlib.crc32(data[: expected - _CRC.size])
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"WSDS checksum mismatch "
            f"(stored {stored_crc:08x}, computed {actual_crc:08x})"
        )

    records = []
    offset = _HEADER.size
    for _ in range(count):
        object_id, view_id, label = _SAMPLE.unpack_from(data, offset)
        offset += _SAMPLE.size
        if label >= num_classes:
            raise FormatError(
                f"Label index {label} out of range for {num_classes} classes"
            )
        tensors = []
        for m in range(1, spec.num_layers + 1):
            for shape in (spec.weight_shape(m), (spec.dims[m],)):
                (rank,) = _U32.unpack_from(data, offset)
                offset += _U32.size
                dims = struct.unpack_from(f"<{rank}I", data, offset)
                offset += _U32.size * rank
                if dims != shape:
                    raise FormatError(
                        f"Sample ({object_id}, {view_id}) layer {m}: "
                        f"stored shape {dims}, manifest expects {shape}"
                    )
                size = int(np.prod(shape))
                array = np.frombuffer(data, dtype="<f4", count=size, offset=offset)
                tensors.append(array.reshape(shape).astype(np.float32))
                offset += 4 * size
        v = WeightSpaceVector(tuple(tensors[0::2]), tuple(tensors[1::2]))
        records.append((object_id, view_id, label, v))
    return records


def save(dataset: InrDataset, path: PathLike) -> Path:
    """Write ``manifest.yaml`` and ``weights.wsds`` into directory ``path``."""
    if dataset.manifest is None:
        raise FormatError("Only datasets with a manifest can be saved")
    for sample in dataset.samples:
        if sample.label[sample.class_id] != 1.0:
            raise FormatError(
                f"Sample ({sample.object_id}, {sample.view_id}) has a soft label; "
                "use save_sample for mixed samples"
            )
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_text(
        yaml.safe_dump(dataset.manifest.to_dict(), sort_keys=True), encoding="utf-8"
    )
    (directory / BLOB_NAME).write_bytes(encode_samples(dataset.samples))
    return directory


def load_manifest(path: PathLike) -> DatasetManifest:
    manifest_path = Path(path) / MANIFEST_NAME
    try:
        data = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise FormatError(f"No dataset manifest at {manifest_path}") from err
    if not isinstance(data, dict):
        raise FormatError(f"Manifest {manifest_path} is not a mapping")
    manifest = DatasetManifest.from_dict(data)
    if manifest.format_version != FORMAT_VERSION:
        raise VersionMismatchError(manifest.format_version, FORMAT_VERSION)
    return manifest


def load(path: PathLike) -> InrDataset:
    manifest = load_manifest(path)
    try:
        data = (Path(path) / BLOB_NAME).read_bytes()
    except FileNotFoundError as err:
        raise FormatError(f"No weight blob in {path}") from err
    records = decode_samples(data, manifest.spec, manifest.num_classes)
    samples = [
        LabeledSample.one_hot(v, label, manifest.num_classes, object_id, view_id)
        for object_id, view_id, label, v in records
    ]
    return InrDataset(manifest.spec, samples, manifest)


# Single samples (mixed samples carry soft labels, kept in a YAML sidecar)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".yaml")


def save_sample(sample: LabeledSample, spec: MlpSpec, path: PathLike) -> Path:
    validate(sample.v, spec)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_samples([sample]))
    meta = {
        "dims": list(spec.dims),
        "activations": [a.value for a in spec.activations],
        "label": [float(x) for x in sample.label],
        "object_id": sample.object_id,
        "view_id": sample.view_id,
    }
    _sidecar(target).write_text(yaml.safe_dump(meta, sort_keys=True), encoding="utf-8")
    return target


def load_sample(path: PathLike) -> Tuple[LabeledSample, MlpSpec]:
    target = Path(path)
    try:
        meta = yaml.safe_load(_sidecar(target).read_text(encoding="utf-8"))
        data = target.read_bytes()
    except FileNotFoundError as err:
        raise FormatError(f"Missing sample file: {err.filename}") from err
    spec = MlpSpec(tuple(meta["dims"]), tuple(meta["activations"]))
    label = np.asarray(meta["label"], dtype=np.float64)
    records = decode_samples(data, spec, label.size)
    if len(records) != 1:
        raise FormatError(f"Sample file {target} holds {len(records)} samples")
    _, _, _, v = records[0]
    return LabeledSample(v, label, meta["object_id"], meta["view_id"]), spec
