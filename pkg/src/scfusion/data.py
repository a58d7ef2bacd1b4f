"""
Labelled multimodal embedding datasets.

* ``synth_generate`` builds a spatial-coincidence task: each modality encodes a
  grid location, and the label says whether both encode the same one.
* ``write_dataset`` / ``read_dataset`` implement the little-endian "SCFE"
  binary format (header: magic, u16 version, u32 count, u32 D_a, u32 D_v;
  records: u32-prefixed utf-8 clip id and group id, u8 label, float32 audio,
  float32 visual).
* ``split_groups`` produces speaker-dependent or speaker-independent folds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError

MAGIC = b"SCFE"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")
_U32 = struct.Struct("<I")


@dataclass
class EmbeddingDataset:
    audio: np.ndarray  # (n, D_a) float32
    visual: np.ndarray  # (n, D_v) float32
    labels: np.ndarray  # (n,) uint8
    group_ids: list[str]
    clip_ids: list[str]

    def __post_init__(self):
        self.audio = np.ascontiguousarray(self.audio, dtype="<f4")
        self.visual = np.ascontiguousarray(self.visual, dtype="<f4")
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.group_ids = [str(g) for g in self.group_ids]
        self.clip_ids = [str(c) for c in self.clip_ids]
        n = len(self.labels)
        if self.audio.ndim != 2 or self.visual.ndim != 2:
            raise InputError("audio and visual embeddings must be 2-D (instances, dim)")
        if not (self.audio.shape[0] == self.visual.shape[0] == len(self.group_ids) == len(self.clip_ids) == n):
            raise InputError("instance count differs between dataset fields")
        if any(not g for g in self.group_ids):
            raise InputError("group ids must be non-empty")
        if len(set(self.clip_ids)) != n:
            raise InputError("clip ids must be unique")
        if np.any(self.labels > 1):
            raise InputError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> tuple[int, int]:
        return self.audio.shape[1], self.visual.shape[1]

    def subset(self, index) -> "EmbeddingDataset":
        index = np.asarray(index, dtype=int)
        return EmbeddingDataset(
            self.audio[index],
            self.visual[index],
            self.labels[index],
            [self.group_ids[i] for i in index],
            [self.clip_ids[i] for i in index],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.audio.tobytes() == other.audio.tobytes()
            and self.visual.tobytes() == other.visual.tobytes()
            and np.array_equal(self.labels, other.labels)
            and self.group_ids == other.group_ids
            and self.clip_ids == other.clip_ids
        )


# ---------------------------------------------------------------------------
# Binary format


def encode_dataset(dataset: EmbeddingDataset) -> bytes:
    d_a, d_v = dataset.dims
    parts = [_HEADER.pack(MAGIC, VERSION, len(dataset), d_a, d_v)]
    for i in range(len(dataset)):
        for text in (dataset.clip_ids[i], dataset.group_ids[i]):
            raw = text.encode("utf-8")
            parts.append(_U32.pack(len(raw)))
            parts.append(raw)
        parts.append(bytes([int(dataset.labels[i])]))
        parts.append(dataset.audio[i].tobytes())
        parts.append(dataset.visual[i].tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes) -> EmbeddingDataset:
    if len(buf) < _HEADER.size:
        raise InputError(
            f"truncated header at offset 0: expected {_HEADER.size} bytes, got {len(buf)}"
        )
    magic, version, count, d_a, d_v = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise InputError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise InputError(f"unsupported format version {version} at offset 4, expected {VERSION}")
    pos = _HEADER.size

    def take(nbytes: int, what: str) -> bytes:
        nonlocal pos
        if pos + nbytes > len(buf):
            raise InputError(
                f"truncated {what} at offset {pos}: expected {nbytes} bytes, "
                f"got {len(buf) - pos}"
            )
        out = buf[pos : pos + nbytes]
        pos += nbytes
        return out

    audio = np.empty((count, d_a), dtype="<f4")
    visual = np.empty((count, d_v), dtype="<f4")
    labels = np.empty(count, dtype=np.uint8)
    groups, clips = [], []
    for i in range(count):
        for target, what in ((clips, "clip id"), (groups, "group id")):
            (length,) = _U32.unpack(take(4, f"{what} length of record {i}"))
            try:
                target.append(take(length, f"{what} of record {i}").decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise InputError(f"{what} of record {i} before offset {pos} is not utf-8") from exc
        label = take(1, f"label of record {i}")[0]
        if label > 1:
            raise InputError(f"label {label} at offset {pos - 1} is not 0 or 1")
        labels[i] = label
        audio[i] = np.frombuffer(take(4 * d_a, f"audio of record {i}"), dtype="<f4")
        visual[i] = np.frombuffer(take(4 * d_v, f"visual of record {i}"), dtype="<f4")
    if pos != len(buf):
        raise InputError(
            f"dimension inconsistency: {len(buf) - pos} trailing bytes after offset {pos}"
        )
    return EmbeddingDataset(audio, visual, labels, groups, clips)


def write_dataset(dataset: EmbeddingDataset, path) -> None:
    Path(path).write_bytes(encode_dataset(dataset))


def read_dataset(path) -> EmbeddingDataset:
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Synthetic coincidence task


@dataclass(frozen=True)
class SynthConfig:
    grid: tuple[int, int] = (17, 17)
    d_audio: int = 128
    d_visual: int = 128
    noise_sigma: float = 0.1
    coincidence_rate: float = 0.5
    instances: int = 4000
    groups: int = 20
    seed: int = 0
    # negatives use a second location at least this far (circular, Euclidean)
    min_separation: float = 3.0
    # highest spatial frequency of the location code shared by both modalities
    max_frequency: int = 2

    def __post_init__(self):
        if not 0.0 < self.coincidence_rate < 1.0:
            raise ConfigurationError(
                f"coincidence_rate must be in (0, 1), got {self.coincidence_rate}"
            )
        if self.instances < 0 or self.groups < 1:
            raise ConfigurationError("instances must be >= 0 and groups >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.max_frequency < 1:
            raise ConfigurationError("max_frequency must be >= 1")


def location_code(grid: tuple[int, int], max_frequency: int) -> np.ndarray:
    """Low-frequency Fourier features of every grid location, shape (K, N*M).

    Cosine and sine pairs for each spatial frequency (f_x, f_y) with
    max(|f_x|, |f_y|) <= max_frequency, one per +-pair, DC excluded.
    """
    n, m = grid
    i, j = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    rows = []
    fr = range(-max_frequency, max_frequency + 1)
    for fx in fr:
        for fy in fr:
            if (fx, fy) <= (0, 0):
                continue
            if fx % n == 0 and fy % m == 0:
                continue
            phase = 2 * np.pi * (fx * i / n + fy * j / m)
            rows.append(np.cos(phase).ravel())
            rows.append(np.sin(phase).ravel())
    return np.array(rows)


def location_projection(grid, dim: int, max_frequency: int, rng: np.random.Generator) -> np.ndarray:
    """(dim, N*M) matrix mapping one-hot(location) to an embedding.

    A random mixing of the shared location code, so two modalities built with
    independent generators encode locations in unrelated bases.
    """
    code = location_code(grid, max_frequency)
    mixing = rng.standard_normal((dim, code.shape[0])) / np.sqrt(code.shape[0])
    return mixing @ code


def _separated_partners(cells: np.ndarray, grid, min_sep: float) -> list[np.ndarray]:
    n, m = grid
    r, c = np.divmod(cells, m)
    dr = np.abs(r[:, None] - r[None, :])
    dc = np.abs(c[:, None] - c[None, :])
    dr = np.minimum(dr, n - dr)
    dc = np.minimum(dc, m - dc)
    ok = dr**2 + dc**2 >= min_sep**2
    return [cells[row] for row in ok]


def group_locations(config: SynthConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Disjoint, spatially scattered location subsets, one per group."""
    n_cells = config.grid[0] * config.grid[1]
    if config.groups * 2 > n_cells:
        raise InputError(
            f"grid {config.grid} has {n_cells} locations, too few for "
            f"{config.groups} groups of at least 2"
        )
    perm = rng.permutation(n_cells)
    return [np.sort(chunk) for chunk in np.array_split(perm, config.groups)]


def _draw(config: SynthConfig):
    rng = np.random.default_rng(config.seed)
    proj_a = location_projection(config.grid, config.d_audio, config.max_frequency, rng)
    proj_v = location_projection(config.grid, config.d_visual, config.max_frequency, rng)
    subsets = group_locations(config, rng)
    partners = [_separated_partners(s, config.grid, config.min_separation) for s in subsets]
    for g, plist in enumerate(partners):
        if any(len(p) == 0 for p in plist):
            raise InputError(
                f"group {g} has a location with no partner at separation "
                f">= {config.min_separation}; grid {config.grid} too small"
            )
    count = config.instances
    group = rng.integers(0, config.groups, size=count)
    labels = (rng.random(count) < config.coincidence_rate).astype(np.uint8)
    loc_a = np.empty(count, dtype=int)
    loc_v = np.empty(count, dtype=int)
    for t in range(count):
        cells = subsets[group[t]]
        k = rng.integers(len(cells))
        loc_a[t] = cells[k]
        if labels[t]:
            loc_v[t] = loc_a[t]
        else:
            options = partners[group[t]][k]
            loc_v[t] = options[rng.integers(len(options))]
    return rng, proj_a, proj_v, group, labels, loc_a, loc_v


def synth_generate(config: SynthConfig) -> EmbeddingDataset:
    """Draw a location per instance (and, for negatives, a second location
    at least ``min_separation`` away within the same group); each modality
    embeds its location through its own fixed projection plus gaussian noise.
    """
    rng, proj_a, proj_v, group, labels, loc_a, loc_v = _draw(config)
    count = config.instances
    noise_a = rng.standard_normal((count, config.d_audio)) * config.noise_sigma
    noise_v = rng.standard_normal((count, config.d_visual)) * config.noise_sigma
    audio = proj_a[:, loc_a].T + noise_a
    visual = proj_v[:, loc_v].T + noise_v
    width = max(len(str(max(config.groups - 1, 0))), 2)
    return EmbeddingDataset(
        audio,
        visual,
        labels,
        [f"g{g:0{width}d}" for g in group],
        [f"clip{t:06d}" for t in range(count)],
    )


def synth_locations(config: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Encoded (audio, visual) location of every instance ``synth_generate``
    would produce for ``config``."""
    _, _, _, _, _, loc_a, loc_v = _draw(config)
    return loc_a, loc_v


# ---------------------------------------------------------------------------
# Variable-length sequences


@dataclass
class SequenceBundle:
    frames: np.ndarray  # (slots, D)
    mask: np.ndarray = field(default=None)  # (slots,) bool, True = valid

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.mask is None:
            self.mask = np.ones(len(self.frames), dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.frames.ndim != 2 or self.mask.shape != (self.frames.shape[0],):
            raise InputError("frames must be (slots, D) with one mask flag per slot")

    @classmethod
    def pad(cls, sequences: Sequence[np.ndarray], length: int | None = None) -> list["SequenceBundle"]:
        """Pad variable-length (T_i, D) sequences to a common slot count."""
        length = max(len(s) for s in sequences) if length is None else length
        out = []
        for seq in sequences:
            seq = np.asarray(seq, dtype=float)
            if len(seq) > length:
                raise InputError(f"sequence of length {len(seq)} exceeds {length} slots")
            frames = np.zeros((length, seq.shape[1]))
            frames[: len(seq)] = seq
            mask = np.arange(length) < len(seq)
            out.append(cls(frames, mask))
        return out


def pooled_visual(bundle: SequenceBundle) -> np.ndarray:
    """Mean of the valid frames; padded slots are never read."""
    valid = np.flatnonzero(bundle.mask)
    if valid.size == 0:
        raise InputError("sequence has no valid frames")
    return bundle.frames[valid].mean(axis=0)


def segment_sequence(frames: np.ndarray, length: int = 30) -> list[np.ndarray]:
    """Cut a long sequence into consecutive ``length``-frame pieces; a tail
    shorter than ``length`` is dropped."""
    frames = np.asarray(frames)
    return [frames[s : s + length] for s in range(0, len(frames) - length + 1, length)]


# ---------------------------------------------------------------------------
# Folds

SCENARIOS = ("dependent", "independent")


def split_groups(dataset: EmbeddingDataset, scenario: str, k: int, seed: int) -> list[list[str]]:
    """Fold -> held-out clip ids (dependent) or group ids (independent).

    Dependent folds are label-stratified at instance level; independent folds
    partition the distinct group ids.
    """
    if k < 2:
        raise InputError(f"need at least 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    if scenario == "independent":
        groups = sorted(set(dataset.group_ids))
        if len(groups) < k:
            raise InputError(f"{len(groups)} distinct groups cannot fill {k} independent folds")
        order = rng.permutation(len(groups))
        return [[groups[i] for i in sorted(chunk)] for chunk in np.array_split(order, k)]
    if scenario == "dependent":
        if len(dataset) < k:
            raise InputError(f"{len(dataset)} instances cannot fill {k} folds")
        order = np.concatenate(
            [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in (0, 1)]
        )
        folds: list[list[int]] = [[] for _ in range(k)]
        for pos, idx in enumerate(order):
            folds[pos % k].append(int(idx))
        return [[dataset.clip_ids[i] for i in sorted(f)] for f in folds]
    raise InputError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def fold_indices(dataset: EmbeddingDataset, scenario: str, assignment) -> list[tuple[np.ndarray, np.ndarray]]:
    """Turn a fold assignment into (train, test) index arrays."""
    key = dataset.group_ids if scenario == "independent" else dataset.clip_ids
    key = np.asarray(key)
    out = []
    for held in assignment:
        test = np.isin(key, list(held))
        out.append((np.flatnonzero(~test), np.flatnonzero(test)))
    return out
