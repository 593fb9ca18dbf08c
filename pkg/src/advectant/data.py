"""Dataset ingestion, normalization, file formats, and synthetic generators.

Two on-disk formats are supported:

* ASCII PLY point clouds with an optional per-vertex integer ``label``
  property (and optional ``vx``/``vy``/``vz`` velocity properties on export).
* A flat binary container (magic ``ADVP``): header ``<4s u32 u32 u32 u8`` =
  (magic, version, sample count, points per sample, label mode), then per
  sample: ``P*3`` little-endian f32 coordinates followed by ``i32 category``
  and either one ``i32`` class label (mode 0) or ``P`` ``i32`` part labels
  (mode 1).

PLY collections are described by a manifest JSON listing file paths and
labels; sources whose point count differs from the dataset's P are resampled
with the seed recorded in the manifest.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, InputError

ADVP_MAGIC = b"ADVP"
ADVP_VERSION = 1
_HEADER = struct.Struct("<4sIIIB")

SYNTH_KINDS = ("sphere", "box", "two-clusters", "striped-cylinder")


@dataclass
class CloudSample:
    points: np.ndarray  # [P,3] float32
    label: int = -1  # class id for classification
    labels: np.ndarray = None  # [P] int32 part labels for segmentation
    category: int = 0


@dataclass
class Dataset:
    samples: list
    task: str
    num_classes: int
    points_per_sample: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def normalize(points):
    """Map a cloud into [-1,1]^3: center the bounding box, scale uniformly so
    the longest axis spans exactly [-1,1].  A zero-extent cloud maps to the
    origin."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo).max()
    if half <= 0.0:
        return np.zeros_like(pts, dtype=points.dtype if hasattr(points, "dtype") else np.float32)
    out = (pts - center) / half
    return out.astype(np.float32)


def resample(points, labels, count, rng):
    """Fix the point count: subsample without replacement when too many,
    with replacement when too few."""
    n = points.shape[0]
    if n == count:
        return points, labels
    idx = rng.choice(n, size=count, replace=n < count)
    return points[idx], None if labels is None else labels[idx]


# -- binary container --------------------------------------------------------


def save_advp(path, samples, label_mode):
    """Write samples to the flat binary container (bit-exact round trip)."""
    samples = list(samples)
    if not samples:
        raise DataError("refusing to write an empty dataset")
    P = samples[0].points.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ADVP_MAGIC, ADVP_VERSION, len(samples), P, label_mode))
        for s in samples:
            if s.points.shape != (P, 3):
                raise DataError(f"inconsistent sample shape {s.points.shape}")
            fh.write(np.ascontiguousarray(s.points, dtype="<f4").tobytes())
            fh.write(np.int32(s.category).astype("<i4").tobytes())
            if label_mode == 0:
                fh.write(np.int32(s.label).astype("<i4").tobytes())
            else:
                if s.labels is None or s.labels.shape[0] != P:
                    raise DataError("segmentation sample without per-point labels")
                fh.write(np.ascontiguousarray(s.labels, dtype="<i4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def load_advp(path):
    """Read the binary container; returns (samples, label_mode)."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER.size, "header")
        magic, version, count, P, label_mode = _HEADER.unpack(header)
        if magic != ADVP_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != ADVP_VERSION:
            raise FormatError(f"unsupported version {version}")
        if label_mode not in (0, 1):
            raise FormatError(f"unknown label mode {label_mode}")
        samples = []
        for i in range(count):
            pts = np.frombuffer(
                _read_exact(fh, P * 3 * 4, f"sample {i} points"), dtype="<f4"
            ).reshape(P, 3)
            category = int(
                np.frombuffer(_read_exact(fh, 4, f"sample {i} category"), "<i4")[0]
            )
            if label_mode == 0:
                label = int(
                    np.frombuffer(_read_exact(fh, 4, f"sample {i} label"), "<i4")[0]
                )
                samples.append(
                    CloudSample(points=pts.copy(), label=label, category=category)
                )
            else:
                labels = np.frombuffer(
                    _read_exact(fh, P * 4, f"sample {i} labels"), dtype="<i4"
                )
                if labels.min() < 0:
                    raise DataError(f"negative part label in sample {i}")
                samples.append(
                    CloudSample(
                        points=pts.copy(), labels=labels.copy(), category=category
                    )
                )
    return samples, label_mode


# -- ASCII PLY ----------------------------------------------------------------


def read_ply(path):
    """Parse an ASCII PLY; returns (points[P,3] f32, labels[P] i32 or None)."""
    with open(path, "r") as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise FormatError("not a PLY file")
        fmt = fh.readline().strip()
        if not fmt.startswith("format ascii"):
            raise FormatError(f"only ASCII PLY is supported, got {fmt!r}")
        count = None
        props = []
        while True:
            line = fh.readline()
            if not line:
                raise FormatError("unterminated PLY header")
            line = line.strip()
            if line.startswith("comment"):
                continue
            if line.startswith("element"):
                _, name, num = line.split()
                if name != "vertex":
                    raise FormatError(f"unsupported element {name!r}")
                count = int(num)
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        if count is None:
            raise FormatError("PLY header without a vertex element")
        for axis in ("x", "y", "z"):
            if axis not in props:
                raise FormatError(f"PLY vertex lacks property {axis!r}")
        rows = np.empty((count, len(props)), dtype=np.float64)
        for i in range(count):
            line = fh.readline()
            if not line:
                raise FormatError(f"truncated PLY: {i}/{count} vertices")
            vals = line.split()
            if len(vals) != len(props):
                raise FormatError(f"vertex row {i} has {len(vals)} fields")
            rows[i] = [float(v) for v in vals]
    cols = {p: rows[:, j] for j, p in enumerate(props)}
    points = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float32)
    labels = None
    if "label" in cols:
        labels = cols["label"].astype(np.int32)
    return points, labels


def write_ply(path, points, velocities=None, labels=None):
    """Write an ASCII PLY with optional per-vertex velocity and label."""
    points = np.asarray(points)
    P = points.shape[0]
    props = ["property float x", "property float y", "property float z"]
    if velocities is not None:
        props += ["property float vx", "property float vy", "property float vz"]
    if labels is not None:
        props.append("property int label")
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {P}\n")
        fh.write("\n".join(props) + "\n")
        fh.write("end_header\n")
        for i in range(P):
            row = [f"{v:.8e}" for v in points[i]]
            if velocities is not None:
                row += [f"{v:.8e}" for v in velocities[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            fh.write(" ".join(row) + "\n")


# -- manifests ---------------------------------------------------------------


def load_dataset(path):
    """Load a dataset from an .advp container or a manifest JSON of PLYs."""
    path = Path(path)
    if path.suffix == ".advp":
        samples, label_mode = load_advp(path)
        task = "classification" if label_mode == 0 else "segmentation"
        if label_mode == 0:
            num_classes = max(s.label for s in samples) + 1
        else:
            num_classes = max(int(s.labels.max()) for s in samples) + 1
        return Dataset(
            samples=samples,
            task=task,
            num_classes=num_classes,
            points_per_sample=samples[0].points.shape[0],
            meta={"source": str(path)},
        )
    if path.suffix == ".json":
        return _load_manifest(path)
    raise FormatError(f"unknown dataset format {path.suffix!r}")


def _load_manifest(path):
    with open(path) as fh:
        man = json.load(fh)
    for key in ("task", "num_classes", "points_per_sample", "samples"):
        if key not in man:
            raise FormatError(f"manifest missing {key!r}")
    task = man["task"]
    P = int(man["points_per_sample"])
    rng = np.random.default_rng(int(man.get("resample_seed", 0)))
    base = path.parent
    samples = []
    for entry in man["samples"]:
        pts, labels = read_ply(base / entry["path"])
        pts = normalize(pts)
        pts, labels = resample(pts, labels, P, rng)
        if task == "classification":
            label = int(entry["label"])
            if not 0 <= label < man["num_classes"]:
                raise DataError(f"class label {label} out of range")
            samples.append(
                CloudSample(points=pts, label=label,
                            category=int(entry.get("category", 0)))
            )
        else:
            if labels is None:
                raise DataError(f"{entry['path']}: segmentation PLY needs labels")
            if labels.min() < 0 or labels.max() >= man["num_classes"]:
                raise DataError(f"{entry['path']}: part label out of range")
            samples.append(
                CloudSample(points=pts, labels=labels.astype(np.int32),
                            category=int(entry.get("category", 0)))
            )
    return Dataset(samples, task, int(man["num_classes"]), P, {"source": str(path)})


# -- synthetic data ------------------------------------------------------------


def _random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def synth(kind, count, seed):
    """One deterministic synthetic sample.

    Classification kinds: 'sphere' (radius 0.8 shell), 'box' (cube surface),
    'two-clusters' (two Gaussian blobs).  Segmentation kind:
    'striped-cylinder', labeled by axial thirds.  Every sample gets a random
    orientation so per-point position alone does not reveal the labels.
    """
    rng = np.random.default_rng(seed)
    R = _random_rotation(rng)
    if kind == "sphere":
        v = rng.standard_normal((count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = 0.8 * v
        return CloudSample(points=(pts @ R.T).astype(np.float32), label=0)
    if kind == "box":
        half = 0.55
        face = rng.integers(0, 6, size=count)
        uv = rng.uniform(-half, half, size=(count, 2))
        pts = np.empty((count, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, half, -half)
        for a in range(3):
            sel = axis == a
            others = [b for b in range(3) if b != a]
            pts[sel, a] = sign[sel]
            pts[sel, others[0]] = uv[sel, 0]
            pts[sel, others[1]] = uv[sel, 1]
        return CloudSample(points=(pts @ R.T).astype(np.float32), label=1)
    if kind == "two-clusters":
        direction = R @ np.array([1.0, 0.0, 0.0])
        centers = np.array([0.5 * direction, -0.5 * direction])
        which = rng.integers(0, 2, size=count)
        pts = centers[which] + 0.12 * rng.standard_normal((count, 3))
        np.clip(pts, -0.99, 0.99, out=pts)
        return CloudSample(points=pts.astype(np.float32), label=2)
    if kind == "striped-cylinder":
        radius, half_len = 0.35, 0.85
        theta = rng.uniform(0, 2 * np.pi, size=count)
        zc = rng.uniform(-half_len, half_len, size=count)
        pts = np.stack(
            [radius * np.cos(theta), radius * np.sin(theta), zc], axis=1
        )
        thirds = np.minimum(
            ((zc + half_len) / (2 * half_len) * 3).astype(np.int32), 2
        )
        return CloudSample(
            points=(pts @ R.T).astype(np.float32), labels=thirds, category=0
        )
    raise InputError(f"unknown synthetic kind {kind!r} (choose from {SYNTH_KINDS})")


def make_toy_classification(n_train=200, n_test=60, points=64, seed=0):
    """3-class dataset cycling sphere / box / two-clusters."""
    kinds = ("sphere", "box", "two-clusters")

    def build(n, tag):
        return [
            synth(kinds[i % 3], points, np.random.SeedSequence([seed, tag, i]))
            for i in range(n)
        ]

    train = Dataset(build(n_train, 0), "classification", 3, points)
    test = Dataset(build(n_test, 1), "classification", 3, points)
    return train, test


def make_toy_segmentation(n_train=100, n_test=30, points=256, seed=0):
    """Striped-cylinder dataset with 3 axial parts."""

    def build(n, tag):
        return [
            synth(
                "striped-cylinder", points, np.random.SeedSequence([seed, tag, i])
            )
            for i in range(n)
        ]

    train = Dataset(build(n_train, 0), "segmentation", 3, points)
    test = Dataset(build(n_test, 1), "segmentation", 3, points)
    return train, test
