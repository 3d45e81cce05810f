"""Task generators and dataset plumbing.

Synthetic tasks produce batches in the (tau, d, B) column-per-sample layout
the networks consume. Image datasets are read from the classic big-endian
IDX pair (images + labels), scaled to [0, 1], and sliced into pixel
sequences of k pixels per step, optionally through a fixed permutation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TEMPORAL_ORDER = "temporal-order"
ADDING = "adding"

# Symbol layout for the temporal-order alphabet: four distractors, then the
# two special symbols whose order determines the class.
N_SYMBOLS = 6
X_SYM = 4
Y_SYM = 5

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class BadMagic(ValueError):
    """File does not start with the expected IDX magic number."""


class TruncatedFile(ValueError):
    """File ended before the announced payload was read."""


class CountMismatch(ValueError):
    """Image and label files disagree on the number of records."""


class IndivisibleChunk(ValueError):
    """Pixels per step does not divide the image size."""


@dataclass
class Batch:
    inputs: np.ndarray   # (tau, d, B) float64
    labels: np.ndarray   # (B,) int64 class ids, or (B,) float64 targets
    task: str


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def pixels(self) -> int:
        return self.images.shape[1] * self.images.shape[2]


def gen_temporal_order(T: int, batch: int, rng: np.random.Generator) -> Batch:
    """Order-of-symbols task: two special symbols hide in a noise string.

    Each sample is a length-T string over {a, b, c, d, X, Y}, one-hot in 6
    dims. Positions t1 and t2 (1-based steps, drawn uniformly from
    [T//10, 2T//10] and [4T//10, 5T//10], endpoints included) carry X or Y,
    replacing the noise symbol there; everything else is uniform over the
    four distractors. The class in {0..3} encodes the ordered pair, first
    symbol in the high bit (X then Y gives 1, Y then X gives 2).
    """
    if T < 10:
        raise ValueError(f"need T >= 10, got {T}")
    xs = np.zeros((T, N_SYMBOLS, batch))
    sym = rng.integers(0, 4, size=(T, batch))
    cols = np.arange(batch)
    xs[np.arange(T)[:, None], sym, cols[None, :]] = 1.0
    t1 = rng.integers(T // 10, 2 * T // 10 + 1, size=batch)
    t2 = rng.integers(4 * T // 10, 5 * T // 10 + 1, size=batch)
    first = rng.integers(0, 2, size=batch)
    second = rng.integers(0, 2, size=batch)
    for pos, which in ((t1, first), (t2, second)):
        xs[pos - 1, :, cols] = 0.0
        xs[pos - 1, X_SYM + which, cols] = 1.0
    labels = (2 * first + second).astype(np.int64)
    return Batch(inputs=xs, labels=labels, task=TEMPORAL_ORDER)


def gen_adding(T: int, batch: int, rng: np.random.Generator) -> Batch:
    """Add two marked numbers from a random stream.

    Channel 0 holds T uniform [0, 1) values, channel 1 is zero except for
    ones at the two marker steps t1 (1-based, uniform on [1, T//10]) and t2
    (uniform on [T//10, T//2], resampled while it collides with t1). The
    target is the mean of the two marked values.
    """
    if T < 10:
        raise ValueError(f"need T >= 10, got {T}")
    vals = rng.random((T, batch))
    t1 = rng.integers(1, T // 10 + 1, size=batch)
    t2 = rng.integers(T // 10, T // 2 + 1, size=batch)
    clash = t2 == t1
    while np.any(clash):
        t2[clash] = rng.integers(T // 10, T // 2 + 1, size=int(clash.sum()))
        clash = t2 == t1
    xs = np.zeros((T, 2, batch))
    xs[:, 0, :] = vals
    cols = np.arange(batch)
    xs[t1 - 1, 1, cols] = 1.0
    xs[t2 - 1, 1, cols] = 1.0
    labels = 0.5 * (vals[t1 - 1, cols] + vals[t2 - 1, cols])
    return Batch(inputs=xs, labels=labels, task=ADDING)


def classification_accuracy(y_hat: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of columns whose argmax matches the label."""
    return float(np.mean(np.argmax(y_hat, axis=0) == labels))


def adding_accuracy(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of predictions with squared error strictly below 0.04."""
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    return float(np.mean((predictions - targets) ** 2 < 0.04))


def _read_exact(f, nbytes: int, path) -> bytes:
    buf = f.read(nbytes)
    if len(buf) < nbytes:
        raise TruncatedFile(f"{path}: wanted {nbytes} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path) -> ImageDataset:
    """Read an IDX image/label pair; pixels come back scaled by 1/255.

    Images are stored float32 to keep the big datasets reasonable; batches
    are promoted to float64 when sequences are assembled.
    """
    with open(images_path, "rb") as f:
        magic, n, h, w = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IMAGES_MAGIC:
            raise BadMagic(f"{images_path}: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
        raw = _read_exact(f, n * h * w, images_path)
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w)
    images = images.astype(np.float32) / 255.0
    with open(labels_path, "rb") as f:
        magic, n_labels = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != LABELS_MAGIC:
            raise BadMagic(f"{labels_path}: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
        raw = _read_exact(f, n_labels, labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if n != n_labels:
        raise CountMismatch(f"{n} images but {n_labels} labels")
    return ImageDataset(images=images, labels=labels)


def fixed_permutation(seed: int, n: int = 784) -> np.ndarray:
    """Deterministic Fisher-Yates shuffle of range(n)."""
    rng = np.random.default_rng(seed)
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    assert np.array_equal(np.sort(perm), np.arange(n)), "permutation not bijective"
    return perm


def pixel_sequence(
    dataset: ImageDataset, index: int, k: int, permutation: np.ndarray | None = None
) -> np.ndarray:
    """Row-major pixel scan of one image, chunked into k pixels per step.

    The permutation, when given, reorders the flattened pixels before
    chunking. Returns (tau, k) with tau = H*W / k.
    """
    flat = dataset.images[index].reshape(-1).astype(np.float64)
    if permutation is not None:
        flat = flat[permutation]
    npix = flat.size
    if npix % k != 0:
        raise IndivisibleChunk(f"{k} pixels per step does not divide {npix}")
    return flat.reshape(npix // k, k)


def image_batch(
    dataset: ImageDataset,
    indices: np.ndarray,
    k: int,
    permutation: np.ndarray | None = None,
) -> Batch:
    """Assemble a (tau, k, B) batch of pixel sequences for the given rows."""
    seqs = [pixel_sequence(dataset, int(i), k, permutation) for i in indices]
    inputs = np.stack(seqs, axis=2)
    labels = dataset.labels[np.asarray(indices)]
    return Batch(inputs=inputs, labels=labels, task="pixels")


def epoch_indices(n: int, batch: int, rng: np.random.Generator):
    """Yield index arrays covering a fresh shuffle of range(n), no replacement.

    The last partial slice of an epoch is dropped so batch shapes stay fixed.
    Loops forever; callers pull as many batches as they need.
    """
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            yield order[start:start + batch]


def dump_batches_csv(path, batches: list[Batch]) -> None:
    """Flat CSV dump: one row per sample, inputs flattened time-major.

    A comment header records the task, shape, and label kind, so the file
    round-trips through :func:`load_batches_csv` exactly (floats are printed
    with repr precision).
    """
    if not batches:
        raise ValueError("nothing to dump")
    first = batches[0]
    T, d, _ = first.inputs.shape
    label_kind = "int" if np.issubdtype(first.labels.dtype, np.integer) else "float"
    with open(path, "w") as f:
        f.write(f"# task={first.task} T={T} d={d} label={label_kind}\n")
        f.write("batch,sample,label," +
                ",".join(f"x{t}_{j}" for t in range(T) for j in range(d)) + "\n")
        for bi, b in enumerate(batches):
            for s in range(b.inputs.shape[2]):
                lbl = (str(int(b.labels[s])) if label_kind == "int"
                       else format(float(b.labels[s]), ".17g"))
                row = b.inputs[:, :, s].reshape(-1)
                f.write(f"{bi},{s},{lbl}," +
                        ",".join(format(v, ".17g") for v in row) + "\n")


def load_batches_csv(path) -> list[Batch]:
    """Inverse of :func:`dump_batches_csv`."""
    with open(path) as f:
        header = f.readline()
        if not header.startswith("# task="):
            raise ValueError(f"{path}: missing dump header")
        meta = dict(kv.split("=", 1) for kv in header[2:].split())
        T, d = int(meta["T"]), int(meta["d"])
        f.readline()  # column names
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    batches: list[Batch] = []
    by_batch: dict[int, list[list[str]]] = {}
    for row in rows:
        by_batch.setdefault(int(row[0]), []).append(row)
    for bi in sorted(by_batch):
        group = by_batch[bi]
        B = len(group)
        inputs = np.empty((T, d, B))
        if meta["label"] == "int":
            labels = np.empty(B, dtype=np.int64)
        else:
            labels = np.empty(B, dtype=np.float64)
        for row in group:
            s = int(row[1])
            labels[s] = int(row[2]) if meta["label"] == "int" else float(row[2])
            inputs[:, :, s] = np.array([float(v) for v in row[3:]]).reshape(T, d)
        batches.append(Batch(inputs=inputs, labels=labels, task=meta["task"]))
    return batches
