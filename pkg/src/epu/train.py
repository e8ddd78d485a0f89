"""Joint training of all sub-networks against one shared binary cross-entropy.

Every batch takes a single backward pass, so sub-network weights and the
intercept move together, never independently.  Orientation augmentation is
applied to raw images each epoch, before feature-map extraction.  Checkpoints
are a small self-describing binary format with a payload checksum.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    TrainingDivergedError,
)
from .metrics import ScoredSet, accuracy, auc, interpretability_accuracy
from .model import ArchConfig, EpuModel, build_model, epu_forward
from .pfm import PfmStack, RgbImage, build_pfm_stack
from .tensor import Tensor

CHECKPOINT_MAGIC = b"EPU1\n"
CHECKPOINT_FORMAT = "1"


@dataclass
class Sample:
    """One training example: a feature-map stack plus its class index."""

    stack: PfmStack
    label: int
    source_path: str = ""

    def __post_init__(self):
        if self.label < 0:
            raise ContractError(f"label must be >= 0, got {self.label}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.01
    epochs: int = 30
    seed: int = 0
    augment: bool = True
    folds: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")


@dataclass
class EpochStats:
    loss: float
    accuracy: float


# ---------------------------------------------------------------------------
# loss


def bce_loss(prob, y) -> Tensor:
    """Mean binary cross-entropy; probabilities clipped to [1e-7, 1 - 1e-7]."""
    p = prob if isinstance(prob, Tensor) else Tensor(np.asarray(prob, dtype=np.float32))
    target = np.asarray(y, dtype=np.float32)
    pc = T.clip(p, 1e-7, 1.0 - 1e-7)
    pos = T.mul(Tensor(target), T.log(pc))
    neg = T.mul(Tensor(1.0 - target), T.log(T.sub(Tensor(np.float32(1.0)), pc)))
    return T.neg(T.tmean(T.add(pos, neg)))


# ---------------------------------------------------------------------------
# epoch loop


def _batch_arrays(batch):
    stacks = np.stack([s.stack.maps for s in batch])
    labels = np.array([s.label for s in batch], dtype=np.float32)
    return stacks, labels


def train_epoch(model: EpuModel, samples, config: TrainConfig, rng=None) -> EpochStats:
    """One pass over shuffled mini-batches; one backward per batch."""
    if model.mode != "binary":
        raise ConfigError("train_epoch drives binary models only")
    if len(samples) == 0:
        raise ContractError("cannot train on an empty sample set")
    for s in samples:
        if s.label not in (0, 1):
            raise ContractError(f"binary labels must be 0 or 1, got {s.label}")
    if rng is None:
        rng = np.random.default_rng([config.seed])
    order = rng.permutation(len(samples))
    params = model.parameters()
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(samples), config.batch_size):
        batch = [samples[int(j)] for j in order[start : start + config.batch_size]]
        stacks, labels = _batch_arrays(batch)
        prob, _ = model.forward_batch(stacks, training=True)
        loss = bce_loss(prob, labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value}")
        T.zero_grads(params)
        T.backward(loss)
        T.sgd_step(params, config.lr)
        loss_sum += value * len(batch)
        correct += int(np.sum((prob.data >= 0.5).astype(np.int64) == labels.astype(np.int64)))
    n = len(samples)
    return EpochStats(loss=loss_sum / n, accuracy=correct / n)


# ---------------------------------------------------------------------------
# augmentation


def apply_orientation(image: RgbImage, op: int) -> RgbImage:
    """op 0..5: identity, horizontal flip, vertical flip, rot 90/180/270."""
    px = image.pixels
    if op == 0:
        out = px
    elif op == 1:
        out = px[:, ::-1]
    elif op == 2:
        out = px[::-1, :]
    elif op in (3, 4, 5):
        out = np.rot90(px, op - 2, axes=(0, 1))
    else:
        raise ConfigError(f"orientation op must be 0..5, got {op}")
    return RgbImage(pixels=np.ascontiguousarray(out))


def augment_orientation(image: RgbImage, rng) -> RgbImage:
    """Uniformly pick one of the six axis-aligned orientations."""
    return apply_orientation(image, int(rng.integers(6)))


# ---------------------------------------------------------------------------
# k-fold splitting


def kfold_split(samples, folds: int, seed: int = 0):
    """Stratified folds: per-class shuffle, then continuous round-robin deal.

    The deal position carries over between classes so overall fold sizes
    differ by at most one while each class stays evenly spread.
    """
    labels = np.asarray([getattr(s, "label", s) for s in samples], dtype=np.int64)
    n = len(labels)
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise ConfigError(f"folds ({folds}) exceed sample count ({n})")
    rng = np.random.default_rng([seed])
    fold_members = [[] for _ in range(folds)]
    pos = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        for j in idx:
            fold_members[pos % folds].append(int(j))
            pos += 1
    splits = []
    everything = set(range(n))
    for f in range(folds):
        val = np.array(sorted(fold_members[f]), dtype=np.int64)
        train = np.array(sorted(everything - set(fold_members[f])), dtype=np.int64)
        splits.append((train, val))
    return splits


# ---------------------------------------------------------------------------
# checkpoints


def _header_blob(model: EpuModel, epoch: int, seed: int, count: int) -> bytes:
    a = model.arch
    pairs = [
        ("format", CHECKPOINT_FORMAT),
        ("mode", model.mode),
        ("n_pfms", str(model.n_pfms)),
        ("n_classes", str(model.n_classes)),
        ("pfm_labels", ",".join(model.pfm_labels)),
        ("blocks", ",".join(f"{r}x{c}" for r, c in a.blocks)),
        ("kernel_size", str(a.kernel_size)),
        ("fc_width", str(a.fc_width)),
        ("input_side", str(a.input_side)),
        ("preset", a.preset),
        ("epoch", str(epoch)),
        ("seed", str(seed)),
        ("param_count", str(count)),
    ]
    if model.class_names:
        pairs.append(("class_names", ",".join(model.class_names)))
    return "".join(f"{k} = {v}\n" for k, v in pairs).encode("utf-8")


def save_checkpoint(model: EpuModel, path: str, epoch: int = 0, seed: int = 0) -> None:
    """Magic, `key = value` header, blank line, <f4 payload, crc32 trailer."""
    entries = model.state_entries()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in entries)
    count = sum(a.size for _, a in entries)
    blob = CHECKPOINT_MAGIC + _header_blob(model, epoch, seed, count) + b"\n"
    blob += payload + zlib.crc32(payload).to_bytes(4, "little")
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint_header(path: str) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read(65536)
    return _parse_header(blob)[0]


def _parse_header(blob: bytes):
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"bad magic {blob[:5]!r}")
    sep = blob.find(b"\n\n", len(CHECKPOINT_MAGIC) - 1)
    if sep < 0:
        raise CheckpointError("missing header terminator")
    header = {}
    text = blob[len(CHECKPOINT_MAGIC) : sep + 1].decode("utf-8")
    for line in text.splitlines():
        if " = " not in line:
            raise CheckpointError(f"malformed header line {line!r}")
        key, value = line.split(" = ", 1)
        header[key] = value
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported format version {header.get('format')!r}")
    return header, sep + 2


def load_checkpoint(path: str) -> EpuModel:
    """Rebuild the model from the header, then restore parameters bitwise."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, body_start = _parse_header(blob)
    body = blob[body_start:]
    if len(body) < 4:
        raise CheckpointError("truncated payload")
    payload, crc = body[:-4], body[-4:]
    if zlib.crc32(payload) != int.from_bytes(crc, "little"):
        raise CheckpointError("payload checksum mismatch")
    try:
        count = int(header["param_count"])
        blocks = tuple(
            (int(r), int(c))
            for r, c in (part.split("x") for part in header["blocks"].split(","))
        )
        arch = ArchConfig(
            blocks=blocks,
            kernel_size=int(header["kernel_size"]),
            fc_width=int(header["fc_width"]),
            input_side=int(header["input_side"]),
            preset=header.get("preset", ""),
        )
        mode = header["mode"]
        n_pfms = int(header["n_pfms"])
        n_classes = int(header["n_classes"]) if mode == "multiclass" else None
        pfm_labels = tuple(header["pfm_labels"].split(","))
        class_names = (
            tuple(header["class_names"].split(",")) if "class_names" in header else None
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad header field: {exc}") from exc
    if len(payload) != 4 * count:
        raise CheckpointError(f"payload holds {len(payload) // 4} floats, header says {count}")
    model = build_model(
        arch,
        n_pfms=n_pfms,
        mode=mode,
        seed=0,
        n_classes=n_classes,
        pfm_labels=pfm_labels,
        class_names=class_names,
    )
    flat = np.frombuffer(payload, dtype="<f4")
    offset = 0
    for _, arr in model.state_entries():
        arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
        offset += arr.size
    return model


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class FitResult:
    model: EpuModel
    history: list


def make_samples(images, labels, side: int, paths=None) -> list:
    """Extract feature-map stacks for a list of RGB images."""
    paths = paths if paths is not None else [""] * len(images)
    return [
        Sample(stack=build_pfm_stack(img, side), label=int(y), source_path=p)
        for img, y, p in zip(images, labels, paths)
    ]


def fit(
    images,
    labels,
    arch: ArchConfig,
    config: TrainConfig,
    class_names=None,
    paths=None,
    log=None,
) -> FitResult:
    """Train a fresh binary model; rebuilds feature maps per augmented epoch."""
    if len(images) == 0:
        raise ContractError("cannot fit on an empty image set")
    model = build_model(arch, n_pfms=4, mode="binary", seed=config.seed, class_names=class_names)
    side = arch.input_side
    history = []
    plain = None if config.augment else make_samples(images, labels, side, paths)
    for epoch in range(config.epochs):
        if config.augment:
            arng = np.random.default_rng([config.seed, epoch, 1])
            epoch_images = [augment_orientation(img, arng) for img in images]
            samples = make_samples(epoch_images, labels, side, paths)
        else:
            samples = plain
        srng = np.random.default_rng([config.seed, epoch, 2])
        try:
            stats = train_epoch(model, samples, config, srng)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"{exc} at epoch {epoch}", epoch=epoch) from exc
        history.append(stats)
        if log is not None:
            log(epoch, stats)
    return FitResult(model=model, history=history)


@dataclass
class EvalRecord:
    source_path: str
    label: int
    probability: float
    predicted: int
    rss: np.ndarray


@dataclass
class EvalReport:
    records: list
    auc: float
    accuracy: float
    interp_accuracy: float


def evaluate(model: EpuModel, samples) -> EvalReport:
    """Score held-out samples; reports AUC, accuracy, and sign agreement."""
    if len(samples) == 0:
        raise ContractError("cannot evaluate an empty sample set")
    records = []
    for s in samples:
        pred = epu_forward(model, s.stack)
        records.append(
            EvalRecord(
                source_path=s.source_path,
                label=s.label,
                probability=pred.probability,
                predicted=pred.label,
                rss=pred.rss.values,
            )
        )
    labels = np.array([r.label for r in records], dtype=np.int64)
    probs = np.array([r.probability for r in records], dtype=np.float64)
    preds = np.array([r.predicted for r in records], dtype=np.int64)
    rss_rows = np.stack([r.rss for r in records])
    return EvalReport(
        records=records,
        auc=auc(ScoredSet(scores=probs, labels=labels)),
        accuracy=accuracy(preds, labels),
        interp_accuracy=interpretability_accuracy(rss_rows, labels),
    )


def cross_validate(
    images,
    labels,
    arch: ArchConfig,
    config: TrainConfig,
    class_names=None,
    paths=None,
    log=None,
):
    """k-fold protocol: fresh seed-derived init per fold, report per fold."""
    labels = np.asarray(labels, dtype=np.int64)
    splits = kfold_split(labels, config.folds, config.seed)
    paths = paths if paths is not None else [""] * len(images)
    reports = []
    for fold, (tr, va) in enumerate(splits):
        fold_config = dataclasses.replace(config, seed=config.seed + fold)
        result = fit(
            [images[i] for i in tr],
            labels[tr],
            arch,
            fold_config,
            class_names=class_names,
            paths=[paths[i] for i in tr],
        )
        val_samples = make_samples(
            [images[i] for i in va], labels[va], arch.input_side, [paths[i] for i in va]
        )
        report = evaluate(result.model, val_samples)
        reports.append(report)
        if log is not None:
            log(fold, report)
    return reports


def summarize_folds(reports):
    """Mean and population std of each fold metric, Table-style."""
    out = {}
    for key in ("auc", "accuracy", "interp_accuracy"):
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        out[key] = (float(vals.mean()), float(vals.std()))
    return out
