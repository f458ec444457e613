"""Task-sequence construction for the simulator, plus IDX-file ingestion.

Synthetic classes are Gaussian blobs whose means sit on the unit sphere.
Three scenario modes are supported:

- ``ltp``: every client independently draws disjoint tasks from the class
  pool, so clients need not share any classes.
- ``shuffle``: one global task list; every client sees the same tasks in a
  client-specific order.
- ``two_cluster``: clients are split into two groups that share one global
  task list (per-client reordered) but draw every class from mirrored
  feature distributions (the second group's class means are the negation of
  the first's), so the same label points in conflicting directions across
  groups. This is the standard strongly-separable heterogeneous scenario
  used by the ablation tests: aggregating across groups cancels knowledge,
  aggregating within a group recalls it.

All generation is deterministic in ``ScenarioConfig.seed``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MODES = ("ltp", "shuffle", "two_cluster")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base error for malformed IDX files."""


class IdxBadMagic(IdxFormatError):
    pass


class IdxTruncated(IdxFormatError):
    pass


class IdxCountMismatch(IdxFormatError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    class_ids: tuple[int, ...]
    samples_per_class: int


@dataclass
class TaskData:
    """One realized task: its class set and the three disjoint splits."""

    class_ids: tuple[int, ...]
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def train_count(self) -> int:
        return len(self.train_y)


@dataclass
class ClientTimeline:
    client_id: int
    tasks: list[TaskData]

    def seen_classes(self, through_phase: int) -> tuple[int, ...]:
        """Cumulative class ids after finishing task index ``through_phase``."""
        seen: set[int] = set()
        for task in self.tasks[: through_phase + 1]:
            seen.update(task.class_ids)
        return tuple(sorted(seen))


@dataclass
class ScenarioConfig:
    mode: str = "ltp"
    num_clients: int = 8
    num_tasks: int = 6
    classes_per_task: int = 2
    num_classes: int = 26
    feature_dim: int = 32
    seed: int | None = None  # None: the run seed is used
    blob_spread: float = 0.25
    samples_per_class: int = 200
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    het_scale: tuple[float, float] = (0.8, 1.2)
    het_shift: float = 0.1

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.seed is None:
            raise ValueError("scenario seed unset (a run fills it from the run seed)")
        if min(self.num_clients, self.num_tasks, self.classes_per_task) < 1:
            raise ValueError("client/task/class counts must be positive")
        if self.num_classes < 2 or self.feature_dim < 1:
            raise ValueError("need num_classes >= 2 and feature_dim >= 1")
        need = self.classes_per_task * self.num_tasks
        if need > self.num_classes:
            raise ValueError(
                f"classes_per_task * num_tasks = {need} exceeds pool {self.num_classes}"
            )
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.mode == "two_cluster" and self.num_clients < 2:
            raise ValueError("two_cluster needs at least 2 clients")


@dataclass
class ClassPool:
    """Gaussian class generators: unit-sphere means with isotropic spread."""

    means: np.ndarray  # (num_classes, feature_dim)
    spread: float

    def sample(self, class_id: int, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.means.shape[1]
        return self.means[class_id] + self.spread * rng.standard_normal((n, d))


def gen_synthetic_pool(
    num_classes: int, feature_dim: int, blob_spread: float, seed
) -> ClassPool:
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((num_classes, feature_dim))
    means = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return ClassPool(means, blob_spread)


def _chunk_tasks(class_order: np.ndarray, num_tasks: int, per_task: int) -> list[tuple[int, ...]]:
    picked = class_order[: num_tasks * per_task]
    return [
        tuple(sorted(int(c) for c in picked[i * per_task : (i + 1) * per_task]))
        for i in range(num_tasks)
    ]


def _task_class_sets(cfg: ScenarioConfig) -> list[list[tuple[int, ...]]]:
    """Per-client ordered task class-sets according to the scenario mode."""
    draw_rng = np.random.default_rng([cfg.seed, 1])
    out: list[list[tuple[int, ...]]] = []
    if cfg.mode == "ltp":
        for k in range(cfg.num_clients):
            rng = np.random.default_rng([cfg.seed, 1, k])
            out.append(
                _chunk_tasks(rng.permutation(cfg.num_classes), cfg.num_tasks, cfg.classes_per_task)
            )
    elif cfg.mode == "shuffle":
        shared = _chunk_tasks(
            draw_rng.permutation(cfg.num_classes), cfg.num_tasks, cfg.classes_per_task
        )
        for k in range(cfg.num_clients):
            rng = np.random.default_rng([cfg.seed, 2, k])
            out.append([shared[i] for i in rng.permutation(cfg.num_tasks)])
    else:  # two_cluster: one global task list, group-specific feature pools
        shared = _chunk_tasks(
            draw_rng.permutation(cfg.num_classes), cfg.num_tasks, cfg.classes_per_task
        )
        for k in range(cfg.num_clients):
            rng = np.random.default_rng([cfg.seed, 2, k])
            out.append([shared[i] for i in rng.permutation(cfg.num_tasks)])
    return out


def cluster_assignment(cfg: ScenarioConfig) -> list[int]:
    """Group index per client (all zeros outside two_cluster mode)."""
    if cfg.mode != "two_cluster":
        return [0] * cfg.num_clients
    split_at = (cfg.num_clients + 1) // 2
    return [0 if k < split_at else 1 for k in range(cfg.num_clients)]


def _realize_task(
    pool: ClassPool,
    class_ids: tuple[int, ...],
    cfg: ScenarioConfig,
    scale: float,
    shift: np.ndarray,
    rng: np.random.Generator,
) -> TaskData:
    xs = [pool.sample(c, cfg.samples_per_class, rng) for c in class_ids]
    ys = [np.full(cfg.samples_per_class, c, dtype=np.int64) for c in class_ids]
    x = np.concatenate(xs) * scale + shift
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    x, y = x[order], y[order]
    n = len(y)
    n_train = int(cfg.split[0] * n)
    n_val = int(cfg.split[1] * n)
    return TaskData(
        class_ids=class_ids,
        train_x=x[:n_train],
        train_y=y[:n_train],
        val_x=x[n_train : n_train + n_val],
        val_y=y[n_train : n_train + n_val],
        test_x=x[n_train + n_val :],
        test_y=y[n_train + n_val :],
    )


def build_scenario(cfg: ScenarioConfig) -> list[ClientTimeline]:
    """Materialize all client timelines for a scenario config."""
    cfg.validate()
    clusters = cluster_assignment(cfg)
    base_pool = gen_synthetic_pool(cfg.num_classes, cfg.feature_dim, cfg.blob_spread, [cfg.seed, 0])
    # per-cluster pools: same class id, mirrored feature distribution
    pools = [base_pool, ClassPool(-base_pool.means, base_pool.spread)][: max(clusters) + 1]
    class_sets = _task_class_sets(cfg)
    timelines = []
    for k in range(cfg.num_clients):
        het_rng = np.random.default_rng([cfg.seed, 3, k])
        scale = float(het_rng.uniform(*cfg.het_scale))
        shift = het_rng.uniform(-cfg.het_shift, cfg.het_shift, size=cfg.feature_dim)
        data_rng = np.random.default_rng([cfg.seed, 4, k])
        pool = pools[clusters[k]]
        tasks = [
            _realize_task(pool, cls, cfg, scale, shift, data_rng) for cls in class_sets[k]
        ]
        timelines.append(ClientTimeline(client_id=k, tasks=tasks))
    return timelines


def _read_be32(buf: bytes, off: int, path: str) -> int:
    if off + 4 > len(buf):
        raise IdxTruncated(f"{path}: truncated header")
    return struct.unpack_from(">i", buf, off)[0]


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load an IDX image/label file pair.

    Returns (features, labels) with features flattened row-major and scaled
    to [0, 1]. Raises IdxBadMagic / IdxTruncated / IdxCountMismatch on the
    corresponding malformations.
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lbl_buf = f.read()

    magic = _read_be32(img_buf, 0, str(images_path))
    if magic != IDX_IMAGE_MAGIC:
        raise IdxBadMagic(f"{images_path}: magic 0x{magic & 0xFFFFFFFF:08x}")
    count = _read_be32(img_buf, 4, str(images_path))
    rows = _read_be32(img_buf, 8, str(images_path))
    cols = _read_be32(img_buf, 12, str(images_path))
    payload = img_buf[16:]
    if len(payload) < count * rows * cols:
        raise IdxTruncated(f"{images_path}: payload shorter than header promises")

    lmagic = _read_be32(lbl_buf, 0, str(labels_path))
    if lmagic != IDX_LABEL_MAGIC:
        raise IdxBadMagic(f"{labels_path}: magic 0x{lmagic & 0xFFFFFFFF:08x}")
    lcount = _read_be32(lbl_buf, 4, str(labels_path))
    lpayload = lbl_buf[8:]
    if len(lpayload) < lcount:
        raise IdxTruncated(f"{labels_path}: payload shorter than header promises")
    if lcount != count:
        raise IdxCountMismatch(f"{count} images vs {lcount} labels")

    pixels = np.frombuffer(payload, dtype=np.uint8, count=count * rows * cols)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lpayload, dtype=np.uint8, count=count).astype(np.int64)
    return features, labels
