"""Dataset directories, labels, seeded splits and face-to-edge label conversion.

Layouts:

* classification: ``root/<class>/[<anything>/]*.obj|*.off``
* segmentation: ``root/meshes/<stem>.obj|.off`` with ``root/labels/<stem>.txt``
  holding one integer segment id per face line.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import shapes
from .errors import ConfigError, LabelError, MdcGcnError
from .mesh import load_mesh, save_mesh

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".off")


@dataclass
class Item:
    path: Path
    label: int = None
    label_path: Path = None

    @property
    def key(self):
        return str(self.path)


@dataclass
class DatasetIndex:
    root: Path
    task: str
    items: list
    class_names: list
    errors: list = field(default_factory=list)
    label_base: int = 0

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.items)

    def by_key(self):
        return {it.key: it for it in self.items}


def _mesh_files(directory):
    return sorted(p for p in Path(directory).rglob("*") if p.is_file() and p.suffix.lower() in MESH_SUFFIXES)


def load_classification_dataset(root, check=False):
    """Index a directory-per-class dataset; class ids follow sorted class names.

    With ``check`` every mesh is parsed once and unreadable files are moved
    from ``items`` to ``errors`` instead of aborting.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not classes:
        raise ConfigError(f"dataset root {root} has no class directories")
    items = []
    errors = []
    for cid, name in enumerate(classes):
        files = _mesh_files(root / name)
        if not files:
            log.warning("class %r under %s has no mesh files", name, root)
        for path in files:
            if check:
                try:
                    load_mesh(path)
                except (MdcGcnError, OSError) as exc:
                    errors.append((str(path), str(exc)))
                    continue
            items.append(Item(path, label=cid))
    return DatasetIndex(root, "classification", items, classes, errors)


def read_label_file(path):
    path = Path(path)
    values = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(int(line.split()[0]))
        except ValueError:
            raise LabelError(f"{path}:{lineno}: not an integer label: {line!r}") from None
    return np.asarray(values, dtype=np.int64)


def load_face_labels(path, mesh, base=None):
    """Per-face segment ids as a 0-based array.

    ``base=None`` detects 1-based files by their minimum value; pass ``0``
    or ``1`` to force the convention.
    """
    raw = read_label_file(path)
    nf = mesh if isinstance(mesh, (int, np.integer)) else mesh.num_faces
    if raw.shape[0] != nf:
        raise LabelError(f"{path}: {raw.shape[0]} labels for a mesh with {nf} faces")
    if base is None:
        base = 1 if raw.size and raw.min() == 1 else 0
        if base == 1:
            log.info("%s: labels look 1-based, shifting to 0-based", path)
    labels = raw - base
    if labels.size and labels.min() < 0:
        raise LabelError(f"{path}: negative label after applying base {base}")
    return labels


def load_segmentation_dataset(root, check=False):
    root = Path(root)
    mesh_dir, label_dir = root / "meshes", root / "labels"
    if not mesh_dir.is_dir() or not label_dir.is_dir():
        raise ConfigError(f"segmentation dataset {root} needs meshes/ and labels/ subdirectories")
    items = []
    errors = []
    mins, maxs = [], []
    for path in _mesh_files(mesh_dir):
        lp = label_dir / f"{path.stem}.txt"
        if not lp.exists():
            errors.append((str(path), f"missing label file {lp}"))
            continue
        try:
            raw = read_label_file(lp)
            if check:
                mesh = load_mesh(path)
                if raw.shape[0] != mesh.num_faces:
                    raise LabelError(f"{lp}: {raw.shape[0]} labels for a mesh with {mesh.num_faces} faces")
        except (MdcGcnError, OSError) as exc:
            errors.append((str(path), str(exc)))
            continue
        if raw.size:
            mins.append(int(raw.min()))
            maxs.append(int(raw.max()))
        items.append(Item(path, label_path=lp))
    if not items:
        raise ConfigError(f"segmentation dataset {root} has no usable meshes")
    # the convention is decided once for the whole dataset, so a mesh that
    # happens to lack segment 0 is not shifted on its own
    base = 1 if mins and min(mins) == 1 else 0
    if base:
        log.info("%s: label files are 1-based, shifting to 0-based", root)
    num = max(maxs) - base + 1 if maxs else 1
    return DatasetIndex(root, "segmentation", items, [str(i) for i in range(num)], errors, label_base=base)


def load_dataset(root, task, check=False):
    if task == "classification":
        return load_classification_dataset(root, check)
    if task == "segmentation":
        return load_segmentation_dataset(root, check)
    raise ConfigError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitSpec:
    seed: int
    repeat: int
    train: list
    test: list
    train_per_class: int = None
    train_fraction: float = None


def make_splits(index, train_per_class=None, train_fraction=None, seed=0, repeats=1):
    """``repeats`` independent seeded train/test partitions of ``index``.

    Classification indices split per class (exact counts or a per-class
    fraction); segmentation indices split by fraction over all items.
    """
    if (train_per_class is None) == (train_fraction is None):
        raise ConfigError("give exactly one of train_per_class or train_fraction")
    if train_fraction is not None and not 0.0 < train_fraction <= 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1], got {train_fraction}")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")

    if index.task == "classification":
        groups = {}
        for i, it in enumerate(index.items):
            groups.setdefault(it.label, []).append(i)
    else:
        if train_per_class is not None:
            raise ConfigError("segmentation splits take a train_fraction")
        groups = {0: list(range(len(index.items)))}

    counts = {}
    for c, members in groups.items():
        k = train_per_class if train_per_class is not None else int(round(train_fraction * len(members)))
        if k > len(members):
            name = index.class_names[c] if index.task == "classification" else "items"
            raise ConfigError(f"class {name!r} has {len(members)} items, cannot take {k} for training")
        if k == len(members):
            log.warning("class %s: every item goes to training, its test set is empty", c)
        counts[c] = k

    splits = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        train, test = [], []
        for c in sorted(groups):
            members = groups[c]
            perm = rng.permutation(len(members))
            k = counts[c]
            train += [members[j] for j in perm[:k]]
            test += [members[j] for j in perm[k:]]
        splits.append(SplitSpec(seed, r, sorted(train), sorted(test), train_per_class, train_fraction))
    return splits


def save_split(split, index, directory):
    """Write ``train.txt`` and ``test.txt`` (one mesh path per line) under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part in ("train", "test"):
        paths = [index.items[i].key for i in getattr(split, part)]
        (directory / f"{part}.txt").write_text("".join(p + "\n" for p in paths))


def load_split(directory, index):
    directory = Path(directory)
    lookup = {it.key: i for i, it in enumerate(index.items)}
    parts = {}
    for part in ("train", "test"):
        f = directory / f"{part}.txt"
        lines = [l.strip() for l in f.read_text().splitlines() if l.strip()] if f.exists() else []
        missing = [l for l in lines if l not in lookup]
        if missing:
            raise ConfigError(f"{f}: {len(missing)} entries not in the dataset, e.g. {missing[0]}")
        parts[part] = sorted(lookup[l] for l in lines)
    return SplitSpec(-1, 0, parts["train"], parts["test"])


# ---------------------------------------------------------------------------
# edge labels and accuracies


def face_to_edge_labels(edges, face_labels):
    """One label per mesh edge.

    Incident faces that agree give the shared label; disagreeing faces give
    the label of the lower-index face; a boundary edge takes its only face.
    """
    face_labels = np.asarray(face_labels)
    ef = edges.edge_faces
    lower = np.where(ef[:, 1] >= 0, np.minimum(ef[:, 0], ef[:, 1]), ef[:, 0])
    return face_labels[lower]


def face_accuracy(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise LabelError(f"prediction shape {pred.shape} != ground truth {truth.shape}")
    return float((pred == truth).mean()) if truth.size else float("nan")


def edge_accuracy(edges, pred_faces, true_faces, soft=False):
    """Edge-level accuracy after converting both label sets to edges.

    ``soft`` counts an edge as correct when its predicted label matches the
    ground truth of either incident face.
    """
    pred_e = face_to_edge_labels(edges, pred_faces)
    if not soft:
        return face_accuracy(pred_e, face_to_edge_labels(edges, true_faces))
    ef = edges.edge_faces
    true_faces = np.asarray(true_faces)
    a = true_faces[ef[:, 0]]
    b = np.where(ef[:, 1] >= 0, true_faces[np.maximum(ef[:, 1], 0)], a)
    ok = (pred_e == a) | (pred_e == b)
    return float(ok.mean()) if ok.size else float("nan")


# ---------------------------------------------------------------------------
# synthetic datasets


def make_shape_classification(root, per_class=20, seed=0, noise=0.01):
    """Two classes: jittered geodesic spheres (500 faces) and jittered boxes (432 faces)."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for name in ("box", "sphere"):
        (root / name).mkdir(parents=True, exist_ok=True)
    sphere = shapes.geodesic_sphere(5)
    for i in range(per_class):
        s = sphere.with_vertices(sphere.vertices * rng.uniform(0.85, 1.15, size=3))
        s = shapes.jitter(s, noise, rng)
        s = s.with_vertices(s.vertices @ shapes.random_rotation(rng).T)
        save_mesh(s, root / "sphere" / f"sphere_{i:03d}.obj")
        b = shapes.box(rng.uniform(0.5, 2.0, size=3), divisions=6)
        b = shapes.jitter(b, noise, rng)
        b = b.with_vertices(b.vertices @ shapes.random_rotation(rng).T)
        save_mesh(b, root / "box" / f"box_{i:03d}.obj")
    return root


def make_cylinder_segmentation(root, count=30, seed=0, noise=0.005):
    """Closed 600-face cylinders labeled 0 (bottom half) / 1 (top half) by face centroid height."""
    root = Path(root)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        m = shapes.cylinder(radius=rng.uniform(0.35, 0.65), height=rng.uniform(1.5, 2.5), segments=20, rings=14)
        z = m.vertices[m.faces].mean(axis=1)[:, 2]
        labels = (z > 0).astype(np.int64)
        m = shapes.jitter(m, noise, rng)
        m = m.with_vertices(m.vertices @ shapes.rotation_matrix((0, 0, 1), rng.uniform(0, 2 * np.pi)).T)
        save_mesh(m, root / "meshes" / f"cyl_{i:03d}.obj")
        (root / "labels" / f"cyl_{i:03d}.txt").write_text("".join(f"{l}\n" for l in labels))
    return root
