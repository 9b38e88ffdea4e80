"""Product datasets: records, PPM images, splits and a synthetic generator.

The generator plants a class-identifying signal in each modality
independently. With probability ``p_text`` a title contains the token
``classtok_<c>`` among noise words; with probability ``p_image`` the image
holds class ``c``'s solid colour patch at ``c``'s position over pixel noise.
Otherwise the modality carries no trace of ``c``. By default an
uninformative image is noise only; setting ``image_decoy`` above zero
makes it show another class's patch instead with that probability, which
models product photos that look like a different category.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod

SHARD_SIZE = 1024


class DatasetError(ValueError):
    """Malformed record file or inconsistent dataset."""


class DecodeError(ValueError):
    """Image bytes that are not a valid binary PPM."""


@dataclass(frozen=True)
class ProductRecord:
    id: str
    title: str
    image_ref: str
    shelves: frozenset

    def __post_init__(self):
        if not self.shelves:
            raise DatasetError(f"product {self.id} has no shelves")


@dataclass
class Dataset:
    records: list
    images: list  # raw HxWx3 uint8 arrays aligned with records
    num_classes: int
    flags: np.ndarray | None = None  # [N, 2] bool: (text informative, image informative)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def titles(self) -> list[str]:
        return [r.title for r in self.records]

    @property
    def shelves(self) -> list[frozenset]:
        return [r.shelves for r in self.records]

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset(
            records=[self.records[i] for i in idx],
            images=[self.images[i] for i in idx],
            num_classes=self.num_classes,
            flags=None if self.flags is None else self.flags[idx],
        )

    def targets(self) -> np.ndarray:
        """Multi-hot [N, C] float32 built from the full shelf set."""
        z = np.zeros((len(self), self.num_classes), dtype=np.float32)
        for i, r in enumerate(self.records):
            z[i, sorted(r.shelves)] = 1
        return z


# ---------------------------------------------------------------------------
# synthetic generation

@dataclass
class GenSpec:
    classes: int = 20
    n: int = 10_000
    p_text: float = 0.7
    p_image: float = 0.55
    labels_per_product: tuple = (1, 2, 3)
    group_size: int = 4
    vocab_noise_size: int = 500
    title_words: tuple = (4, 12)
    image_size: int = 32
    patch_size: int = 8
    image_decoy: float = 0.0
    class_skew: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.labels_per_product = tuple(int(k) for k in self.labels_per_product)
        self.title_words = tuple(int(k) for k in self.title_words)
        self.validate()

    def validate(self) -> None:
        for name in ("p_text", "p_image", "image_decoy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.n < self.classes:
            raise ValueError(f"n ({self.n}) must be >= classes ({self.classes})")
        if not self.labels_per_product or min(self.labels_per_product) < 1:
            raise ValueError("labels_per_product must list counts >= 1")
        if self.group_size < 1 or self.vocab_noise_size < 1:
            raise ValueError("group_size and vocab_noise_size must be positive")
        lo, hi = self.title_words
        if not 1 <= lo <= hi:
            raise ValueError(f"bad title_words range {self.title_words}")
        if not 0 < self.patch_size <= self.image_size:
            raise ValueError("patch_size must fit inside the image")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels_per_product"] = list(self.labels_per_product)
        d["title_words"] = list(self.title_words)
        return d


def class_group(c: int, spec: GenSpec) -> list[int]:
    g = spec.group_size
    start = (c // g) * g
    return list(range(start, min(start + g, spec.classes)))


def class_color(c: int, num_classes: int) -> np.ndarray:
    r, g, b = colorsys.hsv_to_rgb(c / num_classes, 1.0, 1.0)
    return np.array([round(r * 255), round(g * 255), round(b * 255)], dtype=np.uint8)


def patch_origin(c: int, spec: GenSpec) -> tuple[int, int]:
    span = spec.image_size - spec.patch_size
    slots = [0, span // 2, span]
    k = c % 9
    return slots[k // 3], slots[k % 3]


def class_probs(spec: GenSpec) -> np.ndarray:
    w = (np.arange(spec.classes) + 1.0) ** (-spec.class_skew)
    return w / w.sum()


def _draw_shelves(c: int, spec: GenSpec, rng: np.random.Generator) -> frozenset:
    k = int(rng.choice(spec.labels_per_product))
    mates = [m for m in class_group(c, spec) if m != c]
    extra = min(k - 1, len(mates))
    chosen = rng.choice(mates, size=extra, replace=False) if extra > 0 else []
    return frozenset([c] + [int(m) for m in chosen])


def _gen_shard(spec: GenSpec, shard: int, start: int, count: int):
    rng = rngmod.stream(spec.seed, "gen", shard)
    probs = class_probs(spec)
    size, ps = spec.image_size, spec.patch_size
    noise = rng.integers(0, 256, size=(count, size, size, 3), dtype=np.uint8)
    records, images, flags = [], [], []
    for j in range(count):
        c = int(rng.choice(spec.classes, p=probs))
        shelves = _draw_shelves(c, spec, rng)
        text_inf = bool(rng.random() < spec.p_text)
        image_inf = bool(rng.random() < spec.p_image)
        nwords = int(rng.integers(spec.title_words[0], spec.title_words[1] + 1))
        words = [f"w{int(t)}" for t in rng.integers(0, spec.vocab_noise_size, size=nwords)]
        if text_inf:
            words.insert(int(rng.integers(0, nwords + 1)), f"classtok_{c}")
        img = noise[j]
        shown = c if image_inf else None
        if not image_inf and rng.random() < spec.image_decoy:
            shown = int((c + 1 + rng.integers(0, spec.classes - 1)) % spec.classes)
        if shown is not None:
            y, x = patch_origin(shown, spec)
            img[y : y + ps, x : x + ps] = class_color(shown, spec.classes)
        pid = f"p{start + j:06d}"
        records.append(ProductRecord(pid, " ".join(words), f"images/{pid}.ppm", shelves))
        images.append(img)
        flags.append((text_inf, image_inf))
    return records, images, flags


def gen_synthetic(spec: GenSpec) -> Dataset:
    """Generate ``spec.n`` products; deterministic in ``spec``.

    Work is cut into fixed-size shards, shard ``k`` drawing from its own
    stream, so shards can be produced independently and concatenated.
    """
    spec.validate()
    records, images, flags = [], [], []
    for shard, start in enumerate(range(0, spec.n, SHARD_SIZE)):
        r, im, fl = _gen_shard(spec, shard, start, min(SHARD_SIZE, spec.n - start))
        records += r
        images += im
        flags += fl
    return Dataset(records, images, spec.classes, np.array(flags, dtype=bool))


def shelf_hit_rates(spec: GenSpec) -> np.ndarray:
    """P(class j is among a random product's shelves), for every j."""
    probs = class_probs(spec)
    ks = np.array(spec.labels_per_product)
    hit = np.zeros(spec.classes)
    for c in range(spec.classes):
        hit[c] += probs[c]
        mates = [m for m in class_group(c, spec) if m != c]
        if mates:
            e_extra = np.mean(np.minimum(ks - 1, len(mates)))
            for m in mates:
                hit[m] += probs[c] * e_extra / len(mates)
    return hit


def _decoy_hit_rate(spec: GenSpec) -> float:
    """P(decoy class is a shelf), decoy uniform over the other classes."""
    probs = class_probs(spec)
    ks = np.array(spec.labels_per_product)
    total = 0.0
    for c in range(spec.classes):
        mates = [m for m in class_group(c, spec) if m != c]
        e_extra = np.mean(np.minimum(ks - 1, len(mates))) if mates else 0.0
        total += probs[c] * e_extra / (spec.classes - 1)
    return float(total)


def ideal_accuracies(spec: GenSpec) -> dict:
    """Analytic top-1 accuracy of the ideal per-modality rules.

    Informative modality -> the planted class; otherwise the most frequent
    shelf (text) or the shown patch class (image; chance if pure noise).
    """
    leak = float(shelf_hit_rates(spec).max())
    decoy_hit = _decoy_hit_rate(spec)
    text = spec.p_text + (1 - spec.p_text) * leak
    image_leak = spec.image_decoy * decoy_hit + (1 - spec.image_decoy) * leak
    image = spec.p_image + (1 - spec.p_image) * image_leak
    return {
        "text": text,
        "image": image,
        "text_leak": leak,
        "image_leak": image_leak,
        "oracle_no_chance": 1 - (1 - spec.p_text) * (1 - spec.p_image),
    }


def ideal_predictions(ds: Dataset, spec: GenSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-product predictions of the ideal rules (reads the planted signal
    back out of the raw title/image, not from the flags)."""
    fallback = int(np.argmax(shelf_hit_rates(spec)))
    text_pred = np.full(len(ds), fallback)
    image_pred = np.full(len(ds), fallback)
    ps = spec.patch_size
    colors = [class_color(c, spec.classes) for c in range(spec.classes)]
    for i, r in enumerate(ds.records):
        for tok in r.title.split():
            if tok.startswith("classtok_"):
                text_pred[i] = int(tok[len("classtok_"):])
        img = ds.images[i]
        for c in range(spec.classes):
            y, x = patch_origin(c, spec)
            if np.all(img[y : y + ps, x : x + ps] == colors[c]):
                image_pred[i] = c
                break
    return text_pred, image_pred


# ---------------------------------------------------------------------------
# PPM

def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def decode_ppm(buf: bytes) -> np.ndarray:
    """Parse a binary 8-bit P6 image into an HxWx3 uint8 array."""
    pos = 0
    fields = []

    def skip_space_and_comments():
        nonlocal pos
        while pos < len(buf):
            ch = buf[pos : pos + 1]
            if ch == b"#":
                while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break

    for _ in range(4):
        skip_space_and_comments()
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        fields.append(buf[start:pos])
    if len(fields) < 4 or fields[0] != b"P6":
        raise DecodeError("not a binary P6 PPM")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError as exc:
        raise DecodeError(f"bad PPM header: {fields[1:]}") from exc
    if w < 1 or h < 1 or maxval != 255:
        raise DecodeError(f"unsupported PPM geometry {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    need = w * h * 3
    raster = buf[pos : pos + need]
    if len(raster) != need:
        raise DecodeError(f"PPM raster truncated: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_ppm(f.read())


# ---------------------------------------------------------------------------
# record files

RECORDS_FILE = "records.tsv"
FLAGS_FILE = "flags.tsv"
MANIFEST_FILE = "manifest.json"


def format_record(r: ProductRecord) -> str:
    return "\t".join([r.id, r.title, r.image_ref, ",".join(str(s) for s in sorted(r.shelves))])


def parse_record(line: str, lineno: int) -> ProductRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise DatasetError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
    pid, title, ref, shelves = parts
    try:
        ids = frozenset(int(s) for s in shelves.split(",") if s != "")
    except ValueError as exc:
        raise DatasetError(f"line {lineno}: bad shelf list {shelves!r}") from exc
    if not pid or not ids:
        raise DatasetError(f"line {lineno}: empty id or shelf set")
    return ProductRecord(pid, title, ref, ids)


def save_dataset(ds: Dataset, out_dir, spec: GenSpec | None = None) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    with open(out / RECORDS_FILE, "w", encoding="utf-8", newline="\n") as f:
        for r in ds.records:
            f.write(format_record(r) + "\n")
    for r, img in zip(ds.records, ds.images):
        write_ppm(out / r.image_ref, img)
    if ds.flags is not None:
        with open(out / FLAGS_FILE, "w", encoding="utf-8", newline="\n") as f:
            for r, (t, i) in zip(ds.records, ds.flags):
                f.write(f"{r.id}\t{int(t)}\t{int(i)}\n")
    manifest = {"num_classes": ds.num_classes, "n": len(ds)}
    if spec is not None:
        manifest["spec"] = spec.to_dict()
    if ds.flags is not None:
        manifest["informative_rate"] = {
            "text": float(ds.flags[:, 0].mean()),
            "image": float(ds.flags[:, 1].mean()),
        }
    with open(out / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def load_dataset(path, num_classes: int | None = None) -> Dataset:
    """Load ``records.tsv`` (a file or its directory) with its images."""
    path = Path(path)
    rec_file = path / RECORDS_FILE if path.is_dir() else path
    root = rec_file.parent
    if not rec_file.exists():
        raise FileNotFoundError(rec_file)
    records = []
    with open(rec_file, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                records.append(parse_record(line, lineno))
    seen = set()
    for r in records:
        if r.id in seen:
            raise DatasetError(f"duplicate product id {r.id}")
        seen.add(r.id)
    manifest_path = root / MANIFEST_FILE
    if num_classes is None and manifest_path.exists():
        num_classes = json.loads(manifest_path.read_text())["num_classes"]
    if num_classes is None:
        num_classes = 1 + max(max(r.shelves) for r in records)
    for r in records:
        if max(r.shelves) >= num_classes or min(r.shelves) < 0:
            raise DatasetError(f"product {r.id} has a shelf outside [0, {num_classes})")
    images = [read_ppm(root / r.image_ref) for r in records]
    flags = None
    if (root / FLAGS_FILE).exists():
        fl = {}
        for line in (root / FLAGS_FILE).read_text(encoding="utf-8").splitlines():
            pid, t, i = line.split("\t")
            fl[pid] = (t == "1", i == "1")
        if all(r.id in fl for r in records):
            flags = np.array([fl[r.id] for r in records], dtype=bool)
    return Dataset(records, images, num_classes, flags)


def split(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then cut into (train, validation, test)."""
    if len(fractions) != 3 or min(fractions) < 0 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(ds)
    order = rngmod.stream(seed, "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple(ds.subset(sorted(p)) for p in parts)


def informative_rates(ds: Dataset) -> dict:
    if ds.flags is None:
        return {}
    return {"text": float(ds.flags[:, 0].mean()), "image": float(ds.flags[:, 1].mean())}


def list_files(out_dir) -> list[str]:
    root = Path(out_dir)
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())
