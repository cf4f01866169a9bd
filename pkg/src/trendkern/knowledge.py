"""External knowledge (taxonomy feature ids) and internal knowledge (similarity triplets)."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, ValidationError

SAMPLE_RANGE_GRID = (50, 100, 500, 1000)


@dataclass
class Taxonomy:
    parent_of: dict
    category_vocab_size: int

    def __post_init__(self):
        bad = {e: p for e, p in self.parent_of.items() if not 0 <= p < self.category_vocab_size}
        if bad:
            raise ValidationError(
                f"parent ids outside category vocab {self.category_vocab_size}: {bad}"
            )

    def covers(self, element_ids):
        missing = sorted({int(e) for e in element_ids} - set(self.parent_of))
        if missing:
            raise ConfigError(f"taxonomy has no parent for element_id(s) {missing}")

    def parents(self, element_ids):
        """Vectorized parent lookup."""
        self.covers(element_ids)
        return np.array([self.parent_of[int(e)] for e in element_ids], dtype=np.int64)


def modulo_taxonomy(num_elements, num_categories):
    """Parent = element_id mod num_categories (what the synthetic generator assumes)."""
    return Taxonomy({e: e % num_categories for e in range(num_elements)}, num_categories)


def load_taxonomy(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("category_vocab_size="):
        raise DataFormatError(f"{path}: line 1: expected 'category_vocab_size=<n>' header")
    try:
        size = int(lines[0].split("=", 1)[1])
    except ValueError:
        raise DataFormatError(f"{path}: line 1: bad category_vocab_size") from None
    parent_of = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}: line {lineno}: expected 'element_id<TAB>parent_id'")
        try:
            element, parent = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: non-integer id") from None
        if element in parent_of:
            raise DataFormatError(f"{path}: line {lineno}: element {element} listed twice")
        parent_of[element] = parent
    return Taxonomy(parent_of, size)


def save_taxonomy(taxonomy, path):
    lines = [f"category_vocab_size={taxonomy.category_vocab_size}"]
    lines += [f"{e}\t{p}" for e, p in sorted(taxonomy.parent_of.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def build_feature_ids(sample, taxonomy, ext_kg):
    """``[element, group]``, plus the parent category when ``ext_kg``."""
    ids = [sample.element_id, sample.group_id]
    if ext_kg:
        if taxonomy is None or sample.element_id not in taxonomy.parent_of:
            raise ConfigError(f"external knowledge enabled but element_id {sample.element_id} has no taxonomy parent")
        ids.append(taxonomy.parent_of[sample.element_id])
    return ids


# ------------------------------------------------------------ triplet index


@dataclass
class TripletIndex:
    """Per-anchor neighbor rankings, nearest first.

    Row ``i`` describes anchor ``sample_ids[i]``. ``neighbors[i, :lengths[i]]``
    holds neighbor sample ids and ``distances`` the matching distances; the
    tail of each row is padded with -1 / inf.
    """

    sample_ids: np.ndarray
    neighbors: np.ndarray
    distances: np.ndarray
    lengths: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        self._row = {int(s): i for i, s in enumerate(self.sample_ids)}

    def row_of(self, anchor):
        try:
            return self._row[int(anchor)]
        except KeyError:
            raise KeyError(f"sample {anchor} is not an anchor of this index") from None

    def ranked(self, anchor):
        i = self.row_of(anchor)
        return self.neighbors[i, :self.lengths[i]]

    def ranked_distances(self, anchor):
        i = self.row_of(anchor)
        return self.distances[i, :self.lengths[i]]


def rank_neighbors(samples, metric="euclidean", depth=None, chunk=256):
    """Rank, for every sample, all samples of other series by input-window distance.

    Ties break by ascending sample id. ``depth`` truncates each ranking to its
    nearest ``depth`` entries (enough for sampling with range R needs 2R);
    ``None`` keeps the full ranking.
    """
    if metric != "euclidean":
        raise ValueError(f"unsupported metric {metric!r}")
    arr = samples.arrays()
    X, ids, series = arr["inputs"], arr["sample_ids"], arr["series_ids"]
    n = len(ids)
    if n < 3:
        raise ValidationError(f"need at least 3 samples to form triplets, got {n}")
    if X.ndim != 2:
        raise ValidationError("samples must share input_len")
    _, inverse, counts = np.unique(series, return_inverse=True, return_counts=True)
    eligible_counts = n - counts[inverse]
    if eligible_counts.min() < 2:
        raise ValidationError("every anchor needs at least 2 samples from other series")
    width = int(eligible_counts.max()) if depth is None else int(min(depth, eligible_counts.max()))

    neighbors = np.full((n, width), -1, dtype=np.int64)
    distances = np.full((n, width), np.inf)
    lengths = np.zeros(n, dtype=np.int64)
    sq = (X * X).sum(axis=1)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        # Gram-form squared distances only shortlist candidates; exact
        # distances are recomputed for the final order.
        approx = sq[lo:hi, None] + sq[None, :] - 2.0 * (X[lo:hi] @ X.T)
        approx[series[lo:hi, None] == series[None, :]] = np.inf
        for r in range(hi - lo):
            i = lo + r
            row = approx[r]
            k = min(width, int(eligible_counts[i]))
            if k < eligible_counts[i]:
                kth = np.partition(row, k - 1)[k - 1]
                slack = 1e-9 * (1.0 + abs(kth)) + 1e-12
                cand = np.flatnonzero(row <= kth + slack)
            else:
                cand = np.flatnonzero(np.isfinite(row))
            diff = X[cand] - X[i]
            d = np.sqrt((diff * diff).sum(axis=1))
            order = np.lexsort((ids[cand], d))[:k]
            neighbors[i, :k] = ids[cand[order]]
            distances[i, :k] = d[order]
            lengths[i] = k
    return TripletIndex(ids.copy(), neighbors, distances, lengths, metric)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int


def sample_triplet(index, anchor, sample_range, rng):
    """Positive from ranks 1..R, negative from ranks R+1..2R, both uniform."""
    R = int(sample_range)
    if R < 1:
        raise ValueError(f"sample_range must be >= 1, got {R}")
    ranked = index.ranked(anchor)
    if len(ranked) < 2 * R:
        raise ValidationError(
            f"anchor {anchor} has {len(ranked)} ranked neighbors, fewer than 2*sample_range={2 * R}; "
            f"choose a smaller sample_range (grid: {SAMPLE_RANGE_GRID})"
        )
    p = int(rng.integers(R))
    q = R + int(rng.integers(R))
    return Triplet(int(anchor), int(ranked[p]), int(ranked[q]))
