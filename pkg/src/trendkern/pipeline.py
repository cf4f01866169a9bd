"""Training loop, evaluation metrics, ablation specs and the reproduction sweep."""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import knowledge
from . import numcore as nc
from .dataio import make_samples
from .errors import ConfigError, NonFiniteError, ValidationError
from .model import (
    Batch, Features, KernConfig, TripletBatch, init_params, load_checkpoint,
    predict, save_checkpoint, total_loss,
)

log = logging.getLogger(__name__)

MAPE_EPSILON = 1e-6

# Seed-stream tags for np.random.default_rng([seed, tag, ...]).
_SHUFFLE, _TRIPLET = 1, 2


# ------------------------------------------------------------------ metrics


def mae(predictions, targets):
    p, t = np.asarray(predictions, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"mae: predictions {p.shape} vs targets {t.shape}")
    if p.size == 0:
        raise ValidationError("mae: empty input")
    return float(np.abs(p - t).mean())


def mape(predictions, targets, epsilon=MAPE_EPSILON, return_excluded=False):
    """Percent error over points whose |target| exceeds ``epsilon``."""
    p, t = np.asarray(predictions, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"mape: predictions {p.shape} vs targets {t.shape}")
    keep = np.abs(t) > epsilon
    if not keep.any():
        raise ValidationError("mape: every target is within epsilon of zero")
    value = float(100.0 * (np.abs(p[keep] - t[keep]) / np.abs(t[keep])).mean())
    excluded = int(keep.size - keep.sum())
    return (value, excluded) if return_excluded else value


@dataclass
class MetricsReport:
    mae: float
    mape: float
    per_step_mae: list
    sample_count: int
    mape_excluded: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def metrics_report(predictions, targets, config=None):
    p, t = np.asarray(predictions), np.asarray(targets)
    value, excluded = mape(p, t, return_excluded=True)
    return MetricsReport(
        mae=mae(p, t), mape=value,
        per_step_mae=np.abs(p - t).mean(axis=0).tolist(),
        sample_count=int(p.shape[0]), mape_excluded=excluded,
        config=asdict(config) if config is not None else {},
    )


def last_value_forecast(sample_set, output_len):
    """Naive baseline: repeat the final input value over the horizon."""
    inputs = sample_set.arrays()["inputs"]
    return np.repeat(inputs[:, -1:], output_len, axis=1)


# ----------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    batch_size: int = 400
    lr: float = 0.001
    lr_decay: bool = True
    lr_decay_interval: int = 15
    lr_decay_gamma: float = 0.1
    max_grad_norm: Optional[float] = None
    eval_chunk: int = 1024

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epoch must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def schedule(self):
        return nc.LrSchedule(self.lr, self.lr_decay_interval, self.lr_decay_gamma, self.lr_decay)


@dataclass
class PreparedData:
    """Windowed train/test sets with model-ready features."""

    train: object
    test: object
    train_feats: Features
    test_feats: Features
    category_vocab: Optional[int]
    counters: dict


def feature_matrix(sample_set, taxonomy, ext_kg, counters=None):
    """Vectorized feature ids for every sample in ``sample_set``."""
    arr = sample_set.arrays()
    parents = None
    if ext_kg:
        if taxonomy is None:
            raise ConfigError("ext_kg is true but no taxonomy was provided")
        parents = taxonomy.parents(arr["element_ids"])
        if counters is not None:
            counters["taxonomy_lookups"] += len(parents)
    return Features(arr["element_ids"], arr["group_ids"], parents)


def prepare(dataset, config, taxonomy=None):
    counters = {"taxonomy_lookups": 0, "rank_neighbors": 0, "triplets_sampled": 0}
    train, test = make_samples(dataset, config.input_len, config.output_len)
    return PreparedData(
        train, test,
        feature_matrix(train, taxonomy, config.ext_kg, counters),
        feature_matrix(test, taxonomy, config.ext_kg, counters),
        taxonomy.category_vocab_size if (config.ext_kg and taxonomy is not None) else None,
        counters,
    )


@dataclass
class TrainResult:
    params: object
    best_params: object
    best_mae: float
    best_epoch: int
    log: list
    counters: dict
    config: KernConfig
    settings: TrainSettings
    data: PreparedData
    checkpoint_path: Optional[Path] = None


def _sample_epoch_triplets(index, anchors, sample_range, rng, counters):
    pos = np.empty(len(anchors), dtype=np.int64)
    neg = np.empty(len(anchors), dtype=np.int64)
    for i, a in enumerate(anchors):
        t = knowledge.sample_triplet(index, a, sample_range, rng)
        pos[i], neg[i] = t.positive, t.negative
    counters["triplets_sampled"] += len(anchors)
    return pos, neg


def train(config, settings, dataset, taxonomy=None, out_dir=None, data=None, progress=None):
    """Train KERN and keep the parameters with the best test MAE.

    When ``out_dir`` is given, ``train_log.jsonl`` is written there and
    ``best.ckpt`` is rewritten whenever the test MAE improves.
    """
    data = data or prepare(dataset, config, taxonomy)
    counters = data.counters
    train_arr, test_arr = data.train.arrays(), data.test.arrays()
    n_train = len(data.train)
    if n_train == 0:
        raise ValidationError("no training windows")

    index = None
    row_of_id = None
    if config.int_kg:
        index = knowledge.rank_neighbors(data.train, depth=2 * config.sample_range)
        counters["rank_neighbors"] += 1
        short = index.lengths < 2 * config.sample_range
        if short.any():
            raise ValidationError(
                f"sample_range={config.sample_range} needs {2 * config.sample_range} neighbors per anchor; "
                f"{int(short.sum())} anchors have fewer"
            )
        row_of_id = {int(s): i for i, s in enumerate(train_arr["sample_ids"])}

    params = init_params(config, dataset.element_vocab_size, dataset.group_vocab_size,
                         data.category_vocab, seed=config.seed)
    plist = params.values()
    adam = nc.AdamState.for_params(plist, settings.lr)
    schedule = settings.schedule

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = ckpt_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"
        ckpt_path = out_dir / "best.ckpt"
        log_path.write_text("")

    records = []
    best_mae, best_epoch, best_params = np.inf, 0, None
    for epoch in range(1, settings.epochs + 1):
        adam.lr = nc.lr_at_epoch(schedule, epoch)
        order = np.random.default_rng([config.seed, _SHUFFLE, epoch]).permutation(n_train)
        if config.int_kg:
            rng = np.random.default_rng([config.seed, _TRIPLET, epoch])
            pos_ids, neg_ids = _sample_epoch_triplets(
                index, train_arr["sample_ids"], config.sample_range, rng, counters)
            pos_rows = np.array([row_of_id[i] for i in pos_ids])
            neg_rows = np.array([row_of_id[i] for i in neg_ids])

        loss_sum = 0.0
        for b, lo in enumerate(range(0, n_train, settings.batch_size)):
            idx = order[lo:lo + settings.batch_size]
            batch = Batch(train_arr["inputs"][idx], train_arr["targets"][idx], data.train_feats.take(idx))
            triplets = None
            if config.int_kg:
                p, q = pos_rows[idx], neg_rows[idx]
                triplets = TripletBatch(train_arr["inputs"][p], data.train_feats.take(p),
                                        train_arr["inputs"][q], data.train_feats.take(q))
            try:
                with nc.Tape() as tape:
                    loss = total_loss(batch, params, config, triplets)
                grads = nc.backward(tape, loss, wrt=plist)
                nc.adam_step(adam, plist, grads, settings.max_grad_norm)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from None
            loss_sum += loss.item() * len(idx)

        preds = predict(params, test_arr["inputs"], data.test_feats, config.output_len, settings.eval_chunk)
        test_mae = mae(preds, test_arr["targets"])
        test_mape = mape(preds, test_arr["targets"])
        saved = test_mae < best_mae
        if saved:
            best_mae, best_epoch = test_mae, epoch
            best_params = params.copy()
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, best_params, config,
                                {"epoch": epoch, "test_mae": test_mae, "settings": asdict(settings)})
        record = {"epoch": epoch, "lr": adam.lr, "train_loss": loss_sum / n_train,
                  "test_mae": test_mae, "test_mape": test_mape, "saved": saved}
        records.append(record)
        if log_path is not None:
            with log_path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        log.info("epoch %d lr=%g train_loss=%.6f test_mae=%.6f test_mape=%.3f%s",
                 epoch, adam.lr, record["train_loss"], test_mae, test_mape, " *" if saved else "")
        if progress is not None:
            progress(record)

    return TrainResult(params, best_params, best_mae, best_epoch, records, counters,
                       config, settings, data, ckpt_path)


def evaluate(checkpoint, dataset, taxonomy=None, chunk=1024):
    """Forecast every test window with a checkpoint (path or ``(params, config)``)."""
    if isinstance(checkpoint, (str, Path)):
        params, config, _ = load_checkpoint(checkpoint)
    else:
        params, config = checkpoint
    mismatch = []
    if params.element_vocab != dataset.element_vocab_size:
        mismatch.append(f"element vocab {params.element_vocab} != {dataset.element_vocab_size}")
    if params.group_vocab != dataset.group_vocab_size:
        mismatch.append(f"group vocab {params.group_vocab} != {dataset.group_vocab_size}")
    if config.ext_kg:
        if taxonomy is None:
            mismatch.append("checkpoint uses external knowledge but no taxonomy given")
        elif params.category_vocab != taxonomy.category_vocab_size:
            mismatch.append(f"category vocab {params.category_vocab} != {taxonomy.category_vocab_size}")
    if mismatch:
        raise ConfigError("checkpoint/dataset mismatch: " + "; ".join(mismatch))
    _, test = make_samples(dataset, config.input_len, config.output_len)
    feats = feature_matrix(test, taxonomy, config.ext_kg)
    arr = test.arrays()
    preds = predict(params, arr["inputs"], feats, config.output_len, chunk)
    return metrics_report(preds, arr["targets"], config)


# ------------------------------------------------------------- experiments

ABLATIONS = {
    "KERN": (True, True),
    "KERN-I": (True, False),
    "KERN-E": (False, True),
    "KERN-IE": (False, False),
}

# Published MAE/MAPE: (original, replication). MAPE only exists for full KERN.
ORIGINAL_RESULTS = {
    ("geostyle", "KERN-IE"): {"mae": (0.0137, 0.0130)},
    ("geostyle", "KERN-I"): {"mae": (0.0137, 0.0130)},
    ("geostyle", "KERN"): {"mae": (0.0134, 0.0129), "mape": (14.24, 14.77)},
    ("fit-half", "KERN-IE"): {"mae": (0.0840, 0.0824)},
    ("fit-half", "KERN-E"): {"mae": (0.0835, 0.0827)},
    ("fit-half", "KERN-I"): {"mae": (0.0831, 0.0824)},
    ("fit-half", "KERN"): {"mae": (0.0836, 0.0823), "mape": (30.02, 29.40)},
    ("fit-one", "KERN-IE"): {"mae": (0.0966, 0.0940)},
    ("fit-one", "KERN-E"): {"mae": (0.0953, 0.0941)},
    ("fit-one", "KERN-I"): {"mae": (0.0942, 0.0940)},
    ("fit-one", "KERN"): {"mae": (0.0939, 0.0931), "mape": (33.45, 32.56)},
}

# (triplet_lambda, sample_range) tuned per (dataset, label); None = profile default.
REPRODUCE_SETTINGS = {
    ("geostyle", "KERN"): (0.002, 50),
    ("geostyle", "KERN-I"): (0.002, 50),
    ("fit-half", "KERN-I"): (0.0001, 500),
    ("fit-half", "KERN"): (0.001, 500),
    ("fit-one", "KERN-I"): (0.01, 1000),
    ("fit-one", "KERN"): (0.0002, 100),
}

REPRODUCE_ROWS = {
    "geostyle": ("KERN-IE", "KERN-I", "KERN"),
    "fit-half": ("KERN-IE", "KERN-E", "KERN-I", "KERN"),
    "fit-one": ("KERN-IE", "KERN-E", "KERN-I", "KERN"),
}


@dataclass(frozen=True)
class ExperimentSpec:
    label: str
    dataset: str
    output_len: int
    triplet_lambda: float
    sample_range: int

    def __post_init__(self):
        if self.label not in ABLATIONS:
            raise ConfigError(f"unknown ablation label {self.label!r}; expected one of {list(ABLATIONS)}")

    @property
    def ext_kg(self):
        return ABLATIONS[self.label][0]

    @property
    def int_kg(self):
        return ABLATIONS[self.label][1]


def reproduce_specs(base_configs):
    """Experiment rows for each dataset id present in ``base_configs``.

    ``base_configs`` maps dataset id to its ``KernConfig``; tuned
    (triplet_lambda, sample_range) pairs override the defaults where published.
    """
    specs = []
    for ds, labels in REPRODUCE_ROWS.items():
        if ds not in base_configs:
            continue
        base = base_configs[ds]
        for label in labels:
            lam, rng_ = REPRODUCE_SETTINGS.get((ds, label), (base.triplet_lambda, base.sample_range))
            specs.append(ExperimentSpec(label, ds, base.output_len, lam, rng_))
    return specs


@dataclass
class ExperimentInputs:
    dataset: object
    taxonomy: object
    config: KernConfig
    settings: TrainSettings


def run_experiment(spec, inputs, out_dir=None):
    config = replace(inputs.config, ext_kg=spec.ext_kg, int_kg=spec.int_kg,
                     triplet_lambda=spec.triplet_lambda, sample_range=spec.sample_range,
                     output_len=spec.output_len)
    result = train(config, inputs.settings, inputs.dataset, inputs.taxonomy if spec.ext_kg else None, out_dir)
    report = evaluate((result.best_params, config), inputs.dataset, inputs.taxonomy if spec.ext_kg else None)
    return report, result


def reproduce(specs, available, out_dir=None, workers=1):
    """Run every spec; rows whose dataset is missing from ``available`` are marked skipped.

    ``available`` maps dataset id to :class:`ExperimentInputs` (or None).
    Rows come back in spec order regardless of ``workers``.
    """

    def one(i_spec):
        i, spec = i_spec
        row = {"label": spec.label, "dataset": spec.dataset, "output_len": spec.output_len,
               "triplet_lambda": spec.triplet_lambda, "sample_range": spec.sample_range}
        published = ORIGINAL_RESULTS.get((spec.dataset, spec.label), {})
        row["original_mae"], row["replication_mae"] = published.get("mae", (None, None))
        row["original_mape"], row["replication_mape"] = published.get("mape", (None, None))
        inputs = available.get(spec.dataset)
        if inputs is None:
            return {**row, "status": "skipped", "mae": None, "mape": None}
        run_dir = None if out_dir is None else Path(out_dir) / f"{i:02d}_{spec.dataset}_{spec.label}"
        report, _ = run_experiment(spec, inputs, run_dir)
        return {**row, "status": "ok", "mae": report.mae, "mape": report.mape}

    items = list(enumerate(specs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, items))
    else:
        rows = [one(it) for it in items]
    return rows


TABLE_COLUMNS = ("dataset", "label", "output_len", "triplet_lambda", "sample_range", "status",
                 "mae", "mape", "original_mae", "replication_mae", "original_mape", "replication_mape")


def render_table(rows):
    """Aligned plain-text rendering of reproduce rows."""
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}" if abs(v) < 1 else f"{v:.2f}"
        return str(v)

    grid = [list(TABLE_COLUMNS)] + [[cell(r.get(c)) for c in TABLE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in grid) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in grid]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_table(rows, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.json").write_text(json.dumps(rows, indent=2) + "\n")
    (out_dir / "comparison.txt").write_text(render_table(rows))
    return out_dir / "comparison.json"
