"""``trendkern`` command line: train, test, reproduce, gen-synthetic, grad-check."""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import gradcheck, pipeline
from .config import PROFILES, parse_config, serialize_config
from .dataio import generate_synthetic, load_dataset, save_dataset
from .errors import TrendKernError
from .knowledge import load_taxonomy, modulo_taxonomy, save_taxonomy

log = logging.getLogger("trendkern")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2


def _load_inputs(cfg):
    path = cfg.resolve(cfg.dataset_path)
    if path is None:
        raise TrendKernError("config has no dataset_path")
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    dataset = load_dataset(path, cfg.dataset_format)
    taxonomy = None
    if cfg.taxonomy_path is not None:
        taxonomy = load_taxonomy(cfg.resolve(cfg.taxonomy_path))
    elif cfg.ext_kg:
        raise TrendKernError("ext_kg is true but taxonomy_path is not set")
    return dataset, taxonomy


def _apply_globals(cfg, args):
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out_dir is not None:
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    return out if out.is_absolute() else Path.cwd() / out


def cmd_train(args):
    cfg = _apply_globals(parse_config(args.config), args)
    dataset, taxonomy = _load_inputs(cfg)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(serialize_config(cfg))
    result = pipeline.train(cfg.kern_config(), cfg.train_settings(), dataset, taxonomy, out)
    report = pipeline.evaluate((result.best_params, result.config), dataset, taxonomy)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"best epoch {result.best_epoch}: test MAE {report.mae:.6f}, MAPE {report.mape:.3f}  ({out})")
    return EXIT_OK


def cmd_test(args):
    cfg = _apply_globals(parse_config(args.config), args)
    dataset, taxonomy = _load_inputs(cfg)
    report = pipeline.evaluate(args.checkpoint, dataset, taxonomy)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"test MAE {report.mae:.6f}, MAPE {report.mape:.3f} over {report.sample_count} samples")
    return EXIT_OK


def cmd_reproduce(args):
    config_dir = Path(args.config_dir)
    if not config_dir.is_dir():
        raise FileNotFoundError(f"config directory not found: {config_dir}")
    base, available = {}, {}
    for path in sorted(config_dir.glob("*.yaml")):
        cfg = _apply_globals(parse_config(path), args)
        if cfg.dataset_profile not in pipeline.REPRODUCE_ROWS:
            log.warning("%s: profile %s has no reproduction rows; ignored", path, cfg.dataset_profile)
            continue
        base[cfg.dataset_profile] = cfg.kern_config()
        try:
            dataset, taxonomy = _load_inputs(cfg)
        except (FileNotFoundError, TrendKernError) as exc:
            log.warning("%s: %s; rows will be skipped", path, exc)
            available[cfg.dataset_profile] = None
            continue
        available[cfg.dataset_profile] = pipeline.ExperimentInputs(
            dataset, taxonomy, cfg.kern_config(), cfg.train_settings())
    specs = pipeline.reproduce_specs(base)
    out = Path(args.out_dir or "runs/reproduce")
    rows = pipeline.reproduce(specs, available, out, workers=args.workers)
    pipeline.write_table(rows, out)
    sys.stdout.write(pipeline.render_table(rows))
    return EXIT_OK


def cmd_gen_synthetic(args):
    seed = args.seed if args.seed is not None else 0
    dataset = generate_synthetic(args.groups, args.elements, args.length, seed, args.categories)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    taxonomy_path = Path(args.taxonomy) if args.taxonomy else out.with_suffix(".taxonomy.tsv")
    categories = args.categories or min(4, args.elements)
    save_taxonomy(modulo_taxonomy(args.elements, categories), taxonomy_path)
    print(f"wrote {len(dataset.series)} series of length {args.length} to {out} (taxonomy {taxonomy_path})")
    return EXIT_OK


def cmd_grad_check(args):
    results = gradcheck.check_primitives(trials=args.trials) + gradcheck.check_model()
    for r in results:
        if not args.quiet or not r.passed:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} max rel err {r.max_rel_error:.2e}")
    ok = all(r.passed for r in results)
    print(f"grad-check {'passed' if ok else 'FAILED'} ({len(results)} checks, tolerance {gradcheck.REL_TOL:g})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default=None, help="override the output directory")
    common.add_argument("--quiet", action="store_true", help="only warnings and results")

    parser = argparse.ArgumentParser(prog="trendkern", parents=[common],
                                     description="Knowledge-enhanced trend forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train and keep the best checkpoint")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", parents=[common], help="evaluate a checkpoint on the test windows")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("reproduce", parents=[common], help="run the ablation table for every config in a directory")
    p.add_argument("config_dir")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a seasonal synthetic dataset")
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--elements", type=int, default=8)
    p.add_argument("--length", type=int, default=104)
    p.add_argument("--categories", type=int, default=None)
    p.add_argument("--taxonomy", default=None, help="taxonomy output path")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TrendKernError, FileNotFoundError, ValueError) as exc:
        print(f"trendkern {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
