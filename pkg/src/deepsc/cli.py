"""Command-line entry points: ``python -m deepsc <command> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import BARBARA, __version__
from .config import ExperimentConfig, derive_seed, load_config, parse_config
from .dataset import load_split
from .deep_sparse import (
    DeepModel,
    LayerConfig,
    deep_encode,
    deep_reconstruct,
    effective_dictionary,
    load_model,
    save_model,
    train_deep,
)
from .depth import (
    PatchClassifier,
    Scheme,
    baseline_predict,
    evaluate_depth,
    load_depth_model,
    predict_depth_map,
    save_depth_model,
    train_depth_model,
)
from .dict_init import InitKind, InitStrategy, initial_dictionary
from .patchlab import (
    GrayImage,
    PatchConfig,
    extract_patches,
    format_psnr,
    load_image,
    psnr,
    read_pgm,
    reassemble,
    write_pgm,
)
from .sparse_coding import encode_batch, reconstruct

log = logging.getLogger("deepsc")

BARBARA_TABLE_ORDER = ("uniform", "random", "randperm", "dct", "best")

SEEDED_KINDS = (InitKind.UNIFORM, InitKind.RANDOM, InitKind.RANDOM_PATCH_SUBSET)

DEFAULT_DEEP_CONFIG = """
[model]
patch = 4
[layer1]
atoms = 64
sparsity = 2
init = randperm
[layer2]
atoms = 96
sparsity = 3
init = uniform
[layer3]
atoms = 128
sparsity = 4
init = uniform
"""

DEFAULT_DEPTH_CONFIG = """
[model]
patch = 8
[layer1]
atoms = 256
sparsity = 4
iterations = 0
init = dct
[layer2]
atoms = 512
sparsity = 8
init = uniform
[depth]
sparsity = 4
concat_sparsity = 1
train_stride = 4
"""


@dataclass
class RunReport:
    command: str
    seed: int
    parameters: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @staticmethod
    def _fmt(value) -> str:
        if isinstance(value, float):
            return format_psnr(value) if math.isinf(value) else repr(value)
        return str(value)

    def to_kv(self, timings: bool = False) -> str:
        lines = [f"command={self.command}", f"seed={self.seed}"]
        lines += [f"param.{k}={self._fmt(v)}" for k, v in self.parameters.items()]
        lines += [f"metric.{k}={self._fmt(v)}" for k, v in self.metrics.items()]
        if timings:
            lines += [f"time.{k}={v:.3f}" for k, v in self.timings.items()]
        return "\n".join(lines) + "\n"

    def to_text(self, timings: bool = False) -> str:
        out = [f"{self.command} (seed {self.seed})"]
        width = max([len(k) for k in [*self.parameters, *self.metrics]] + [8])
        out += [f"  {k:<{width}}  {self._fmt(v)}" for k, v in self.parameters.items()]
        out += ["  metrics:"]
        for k, v in self.metrics.items():
            shown = format_psnr(v) if isinstance(v, float) else str(v)
            out.append(f"  {k:<{width}}  {shown}")
        if timings:
            out += [f"  time {k:<{width - 5}}  {v:.2f}s" for k, v in self.timings.items()]
        return "\n".join(out) + "\n"


class _Timer:
    def __init__(self, report: RunReport):
        self.report = report

    @contextmanager
    def __call__(self, phase: str):
        t0 = time.perf_counter()
        yield
        self.report.timings[phase] = self.report.timings.get(phase, 0.0) + time.perf_counter() - t0


def _emit(report: RunReport, args) -> None:
    sys.stdout.write(report.to_text(args.timings))
    if args.report:
        Path(args.report).write_text(report.to_kv(args.timings))


def _write_trace(path, traces) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer", "iteration", "residual"])
        for layer, trace in enumerate(traces, 1):
            for it, value in enumerate(trace):
                w.writerow([layer, it, repr(float(value))])


# ---------------------------------------------------------------- experiments


def approx_psnr(image: GrayImage, patch: PatchConfig, dictionary, sparsity: int) -> float:
    patches = extract_patches(image, patch)
    code = encode_batch(dictionary, patches, sparsity)
    return psnr(image, reassemble(reconstruct(dictionary, code, patches), patch, image.width, image.height))


def deep_psnr(image: GrayImage, patch: PatchConfig, model: DeepModel) -> float:
    patches = extract_patches(image, patch)
    rec = deep_reconstruct(model, deep_encode(model, patches), patches)
    return psnr(image, reassemble(rec, patch, image.width, image.height))


def constant_dictionary(image, patch: PatchConfig, kind: InitKind, atoms: int, seed: int):
    return initial_dictionary(InitStrategy(kind, seed), extract_patches(image, patch), atoms)


def train_deep_on_image(image, config: ExperimentConfig, provenance: str = "", seed: int = 0) -> DeepModel:
    patches = extract_patches(image, config.patch)
    return train_deep(patches, config.layers, patch_size=config.patch.patch_size,
                      abs_codes=config.abs_codes, provenance=provenance, seed=seed)


def deep_run_config(config: ExperimentConfig, kind: InitKind, seed: int, rep: int) -> ExperimentConfig:
    """Config of one deep-table run: layer 1 takes ``kind``, seeds derive from ``(seed, rep)``."""
    first = config.layers[0]
    cfg = config.with_seed(derive_seed(seed, 2000 + rep))
    layers = list(cfg.layers)
    layers[0] = LayerConfig(first.atoms, first.sparsity, first.iterations,
                            InitStrategy(kind, init_seed(kind, seed, rep)), first.unused_atom_policy)
    return ExperimentConfig(cfg.patch, tuple(layers), cfg.abs_codes, cfg.depth)


def init_seed(kind: InitKind, seed: int, rep: int) -> int:
    return derive_seed(seed, 1000 + rep) if kind in SEEDED_KINDS else 0


def bench_rows(image, config: ExperimentConfig, seed: int, seeds: int = 1, deep: bool = True,
               strategies=BARBARA_TABLE_ORDER, reps=None):
    """Rows ``(table, strategy, seed, psnr)`` for the constant and deep tables.

    Seeded strategies run ``seeds`` times (or once per entry of ``reps``)
    with seeds derived from ``seed``; the deterministic ones (dct, best)
    run once.
    """
    first = config.layers[0]
    rows = []
    for name in strategies:
        kind = InitKind.parse(name)
        for rep in (reps if reps is not None else range(seeds)) if kind in SEEDED_KINDS else [0]:
            run_seed = init_seed(kind, seed, rep)
            dictionary = constant_dictionary(image, config.patch, kind, first.atoms, run_seed)
            rows.append(("constant", name, run_seed,
                         approx_psnr(image, config.patch, dictionary, first.sparsity)))
            if deep:
                model = train_deep_on_image(image, deep_run_config(config, kind, seed, rep))
                rows.append(("deep", name, run_seed, deep_psnr(image, config.patch, model)))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "strategy", "seed", "psnr_db"])
    for table, name, seed, value in rows:
        w.writerow([table, name, seed, format_psnr(value)])
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def _config_from_args(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = parse_config(DEFAULT_DEEP_CONFIG)
    if getattr(args, "patch", None):
        config = ExperimentConfig(PatchConfig(args.patch, args.stride or args.patch), config.layers,
                                  config.abs_codes, config.depth)
    config = config.with_seed(args.seed)
    if getattr(args, "init", None):
        config = config.with_first_init(InitKind.parse(args.init))
    return config


def cmd_approx(args) -> int:
    report = RunReport("approx", args.seed)
    timer = _Timer(report)
    patch = PatchConfig(args.patch, args.stride or args.patch)
    kind = InitKind.parse(args.init)
    with timer("load"):
        image = load_image(args.image)
    with timer("init"):
        patches = extract_patches(image, patch)
        dictionary = initial_dictionary(InitStrategy(kind, args.seed), patches, args.atoms)
    with timer("encode"):
        code = encode_batch(dictionary, patches, args.sparsity)
        rec = reassemble(reconstruct(dictionary, code, patches), patch, image.width, image.height)
    report.parameters.update(image=args.image, width=image.width, height=image.height, init=kind.value,
                             patch=patch.patch_size, stride=patch.stride, sparsity=args.sparsity,
                             atoms=args.atoms)
    report.metrics["psnr_db"] = psnr(image, rec)
    if args.out:
        write_pgm(args.out, np.rint(rec.data).astype(np.int64))
    _emit(report, args)
    return 0


def cmd_train(args) -> int:
    """Single-layer K-SVD: a one-layer deep model."""
    patch = PatchConfig(args.patch, args.stride or args.patch)
    layer = LayerConfig(args.atoms, args.sparsity, args.iters,
                        InitStrategy(InitKind.parse(args.init), derive_seed(args.seed, 1)))
    config = ExperimentConfig(patch, (layer,))
    return _train_and_report("train", config, args)


def cmd_train_deep(args) -> int:
    return _train_and_report("train-deep", _config_from_args(args), args)


def _train_and_report(name: str, config: ExperimentConfig, args) -> int:
    report = RunReport(name, args.seed)
    timer = _Timer(report)
    image = load_image(args.image)
    with timer("train"):
        model = train_deep_on_image(image, config, provenance=f"{name} {Path(args.image).name}", seed=args.seed)
    with timer("evaluate"):
        value = deep_psnr(image, config.patch, model)
    report.parameters.update(image=args.image, width=image.width, height=image.height,
                             patch=config.patch.patch_size, stride=config.patch.stride,
                             layers="/".join(f"{l.atoms}:{l.sparsity}:{l.iterations}:{l.init.kind.value}"
                                             for l in config.layers))
    for i, trace in enumerate(model.error_traces, 1):
        if trace:
            report.metrics[f"layer{i}.residual_first"] = float(trace[0])
            report.metrics[f"layer{i}.residual_last"] = float(trace[-1])
    report.metrics["psnr_db"] = value
    if args.out:
        save_model(model, args.out)
    if args.trace:
        _write_trace(args.trace, model.error_traces)
    _emit(report, args)
    return 0


def render_dictionary(matrix: np.ndarray, separator: int = 255) -> np.ndarray:
    """Tile each column as a square patch, per-atom min-max scaled to 0..255."""
    dim, atoms = matrix.shape
    p = math.isqrt(dim)
    if p * p != dim:
        raise ValueError(f"atom dimension {dim} is not a square patch")
    cols = math.ceil(math.sqrt(atoms))
    rows = math.ceil(atoms / cols)
    out = np.full((rows * p + rows - 1, cols * p + cols - 1), separator, dtype=np.int64)
    for k in range(atoms):
        tile = matrix[:, k].reshape(p, p).T  # column-major patch layout
        lo, hi = tile.min(), tile.max()
        scaled = np.full((p, p), 128.0) if hi == lo else 255.0 * (tile - lo) / (hi - lo)
        r, c = divmod(k, cols)
        out[r * (p + 1) : r * (p + 1) + p, c * (p + 1) : c * (p + 1) + p] = np.rint(scaled)
    return out


def cmd_dict_render(args) -> int:
    report = RunReport("dict-render", args.seed)
    model = load_model(args.model)
    eff = effective_dictionary(model)
    grid = render_dictionary(eff.matrix)
    write_pgm(args.out, grid)
    report.parameters.update(model=args.model, atoms=eff.matrix.shape[1], dim=eff.matrix.shape[0])
    report.metrics.update(width=grid.shape[1], height=grid.shape[0])
    _emit(report, args)
    return 0


def _depth_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = _config_from_args(args)
    else:
        config = parse_config(DEFAULT_DEPTH_CONFIG).with_seed(args.seed)
    if getattr(args, "scheme", None):
        config = replace(config, depth=replace(config.depth, scheme=Scheme(args.scheme)))
    return config


def cmd_depth_train(args) -> int:
    report = RunReport("depth-train", args.seed)
    timer = _Timer(report)
    config = _depth_config(args)
    ds = config.depth
    with timer("load"):
        samples = load_split(args.dataset, args.split)
    train_patch = PatchConfig(config.patch.patch_size, ds.train_stride, config.patch.remove_mean)
    with timer("train"):
        model = train_depth_model(samples, config.layers, train_patch, ds.mode, ds.quantizer)
    save_depth_model(model, args.out)
    report.parameters.update(dataset=args.dataset, split=args.split, samples=len(samples),
                             levels=ds.quantizer.levels, mode=ds.mode.value,
                             patch=config.patch.patch_size, train_stride=ds.train_stride)
    report.metrics["models"] = len(model.per_level)
    _emit(report, args)
    return 0


def _level_pgm(levels: np.ndarray) -> np.ndarray:
    return levels.astype(np.int64)


def cmd_depth_predict(args) -> int:
    report = RunReport("depth-predict", args.seed)
    config = _depth_config(args)
    ds = config.depth
    model = load_depth_model(args.model)
    samples = load_split(args.dataset, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    classifier = PatchClassifier(model)
    for sample in samples:
        pred = predict_depth_map(model, sample.intensity, ds.scheme, ds.sparsity_for(ds.scheme), ds.sigma,
                                 ds.l1_guard, classifier)
        write_pgm(out / f"{sample.id}.levels.pgm", _level_pgm(pred.levels))
        write_pgm(out / f"{sample.id}.vis.pgm", model.quantizer.to_visual(pred.smoothed).astype(np.int64))
    report.parameters.update(dataset=args.dataset, split=args.split, scheme=ds.scheme.value,
                             sparsity=ds.sparsity_for(ds.scheme), sigma=ds.sigma)
    report.metrics["images"] = len(samples)
    _emit(report, args)
    return 0


def cmd_depth_eval(args) -> int:
    from .depth import DepthMap

    report = RunReport("depth-eval", args.seed)
    config = _depth_config(args)
    ds = config.depth
    model = load_depth_model(args.model)
    quantizer = model.quantizer
    p = model.patch_config.patch_size
    samples = load_split(args.dataset, args.split)
    classifier = PatchClassifier(model)
    scores = {"model": [], "uniform": [], "random": []}
    for i, sample in enumerate(samples):
        if args.pred:
            levels, _ = read_pgm(Path(args.pred) / f"{sample.id}.levels.pgm")
            pred = DepthMap(levels, quantizer.levels)
        else:
            pred = predict_depth_map(model, sample.intensity, ds.scheme, ds.sparsity_for(ds.scheme), ds.sigma,
                                     ds.l1_guard, classifier)
        scores["model"].append(evaluate_depth(pred, sample, quantizer))
        uni = baseline_predict(sample.intensity, "uniform", quantizer.levels, p)
        rnd = baseline_predict(sample.intensity, "random", quantizer.levels, p, derive_seed(args.seed, 3000 + i))
        scores["uniform"].append(evaluate_depth(uni, sample, quantizer))
        scores["random"].append(evaluate_depth(rnd, sample, quantizer))
        for name in scores:
            report.metrics[f"{sample.id}.{name}_psnr_db"] = scores[name][-1]
    for name, values in scores.items():
        report.metrics[f"average.{name}_psnr_db"] = float(np.mean(values)) if values else math.nan
    report.parameters.update(dataset=args.dataset, split=args.split, scheme=ds.scheme.value,
                             sparsity=ds.sparsity_for(ds.scheme), images=len(samples))
    _emit(report, args)
    return 0


def cmd_bench_init(args) -> int:
    config = _config_from_args(args)
    if args.iters is not None:
        config = ExperimentConfig(
            config.patch,
            tuple(LayerConfig(l.atoms, l.sparsity, args.iters, l.init, l.unused_atom_policy) for l in config.layers),
            config.abs_codes, config.depth)
    image = load_image(args.image)
    rows = bench_rows(image, config, args.seed, args.seeds, deep=not args.constant_only)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_make_synth(args) -> int:
    from .dataset import write_dataset
    from .synth import graded_corpus, two_class_corpus

    make = two_class_corpus if args.kind == "two-class" else graded_corpus
    samples, quantizer = make(count=args.count, seed=args.seed)
    n_train = max(1, int(round(len(samples) * 0.7)))
    write_dataset(args.out, {"train": samples[:n_train], "test": samples[n_train:]})
    sys.stdout.write(
        f"wrote {len(samples)} samples to {args.out} "
        f"(quantizer levels={quantizer.levels} min_mm={quantizer.min_mm} max_mm={quantizer.max_mm})\n"
    )
    return 0


# ---------------------------------------------------------------- parser


def _origin(exc: BaseException) -> str:
    """Deepest deepsc module on the traceback, for error messages."""
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("deepsc."):
            name = mod.split(".")[-1]
        tb = tb.tb_next
    return name


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsc", description="Deep sparse coding experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    common.add_argument("--report", help="also write the report as key=value lines")
    common.add_argument("--timings", action="store_true", help="include wall-clock timings in reports")
    common.add_argument("-v", "--verbose", action="store_true")

    def patch_flags(p, sparsity=2, atoms=64):
        p.add_argument("--patch", type=int, default=4)
        p.add_argument("--stride", type=int, default=None)
        p.add_argument("--sparsity", type=int, default=sparsity)
        p.add_argument("--atoms", type=int, default=atoms)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approx", parents=[common], help="constant-dictionary approximation PSNR")
    p.add_argument("image")
    p.add_argument("--init", default="dct")
    p.add_argument("--out", help="write the reconstruction as PGM")
    patch_flags(p)
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("train", parents=[common], help="single-layer K-SVD training")
    p.add_argument("image")
    p.add_argument("--init", default="randperm")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--out", help="model file (.dspm)")
    p.add_argument("--trace", help="per-iteration residual CSV")
    patch_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-deep", parents=[common], help="layered dictionary training")
    p.add_argument("image")
    p.add_argument("--config")
    p.add_argument("--init", help="override the first layer's init strategy")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", help="model file (.dspm)")
    p.add_argument("--trace", help="per-iteration residual CSV")
    p.set_defaults(func=cmd_train_deep)

    p = sub.add_parser("dict-render", parents=[common], help="render effective dictionary atoms")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dict_render)

    for name, func, help_ in [
        ("depth-train", cmd_depth_train, "train one deep model per depth level"),
        ("depth-predict", cmd_depth_predict, "predict depth level maps"),
        ("depth-eval", cmd_depth_eval, "score predictions and baselines"),
    ]:
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("dataset")
        p.add_argument("--config")
        p.add_argument("--patch", type=int, default=None)
        p.add_argument("--stride", type=int, default=None)
        p.add_argument("--split", default="train" if name == "depth-train" else "test")
        if name == "depth-train":
            p.add_argument("--out", required=True, help="depth model file (.dsdm)")
        else:
            p.add_argument("--model", required=True)
        if name == "depth-predict":
            p.add_argument("--out", required=True, help="output directory")
        if name != "depth-train":
            p.add_argument("--scheme", choices=[sc.value for sc in Scheme], help="override the config's scheme")
        if name == "depth-eval":
            p.add_argument("--pred", help="directory of <id>.levels.pgm predictions")
        p.set_defaults(func=func)

    p = sub.add_parser("bench-init", parents=[common], help="both initialization tables as CSV")
    p.add_argument("image", nargs="?", default=str(BARBARA), help="default: bundled 512x512 Barbara")
    p.add_argument("--config")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--iters", type=int, default=None, help="override iterations of every layer")
    p.add_argument("--seeds", type=int, default=1, help="repetitions of the seeded strategies")
    p.add_argument("--constant-only", action="store_true", help="skip the deep-training table")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench_init)

    p = sub.add_parser("make-synth", parents=[common], help="write a synthetic RGB-D dataset")
    p.add_argument("out")
    p.add_argument("--kind", choices=["two-class", "graded"], default="two-class")
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(func=cmd_make_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (ValueError, OSError) as exc:
        module = _origin(exc)
        print(f"deepsc {args.command}: error ({module}): {exc}", file=sys.stderr)
        return 1
