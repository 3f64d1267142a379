"""Command-line pipeline: synth, search, train, eval, attention-dump.

Configuration precedence is flags > JSON config file > built-in defaults.
Exit codes: 0 success, 2 configuration or validation problem, 3 I/O or
decode failure, 4 runtime numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import report
from .attention import attention_forward
from .data import (
    DatasetManifest,
    FmapError,
    ManifestSample,
    SyntheticSpec,
    fmap_read,
    load_labeled,
    load_manifest,
    save_manifest,
    split_dataset,
    synthesize,
)
from .errors import (
    ConfigError,
    FitnessError,
    NumericError,
    ParameterError,
    ShapeError,
    ValidationError,
)
from .ga import GaConfig, ga_history_to_csv, run_ga
from .metrics import accumulate, metrics_report_json
from .network import (
    Architecture,
    CheckpointError,
    TrainConfig,
    accuracy_on,
    build_composite,
    history_to_csv,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)


@dataclass
class RunConfig:
    """Flat run configuration shared by the search and train commands."""

    population_size: int = 8
    generations: int = 10
    l_max: int = 5
    n_min: int = 16
    n_max: int = 1024
    p_add: float = 0.2
    p_remove: float = 0.2
    p_neuron: float = 0.3
    elitism: int = 1
    learning_rate: float = 0.05
    epochs: int = 10
    batch_size: int = 16
    kernel_size: int = 7
    seed: int = 0
    threshold: float = 0.5
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    manifest: str | None = None

    def ga_config(self) -> GaConfig:
        return GaConfig(
            population_size=self.population_size,
            generations=self.generations,
            l_max=self.l_max,
            n_min=self.n_min,
            n_max=self.n_max,
            p_add=self.p_add,
            p_remove=self.p_remove,
            p_neuron=self.p_neuron,
            elitism=self.elitism,
            seed=self.seed,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
        )


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


def _parse_fractions(value) -> tuple[float, float, float]:
    if isinstance(value, str):
        parts = value.split(",")
    else:
        parts = list(value)
    try:
        fractions = tuple(float(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse split fractions from {value!r}") from exc
    if len(fractions) != 3:
        raise ConfigError(f"need exactly three split fractions, got {fractions}")
    return fractions


def _parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"shape must be HxWxC, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"shape must be HxWxC integers, got {text!r}") from exc


def _build_run_config(args) -> RunConfig:
    values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: not valid JSON") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        unknown = set(doc) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"{config_path}: unknown config keys {sorted(unknown)}")
        values.update(doc)
    for name in _CONFIG_FIELDS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    if "split_fractions" in values:
        values["split_fractions"] = _parse_fractions(values["split_fractions"])
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _ensure_splits(manifest: DatasetManifest, cfg: RunConfig) -> DatasetManifest:
    if manifest.has_splits():
        return manifest
    return split_dataset(manifest, cfg.split_fractions, cfg.seed)


def _rebase_manifest(manifest: DatasetManifest, new_root: Path) -> DatasetManifest:
    samples = [
        ManifestSample(os.path.relpath(manifest.resolve(s), new_root), s.label, s.split)
        for s in manifest.samples
    ]
    return DatasetManifest(manifest.feature_shape, samples, root=new_root)


def _load_split_samples(manifest: DatasetManifest, cfg: RunConfig):
    manifest = _ensure_splits(manifest, cfg)
    train_samples = load_labeled(manifest, "train")
    val_samples = load_labeled(manifest, "val")
    if not train_samples or not val_samples:
        raise ConfigError("manifest must provide non-empty train and val splits")
    return manifest, train_samples, val_samples


def _require_manifest(cfg: RunConfig) -> DatasetManifest:
    if cfg.manifest is None:
        raise ConfigError("a dataset manifest is required (--manifest or config file)")
    return load_manifest(cfg.manifest)


def _write_pgm(values: np.ndarray, path: Path) -> None:
    h, w = values.shape
    pixels = np.floor(values.astype(np.float64) * 255.0 + 0.5)
    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def _write_map_csv(values: np.ndarray, path: Path) -> None:
    lines = [",".join(f"{v:.9g}" for v in row) for row in values.tolist()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        count_per_class=args.count,
        feature_shape=_parse_shape(args.shape),
        line_intensity=args.line_intensity,
        noise_sigma=args.noise_sigma,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest = synthesize(spec, args.out)
    print(f"wrote {len(manifest.samples)} samples and manifest.json to {args.out}")
    return 0


def cmd_search(args) -> int:
    cfg = _build_run_config(args)
    manifest, train_samples, val_samples = _load_split_samples(_require_manifest(cfg), cfg)
    input_dim = manifest.feature_shape[2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def fitness(arch: Architecture, seed: int) -> float:
        model = build_composite(arch, input_dim, cfg.kernel_size, seed)
        trained, _ = train(model, train_samples, val_samples, cfg.train_config(seed))
        return accuracy_on(trained, val_samples)

    best, history = run_ga(cfg.ga_config(), fitness, parallel=args.parallel)

    # Re-train the winner with its original evaluation seed for the checkpoint.
    model = build_composite(best.chromosome, input_dim, cfg.kernel_size, best.eval_seed)
    trained, _ = train(model, train_samples, val_samples, cfg.train_config(best.eval_seed))

    save_manifest(_rebase_manifest(manifest, out), out / "manifest_split.json")
    (out / "ga_history.csv").write_text(ga_history_to_csv(history), encoding="utf-8")
    report.save_ga_curves(history, out / "ga_history.png")
    (out / "best_arch.txt").write_text(f"{best.chromosome}\n", encoding="utf-8")
    save_checkpoint(trained, out / "checkpoint.bin")
    print(f"best architecture: {best.chromosome}")
    print(f"best fitness: {best.fitness!r}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_run_config(args)
    arch = Architecture.parse(args.arch)
    manifest, train_samples, val_samples = _load_split_samples(_require_manifest(cfg), cfg)
    input_dim = manifest.feature_shape[2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model = build_composite(arch, input_dim, cfg.kernel_size, cfg.seed)
    trained, history = train(model, train_samples, val_samples, cfg.train_config())

    save_manifest(_rebase_manifest(manifest, out), out / "manifest_split.json")
    (out / "train_history.csv").write_text(history_to_csv(history), encoding="utf-8")
    report.save_train_curves(history, out / "train_history.png")
    save_checkpoint(trained, out / "checkpoint.bin")
    if history:
        print(f"final val accuracy: {history[-1].val_acc!r}")
    else:
        print("no epochs trained; checkpoint holds the initialization")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    if manifest.feature_shape[2] != model.input_dim:
        raise ShapeError(
            f"manifest channels {manifest.feature_shape[2]} != model input_dim {model.input_dim}"
        )
    if not manifest.has_splits():
        raise ConfigError("manifest has no split tags; evaluate a split manifest")
    samples = load_labeled(manifest, args.split)
    if not samples:
        raise ConfigError(f"split {args.split!r} is empty")
    threshold = args.threshold if args.threshold is not None else 0.5
    predictions = [predict(model, x, threshold) for x, _ in samples]
    labels = [label for _, label in samples]
    print(metrics_report_json(accumulate(predictions, labels), f1_digits=4))
    return 0


def cmd_attention_dump(args) -> int:
    model = load_checkpoint(args.checkpoint)
    t = fmap_read(args.fmap)
    _, amap, _ = attention_forward(model.attention, t)
    values = amap.array[:, :, 0]
    prefix = Path(args.out)
    if prefix.parent != Path(""):
        prefix.parent.mkdir(parents=True, exist_ok=True)
    _write_pgm(values, Path(f"{prefix}.pgm"))
    _write_map_csv(values, Path(f"{prefix}.csv"))
    print(f"wrote {prefix}.pgm and {prefix}.csv")
    return 0


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file with RunConfig keys")
    sub.add_argument("--seed", type=int, help="master random seed (unsigned 64-bit)")
    sub.add_argument("--manifest", help="dataset manifest path")
    sub.add_argument("--split", dest="split_fractions", metavar="TRAIN,VAL,TEST",
                     help="split fractions applied when the manifest has no tags")
    sub.add_argument("--kernel-size", dest="kernel_size", type=int)
    sub.add_argument("--lr", dest="learning_rate", type=float)
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--threshold", type=float)


def _add_ga_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--population", dest="population_size", type=int)
    sub.add_argument("--generations", type=int)
    sub.add_argument("--l-max", dest="l_max", type=int)
    sub.add_argument("--n-min", dest="n_min", type=int)
    sub.add_argument("--n-max", dest="n_max", type=int)
    sub.add_argument("--p-add", dest="p_add", type=float)
    sub.add_argument("--p-remove", dest="p_remove", type=float)
    sub.add_argument("--p-neuron", dest="p_neuron", type=float)
    sub.add_argument("--elitism", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evoattn", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic line-pattern dataset")
    synth.add_argument("--count", type=int, required=True, help="samples per class")
    synth.add_argument("--shape", required=True, help="feature map shape HxWxC")
    synth.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.5)
    synth.add_argument("--line-intensity", dest="line_intensity", type=float, default=2.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(func=cmd_synth)

    search = commands.add_parser("search", help="evolve an architecture and train the winner")
    _add_config_flags(search)
    _add_ga_flags(search)
    search.add_argument("--parallel", type=int, default=None, help="fitness evaluation workers")
    search.add_argument("--out", required=True, help="output directory")
    search.set_defaults(func=cmd_search)

    train_cmd = commands.add_parser("train", help="train one architecture")
    _add_config_flags(train_cmd)
    train_cmd.add_argument("--arch", required=True, help="dash-separated widths, e.g. 66-805-218-382")
    train_cmd.add_argument("--out", required=True, help="output directory")
    train_cmd.set_defaults(func=cmd_train)

    eval_cmd = commands.add_parser("eval", help="evaluate a checkpoint on one split")
    eval_cmd.add_argument("--checkpoint", required=True)
    eval_cmd.add_argument("--manifest", required=True)
    eval_cmd.add_argument("--split", choices=("train", "val", "test"), default="test")
    eval_cmd.add_argument("--threshold", type=float, default=None)
    eval_cmd.set_defaults(func=cmd_eval)

    dump = commands.add_parser("attention-dump", help="export a checkpoint's attention map")
    dump.add_argument("--checkpoint", required=True)
    dump.add_argument("--fmap", required=True, help="input feature map file")
    dump.add_argument("--out", required=True, help="output path prefix")
    dump.set_defaults(func=cmd_attention_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, ParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FmapError, CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (FitnessError, NumericError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
