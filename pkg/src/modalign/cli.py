"""Command-line surface: gen-data / train / eval / heatmap / sweep-alpha.

Model and training hyperparameters live in a plain-text config file
(`key = value`, UTF-8, `#` comments); flags carry only paths and seeds.
Every command is idempotent: identical inputs and seeds produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import struct
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    dataset_from_fixture,
    dataset_stats,
    generate_synthetic,
    parse_kv_lines,
    read_fixture,
    read_manifest,
    write_fixture,
    write_manifest,
)
from .encoders import FixtureTeacher, SyntheticTeacher
from .errors import (
    ConfigError,
    FixtureError,
    FixtureMagicError,
    FixtureTruncatedError,
    FixtureVersionError,
)
from .fusion import SentimentLexicon
from .model import AlignmentModel, ModelConfig
from .train_eval import (
    TrainConfig,
    diagonal_max_rate,
    evaluate,
    heatmap,
    train,
    write_heatmap_csv,
    write_history_csv,
)

CHECKPOINT_MAGIC = b"CLFC"
CHECKPOINT_VERSION = 1

EVAL_SEED_OFFSET = 100_003  # held-out split draws from a disjoint stream


# --- checkpoint format (same framing conventions as the fixture) -------------

def save_checkpoint(path, model: AlignmentModel) -> None:
    config_text = model.config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<BI", CHECKPOINT_VERSION, len(config_text)))
        fh.write(config_text)
        state = model.state()
        fh.write(struct.pack("<I", len(state)))
        for name, data in state:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> AlignmentModel:
    blob = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FixtureTruncatedError(f"checkpoint ends early at offset {pos}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise FixtureMagicError(f"bad checkpoint magic, expected {CHECKPOINT_MAGIC!r}")
    version, config_len = struct.unpack("<BI", take(5))
    if version != CHECKPOINT_VERSION:
        raise FixtureVersionError(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_text(take(config_len).decode("utf-8"))
    (n_params,) = struct.unpack("<I", take(4))
    blocks = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        blocks[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
    if pos != len(blob):
        raise FixtureError(f"{len(blob) - pos} trailing bytes in checkpoint")
    model = AlignmentModel(config)
    model.load_state(blocks)
    return model


# --- run configuration --------------------------------------------------------

@dataclass
class RunConfig:
    # training (see TrainConfig for the paper-scale preset)
    alpha: float = 1.0
    tau: float = 0.1
    batch_size: int = 8
    learning_rate: float = 1e-3
    epochs: int = 15
    warmup: float = 0.1
    weight_decay: float = 0.01
    dropout: float = 0.1
    seed: int = 0
    drop_duplicates: bool = True
    alignment_enabled: bool = True
    # model
    d: int = 64
    text_blocks: int = 2
    image_blocks: int = 2
    teacher_width: int = 32
    proj_hidden: int = 128
    fusion: str = "cross_attention"
    fusion_layers: int = 3
    positional: bool = True
    # data
    data: str = "synthetic"
    eval_data: str = ""
    n_samples: int = 2000
    eval_samples: int = 200
    classes: int = 2
    teacher: str = "synthetic"
    lexicon: str = ""
    out_dir: str = "runs/default"

    @classmethod
    def valid_keys(cls) -> list[str]:
        return sorted(f.name for f in fields(cls))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        text = Path(path).read_text(encoding="utf-8")
        kv = parse_kv_lines(text)
        unknown = kv.keys() - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(
                f"unknown config keys {sorted(unknown)}; valid keys: {cls.valid_keys()}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw.lower() in ("true", "1", "yes")
            elif f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self) -> None:
        if self.fusion == "knowledge_cross_attention" and not self.lexicon:
            raise ConfigError("knowledge fusion requires a `lexicon` path in the config")
        if self.teacher not in ("synthetic", "fixture"):
            raise ConfigError(f"teacher must be synthetic or fixture, got {self.teacher!r}")
        if self.teacher == "fixture" and self.data == "synthetic":
            raise ConfigError("fixture teacher requires `data` to point at a fixture file")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(d=self.d, text_blocks=self.text_blocks,
                           image_blocks=self.image_blocks, teacher_width=self.teacher_width,
                           proj_hidden=self.proj_hidden, num_classes=self.classes,
                           dropout=self.dropout, positional=self.positional, seed=self.seed,
                           fusion_variant=self.fusion, fusion_layers=self.fusion_layers)

    def train_config(self, **overrides) -> TrainConfig:
        base = dict(alpha=self.alpha, tau=self.tau, batch_size=self.batch_size,
                    learning_rate=self.learning_rate, epochs=self.epochs, warmup=self.warmup,
                    weight_decay=self.weight_decay, dropout=self.dropout, seed=self.seed,
                    drop_duplicates=self.drop_duplicates,
                    alignment_enabled=self.alignment_enabled)
        base.update(overrides)
        return TrainConfig(**base)


def _load_fixture_dataset(data_path: str, classes: int, split: str = "train") -> Dataset:
    fixture = read_fixture(data_path)
    manifest_path = Path(data_path).with_name("manifest.txt")
    if not manifest_path.exists():
        raise ConfigError(f"no manifest next to fixture: {manifest_path}")
    _, labels = read_manifest(manifest_path)
    return dataset_from_fixture(fixture, labels, num_classes=classes, split=split)


def _resolve_data(config: RunConfig, seed: int) -> tuple[Dataset, Dataset | None]:
    if config.data == "synthetic":
        dataset = generate_synthetic(config.n_samples, seed, config.classes)
        eval_ds = None
        if config.eval_samples > 0:
            eval_ds = generate_synthetic(config.eval_samples, seed + EVAL_SEED_OFFSET,
                                         config.classes, split="eval")
        return dataset, eval_ds
    dataset = _load_fixture_dataset(config.data, config.classes)
    eval_ds = _load_fixture_dataset(config.eval_data, config.classes, "eval") \
        if config.eval_data else None
    return dataset, eval_ds


def _resolve_teacher(config: RunConfig, seed: int):
    if config.teacher == "fixture":
        return FixtureTeacher(read_fixture(config.data))
    return SyntheticTeacher(seed=seed, width=config.teacher_width)


def _run_training(config: RunConfig, seed: int, alpha: float | None = None):
    dataset, eval_ds = _resolve_data(config, seed)
    teacher = _resolve_teacher(config, seed)
    model_cfg = config.model_config()
    model_cfg.seed = seed
    model = AlignmentModel(model_cfg)
    lexicon = SentimentLexicon.load(config.lexicon) if config.lexicon else None
    overrides = {"seed": seed}
    if alpha is not None:
        overrides["alpha"] = alpha
    history = train(model, teacher, dataset, config.train_config(**overrides),
                    eval_dataset=eval_ds, lexicon=lexicon)
    return model, history, eval_ds, lexicon


# --- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    dataset = generate_synthetic(args.n, args.seed, args.classes)
    teacher = SyntheticTeacher(seed=args.seed, width=args.teacher_width)
    embeddings = [teacher.embed(s) for s in dataset.samples]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_fixture(out / "data.clfa", dataset.samples, embeddings, include_raw=True)
    write_manifest(out / "manifest.txt", dataset_stats(dataset),
                   labels={s.id: s.label for s in dataset.samples}, classes=args.classes)
    print(f"wrote {out / 'data.clfa'} ({len(dataset)} samples) and {out / 'manifest.txt'}")
    return 0


def cmd_train(args) -> int:
    config = RunConfig.from_file(args.config)
    model, history, _, _ = _run_training(config, config.seed)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.clfc", model)
    write_history_csv(out / "history.csv", history)
    final = history[-1]
    print(f"epoch {final.epoch}: total {final.total:.4f} "
          f"acc {final.acc:.4f} macro_F1 {final.macro_f1:.4f}")
    print(f"wrote {out / 'checkpoint.clfc'} and {out / 'history.csv'}")
    return 0


def _eval_dataset_from_args(args, model) -> Dataset:
    return _load_fixture_dataset(args.data, model.config.num_classes)


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = _eval_dataset_from_args(args, model)
    lexicon = SentimentLexicon.load(args.lexicon) if args.lexicon else None
    report = evaluate(model, dataset, lexicon=lexicon)
    print(f"samples {int(report.confusion.sum())}")
    print(f"acc {report.accuracy:.6f}")
    print(f"macro_P {report.macro_p:.6f} macro_R {report.macro_r:.6f} "
          f"macro_F1 {report.macro_f1:.6f}")
    for k, (p, r, f1) in enumerate(report.per_class):
        print(f"class {k}: P {p:.6f} R {r:.6f} F1 {f1:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("acc,macro_P,macro_R,macro_F1\n")
            fh.write(f"{report.accuracy:.10g},{report.macro_p:.10g},"
                     f"{report.macro_r:.10g},{report.macro_f1:.10g}\n")
    return 0


def cmd_heatmap(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = _eval_dataset_from_args(args, model)
    samples = dataset.samples[:args.n] if args.n else dataset.samples
    sim = heatmap(model, samples)
    write_heatmap_csv(args.out, sim)
    print(f"wrote {args.out} ({sim.shape[0]}x{sim.shape[1]}); "
          f"diagonal row-max rate {diagonal_max_rate(sim):.3f}")
    return 0


def cmd_sweep_alpha(args) -> int:
    config = RunConfig.from_file(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    rows = []
    for alpha_text in values:
        alpha = float(alpha_text)
        for seed_idx in range(args.seeds):
            seed = config.seed + seed_idx
            model, history, eval_ds, lexicon = _run_training(config, seed, alpha=alpha)
            report_ds = eval_ds if eval_ds is not None else _resolve_data(config, seed)[0]
            report = evaluate(model, report_ds, lexicon=lexicon)
            rows.append((alpha_text, seed, report))
            print(f"alpha {alpha_text} seed {seed}: macro_F1 {report.macro_f1:.4f}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("alpha,seed,acc,macro_P,macro_R,macro_F1\n")
        for alpha_text, seed, rep in rows:
            fh.write(f"{alpha_text},{seed},{rep.accuracy:.10g},{rep.macro_p:.10g},"
                     f"{rep.macro_r:.10g},{rep.macro_f1:.10g}\n")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modalign",
                                     description="teacher-aligned multi-modal classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic fixture + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--teacher-width", type=int, default=32)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fixture")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lexicon", default="")
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="write the text/image similarity matrix as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=0, help="cap the number of pairs (0 = all)")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("sweep-alpha", help="train over a grid of alpha values and seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--values", default="0,0.5,1,2")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_alpha)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "classes", 2) < 2:
        parser.error(f"--classes must be >= 2, got {args.classes}")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
