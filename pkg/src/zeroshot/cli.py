"""Command-line entry point: ``zeroshot <command> [options]``.

Commands: synth, featurize, train, eval, attributes, neighbors. Settings come
from an optional JSON file (``--config``) overlaid by command-line flags;
flags win. One seed drives the split, the initialization and the batching.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .attributes import nearest_images, word_sensitivity
from .datasets import (
    SplitSpec,
    generate_signal_synthetic,
    generate_synthetic,
    load_features,
    make_folds,
    make_split,
    save_features,
)
from .errors import ConfigurationError, ZeroShotError
from .evaluation import evaluate_protocol, mean_report
from .losses import LOSS_KINDS
from .model import MODEL_KINDS, POOLING_MODES, load_checkpoint, save_checkpoint
from .optim import TrainConfig, train, write_loss_trace
from .textfeat import (
    Vocabulary,
    featurize_corpus,
    load_corpus,
    load_text_features,
    save_corpus,
    save_text_features,
    text_matrix,
)


@dataclass
class ExperimentConfig:
    corpus: str | None = None
    features: str | None = None
    texts: str | None = None
    vocab: str | None = None
    split: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    model: str = "fc"
    loss: str = "bce"
    k: int = 50
    hidden: int = 300
    n_reduced: int = 5
    filter_size: int = 3
    pooling: str = "average"
    batch_size: int = 200
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    margin: float = 1.0
    n_unseen: int | None = None
    train_fraction: float = 0.8
    folds: int = 1
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        choices = {"model": MODEL_KINDS, "loss": LOSS_KINDS, "pooling": POOLING_MODES}
        for name, valid in choices.items():
            if getattr(self, name) not in valid:
                raise ConfigurationError(
                    f"invalid {name} {getattr(self, name)!r}; valid values: {', '.join(valid)}"
                )
        positive = ("k", "hidden", "n_reduced", "filter_size", "batch_size", "epochs", "folds")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie strictly between 0 and 1")
        if self.margin <= 0 or self.lr < 0:
            raise ConfigurationError("margin must be > 0 and lr >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigurationError("Adam needs 0 <= beta < 1 and eps > 0")
        return self

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigurationError(f"--{name.replace('_', '-')} is required")
            if name != "out" and not Path(value).exists():
                raise FileNotFoundError(f"{name} path does not exist: {value}")

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            model=self.model, loss=self.loss, batch_size=self.batch_size, epochs=self.epochs,
            seed=self.seed if seed is None else seed, lr=self.lr, beta1=self.beta1,
            beta2=self.beta2, eps=self.eps, margin=self.margin, k=self.k, hidden=self.hidden,
            n_reduced=self.n_reduced, filter_size=self.filter_size, pooling=self.pooling,
        )

    def digest(self) -> str:
        """Digest of the settings that influence results (paths excluded)."""
        skip = {"corpus", "features", "texts", "vocab", "split", "checkpoint", "out"}
        payload = {k: v for k, v in asdict(self).items() if k not in skip}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def digest_of(settings: dict) -> str:
    return hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()[:16]


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        values.update(json.loads(path.read_text(encoding="utf-8")))
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in known:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return ExperimentConfig(**values).validate()


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_inputs(cfg: ExperimentConfig):
    cfg.require("features", "texts")
    store = load_features(cfg.features)
    features = load_text_features(cfg.texts)
    texts = text_matrix(features, max(store.n_classes, max(features) + 1))
    return store, texts


def _n_unseen(cfg: ExperimentConfig, n_classes: int) -> int:
    return cfg.n_unseen if cfg.n_unseen is not None else max(1, round(0.2 * n_classes))


def _split_for(cfg: ExperimentConfig, store) -> SplitSpec:
    if cfg.split:
        cfg.require("split")
        return SplitSpec.from_dict(json.loads(Path(cfg.split).read_text(encoding="utf-8")))
    return make_split(store, _n_unseen(cfg, store.n_classes), cfg.train_fraction, cfg.seed)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    settings = {k: getattr(args, k) for k in (
        "generator", "classes", "per_class", "p", "d", "M", "w", "h", "sigma", "seed",
        "n_attributes", "n_signal")}
    if args.generator == "signal":
        n_signal = args.n_signal or max(1, (2 * args.classes) // 3)
        data = generate_signal_synthetic(args.classes, args.per_class, n_signal, args.d,
                                         sigma=args.sigma, seed=args.seed)
    else:
        data = generate_synthetic(args.classes, args.per_class, args.p, args.d, args.M, args.w,
                                  args.h, args.sigma, args.seed, n_attributes=args.n_attributes)
    out = _out_dir(args.out)
    save_corpus(data.corpus, out / "corpus")
    save_features(data.store, out / "features.zsfb")
    info = {k: v for k, v in data.info.items()}
    if "signal_terms" in info:
        info["signal_terms"] = {str(c): t for c, t in info["signal_terms"].items()}
    _write_json(out / "synth.json", {"settings": settings, "config_digest": digest_of(settings),
                                     "info": info, "n_images": len(data.store)})
    print(f"wrote {len(data.store)} images and {len(data.corpus)} articles to {out}")
    return 0


def cmd_featurize(args) -> int:
    corpus = load_corpus(args.corpus)
    vocab, features = featurize_corpus(corpus)
    out = _out_dir(args.out)
    digest = digest_of({"command": "featurize", "n_docs": len(corpus), "terms": len(vocab)})
    header = f"config_digest={digest}"
    vocab.save(out / "vocab.tsv", header=header)
    save_text_features(features, out / "tfidf.csv", header=header)
    print(f"{len(corpus)} articles, vocabulary of {len(vocab)} terms -> {out}")
    return 0


def _train_once(cfg: ExperimentConfig, store, texts, split: SplitSpec, seed: int):
    result = train(store.subset(split.train), texts, cfg.train_config(seed))
    return result


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    cfg.require("out")
    store, texts = _load_inputs(cfg)
    split = _split_for(cfg, store)
    result = _train_once(cfg, store, texts, split, cfg.seed)
    out = _out_dir(cfg.out)
    # the output directory is left out so reruns elsewhere give identical bytes
    settings = {k: v for k, v in asdict(cfg).items() if k != "out"}
    meta = {"config": settings, "config_digest": cfg.digest(), "split_seed": split.seed}
    save_checkpoint(result.model, out / "model.zsmp", meta)
    write_loss_trace(result.losses, out / "loss.csv", header=f"config_digest={cfg.digest()}")
    _write_json(out / "split.json", {**split.to_dict(), "config_digest": cfg.digest()})
    print(f"trained {len(result.losses)} steps; loss {result.losses[0]:.4g} -> "
          f"{result.losses[-1]:.4g}; checkpoint {out / 'model.zsmp'}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    cfg.require("out")
    store, texts = _load_inputs(cfg)
    out = Path(cfg.out)
    if cfg.folds > 1:
        out = _out_dir(cfg.out)
        folds = make_folds(store, cfg.folds, _n_unseen(cfg, store.n_classes),
                           cfg.train_fraction, cfg.seed)
        reports = []
        for i, split in enumerate(folds):
            result = _train_once(cfg, store, texts, split, cfg.seed + i)
            report = evaluate_protocol(result.model, store, split, texts)
            report.meta.update(fold=i, config_digest=cfg.digest())
            report.save(out / f"report_fold{i}.json")
            reports.append(report)
        summary = mean_report(reports)
        summary.meta["config_digest"] = cfg.digest()
        summary.save(out / "report_mean.json")
        print(summary.to_json())
        return 0
    cfg.require("checkpoint")
    model, meta = load_checkpoint(cfg.checkpoint)
    split = _split_for(cfg, store)
    report = evaluate_protocol(model, store, split, texts)
    report.meta["config_digest"] = meta.get("config_digest", cfg.digest())
    if out.suffix != ".json":
        out = _out_dir(cfg.out) / "report.json"
    report.save(out)
    print(report.to_json())
    return 0


def _test_store(cfg: ExperimentConfig, store):
    if cfg.split:
        return store.subset(_split_for(cfg, store).test)
    return store


def cmd_attributes(args) -> int:
    cfg = resolve_config(args)
    cfg.require("checkpoint", "vocab", "out")
    model, meta = load_checkpoint(cfg.checkpoint)
    store, texts = _load_inputs(cfg)
    vocab = Vocabulary.load(cfg.vocab)
    report = word_sensitivity(model, args.class_id, texts[args.class_id], vocab.terms,
                              _test_store(cfg, store), top=args.top)
    out = _out_dir(cfg.out)
    data = report.to_dict()
    data["config_digest"] = meta.get("config_digest", cfg.digest())
    _write_json(out / f"attributes_{args.class_id}.json", data)
    table = report.to_table()
    (out / f"attributes_{args.class_id}.txt").write_text(
        f"# config_digest={data['config_digest']}\n{table}\n", encoding="utf-8")
    print(table)
    return 0


def cmd_neighbors(args) -> int:
    cfg = resolve_config(args)
    cfg.require("checkpoint")
    model, meta = load_checkpoint(cfg.checkpoint)
    store, texts = _load_inputs(cfg)
    test = _test_store(cfg, store)
    pool = int((test.labels == args.class_id).sum()) if args.within else len(test)
    if args.count > pool:
        print(f"notice: count {args.count} exceeds the {pool} candidates; returning all",
              file=sys.stderr)
    ids = nearest_images(model, texts[args.class_id], test, args.count, args.class_id,
                         args.within)
    result = {"class_id": args.class_id, "within_class": args.within, "image_ids": ids.tolist(),
              "config_digest": meta.get("config_digest", cfg.digest())}
    if cfg.out:
        _write_json(_out_dir(cfg.out) / f"neighbors_{args.class_id}.json", result)
    print(" ".join(str(i) for i in ids))
    return 0


# -- argument parsing ---------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with experiment settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", help="ZSFB image feature file")
    p.add_argument("--texts", help="tf-idf CSV written by 'featurize'")
    p.add_argument("--split", help="split.json written by 'train'")


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--pooling", choices=POOLING_MODES)
    p.add_argument("--k", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--n-reduced", dest="n_reduced", type=int)
    p.add_argument("--filter-size", dest="filter_size", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--n-unseen", dest="n_unseen", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroshot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus and feature file")
    p.add_argument("--out", required=True)
    p.add_argument("--generator", choices=("attributes", "signal"), default="attributes")
    p.add_argument("--classes", type=int, default=30)
    p.add_argument("--per-class", dest="per_class", type=int, default=25)
    p.add_argument("--p", type=int, default=200)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--M", type=int, default=0)
    p.add_argument("--w", type=int, default=0)
    p.add_argument("--h", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-attributes", dest="n_attributes", type=int)
    p.add_argument("--n-signal", dest="n_signal", type=int)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="tf-idf features for a corpus directory")
    p.add_argument("--corpus", required=True, help="directory of <class_id>.txt articles")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model on the seen classes")
    _common(p)
    _data_flags(p)
    _training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or cross-validate with --folds")
    _common(p)
    _data_flags(p)
    _training_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attributes", help="word-sensitivity pseudo-attributes of a class")
    _common(p)
    _data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--class-id", dest="class_id", type=int, required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_attributes)

    p = sub.add_parser("neighbors", help="test images nearest to a class's predicted weights")
    _common(p)
    _data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--class-id", dest="class_id", type=int, required=True)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--within", action="store_true", help="only images of the class itself")
    p.set_defaults(func=cmd_neighbors)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ZeroShotError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
