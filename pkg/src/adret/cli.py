"""Command-line entry point.

Verbs: generate (synthesize and persist the corpus splits), train, eval,
gradcheck (finite-difference verification of every differentiable op), and
inspect-pool (dump a pooler's output and learned weights for one matrix).

Exit codes: 0 success, 1 configuration error, 2 data/format error,
3 numerical failure. Log verbosity comes from ADRET_LOG (error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .cache import atomic_write_text, cache_read, cache_write, load_tensors, save_tensors
from .config import ExperimentConfig, load_config
from .data import generate_splits, ground_truth, load_corpus, save_corpus
from .encoders import BiEncoder, encode_all, init_encoder_params
from .errors import (
    ConfigError,
    DataError,
    DegenerateVectorError,
    DimensionError,
    EvaluationError,
    FormatError,
    TrainingDivergedError,
)
from .evaluation import ensemble_similarity, evaluate_scores_folds
from .gradcheck import run_all
from .pooling import PoolParams, PoolingSpec, pool_forward
from .tensor import cosine_sim_matrix
from .training import train

log = logging.getLogger("adret")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    # route usage errors through the package's exit-code scheme
    def error(self, message):
        raise ConfigError(message)


def _setup_logging() -> None:
    level = os.environ.get("ADRET_LOG", "info").strip().lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def build_model(cfg: ExperimentConfig) -> BiEncoder:
    """Seeded initialization; a separate stream from the training shuffle."""
    rng = np.random.default_rng([cfg.train.seed, 0])
    visual = init_encoder_params(rng, cfg.corpus.visual_dim,
                                 cfg.corpus.embed_dim, cfg.visual_pooling)
    text = init_encoder_params(rng, cfg.corpus.text_dim,
                               cfg.corpus.embed_dim, cfg.text_pooling)
    return BiEncoder(visual, text)


def cmd_generate(cfg: ExperimentConfig) -> int:
    os.makedirs(cfg.corpus_dir, exist_ok=True)
    splits = generate_splits(cfg.corpus, cfg.train_groups, cfg.val_groups,
                             cfg.test_groups)
    for name in ("train", "val", "test"):
        corpus = splits[name]
        save_corpus(cfg.corpus_dir, name, corpus)
        print(f"{name}: {len(corpus.images)} images, {len(corpus.texts)} texts")
    log.info("corpus written to %s", cfg.corpus_dir)
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    train_corpus = load_corpus(cfg.corpus_dir, "train")
    val_corpus = load_corpus(cfg.corpus_dir, "val")
    model = build_model(cfg)
    trained, train_log = train(train_corpus, model, cfg.train, val_corpus)

    os.makedirs(cfg.output_dir, exist_ok=True)
    atomic_write_text(os.path.join(cfg.output_dir, "train_log.csv"),
                      train_log.to_csv())
    save_tensors(os.path.join(cfg.output_dir, "params.bin"), trained.tensors())
    metrics = {
        "loss_mode": cfg.train.loss.mode,
        "epochs": cfg.train.epochs,
        "iterations": len(train_log.records),
        "val_rsum": [[epoch, rsum] for epoch, rsum in train_log.validation],
        "final_val_rsum": train_log.validation[-1][1] if train_log.validation else None,
    }
    atomic_write_text(os.path.join(cfg.output_dir, "metrics.json"),
                      json.dumps(metrics, sort_keys=True) + "\n")
    final = metrics["final_val_rsum"]
    print(f"trained {metrics['iterations']} iterations"
          + (f", final validation RSUM {final:.2f}" if final is not None else ""))
    return 0


def _encode_test_split(cfg: ExperimentConfig, params_path: str, corpus,
                       cache_embeddings: bool, index: int):
    cache_t = os.path.join(cfg.output_dir, f"cache_test_text_{index}.bin")
    cache_v = os.path.join(cfg.output_dir, f"cache_test_visual_{index}.bin")
    if cache_embeddings and os.path.exists(cache_t) and os.path.exists(cache_v):
        log.info("cache hit: reusing embeddings %s / %s", cache_t, cache_v)
        return cache_read(cache_t)[0], cache_read(cache_v)[0]
    try:
        tensors = load_tensors(params_path)
    except FileNotFoundError:
        raise DataError(f"parameter file not found: {params_path}")
    model = BiEncoder.from_tensors(tensors, cfg.visual_pooling, cfg.text_pooling)
    t_emb = encode_all(corpus.texts, model.text)
    v_emb = encode_all(corpus.images, model.visual)
    if cache_embeddings:
        os.makedirs(cfg.output_dir, exist_ok=True)
        cache_write(cache_t, t_emb, [t.id for t in corpus.texts])
        cache_write(cache_v, v_emb, [i.id for i in corpus.images])
        log.info("cached embeddings to %s / %s", cache_t, cache_v)
    return t_emb, v_emb


def cmd_eval(cfg: ExperimentConfig, params_paths: list[str],
             cache_embeddings: bool) -> int:
    corpus = load_corpus(cfg.corpus_dir, "test")
    truth = ground_truth(corpus)
    text_ids = tuple(t.id for t in corpus.texts)
    image_ids = tuple(i.id for i in corpus.images)
    matrices = []
    for index, path in enumerate(params_paths):
        t_emb, v_emb = _encode_test_split(cfg, path, corpus, cache_embeddings,
                                          index)
        matrices.append(cosine_sim_matrix(t_emb, v_emb))
    scores = ensemble_similarity(matrices)
    result = evaluate_scores_folds(scores, text_ids, image_ids, truth,
                                   cfg.eval_folds)
    os.makedirs(cfg.output_dir, exist_ok=True)
    atomic_write_text(os.path.join(cfg.output_dir, "results.json"),
                      result.to_json() + "\n")
    atomic_write_text(os.path.join(cfg.output_dir, "results.csv"),
                      result.to_csv())
    print(result.to_json())
    return 0


def cmd_gradcheck(seed: int) -> int:
    reports = run_all(seed)
    for report in reports:
        print(report)
    failures = [r.op_name for r in reports if not r.passed]
    print(f"{len(reports)} operations checked, {len(failures)} failing")
    if failures:
        print("failing: " + ", ".join(failures), file=sys.stderr)
        return 3
    return 0


def cmd_inspect_pool(matrix_path: str, method: str, k, weights, modality: str,
                     params_path) -> int:
    matrix, _ = cache_read(matrix_path)
    spec = PoolingSpec(
        method=method,
        k=k,
        manual_mode=modality if method == "manual" else None,
        weights=weights)
    d = matrix.shape[1]
    if params_path:
        tensors = load_tensors(params_path)
        try:
            params = PoolParams(tensors[f"{modality}.w_tok"],
                                tensors[f"{modality}.w_bal"])
        except KeyError as exc:
            raise DataError(f"parameter file lacks tensor {exc}")
    else:
        params = PoolParams.zeros(d)
    pooled, diag, _ = pool_forward(matrix, spec, params)
    dump = {
        "method": method,
        "pooled": [float(x) for x in pooled],
        "theta": None if diag.theta is None else [float(x) for x in diag.theta],
        "delta": None if diag.delta is None else [[float(x) for x in row]
                                                  for row in diag.delta],
        "omega": None if diag.omega is None else [float(x) for x in diag.omega],
    }
    print(json.dumps(dump, sort_keys=True))
    return 0


def _parse_weights(raw):
    if raw is None:
        return None
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"--weights expects two comma-separated numbers, got {raw!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ConfigError(f"--weights must be numeric, got {raw!r}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="adret",
                     description="Bi-encoder contrastive retrieval with "
                                 "adaptive pooling and adaptive negative "
                                 "sampling, at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--seed", type=int, default=None,
                       help="override train.seed")
        p.add_argument("--out", default=None, help="override output.dir")

    p = sub.add_parser("generate", help="synthesize and persist corpus splits")
    add_config_flags(p)

    p = sub.add_parser("train", help="train the bi-encoder")
    add_config_flags(p)
    p.add_argument("--loss", choices=("hard-triplet", "infonce-adaptive",
                                      "infonce-fixed"), default=None,
                   help="override train.loss")
    p.add_argument("--k", type=int, default=None,
                   help="negative count for infonce-fixed")
    p.add_argument("--epochs", type=int, default=None,
                   help="override train.epochs")

    p = sub.add_parser("eval", help="evaluate retrieval on the test split")
    add_config_flags(p)
    p.add_argument("--ensemble", nargs="+", metavar="PARAMS", default=None,
                   help="parameter files to ensemble (default: OUT/params.bin)")
    p.add_argument("--cache-embeddings", action="store_true",
                   help="reuse encoded test embeddings across eval runs")

    p = sub.add_parser("gradcheck", help="finite-difference check every op")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect-pool", help="dump pooled vector and weights")
    p.add_argument("matrix", help="cache-format matrix file")
    p.add_argument("--method", default="adpool",
                   choices=("mean", "max", "kmax", "adpool", "manual",
                            "fixed-balance"))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--weights", default=None,
                   help="fixed-balance weights, e.g. 0.75,0.25")
    p.add_argument("--modality", choices=("visual", "text"), default="text")
    p.add_argument("--params", default=None,
                   help="parameter file providing learned pooling weights")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "generate":
            cfg = load_config(args.config, seed_override=args.seed,
                              out_override=args.out)
            return cmd_generate(cfg)
        if args.command == "train":
            cfg = load_config(args.config, seed_override=args.seed,
                              loss_override=args.loss, k_override=args.k,
                              out_override=args.out,
                              epochs_override=args.epochs)
            return cmd_train(cfg)
        if args.command == "eval":
            cfg = load_config(args.config, seed_override=args.seed,
                              out_override=args.out)
            paths = args.ensemble or [os.path.join(cfg.output_dir, "params.bin")]
            return cmd_eval(cfg, paths, args.cache_embeddings)
        if args.command == "gradcheck":
            return cmd_gradcheck(args.seed)
        if args.command == "inspect-pool":
            return cmd_inspect_pool(args.matrix, args.method, args.k,
                                    _parse_weights(args.weights),
                                    args.modality, args.params)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateVectorError, EvaluationError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
