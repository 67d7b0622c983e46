"""Operator CLI: synth, train, generate, evaluate, ablate, gradcheck, serve.

Every subcommand is deterministic given the config and seed; primary
outputs are byte-identical across reruns (the training log's first line
carries the only timestamp). Exit codes: 0 ok, 1 internal failure,
2 usage/config error, 3 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SynthSpec, Vocabulary, synth_toy_corpus, write_synth_corpus
from .errors import ConfigError, DataError, MoodcapError
from .metrics import MetricReport
from .model import ModelConfig, Parameters, Sentiment, Variant
from .pipeline import GeneratedLine, evaluate_lines, generate_captions
from .training import TrainConfig, build_batch_loss, train

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

WORKERS_ENV = "MOODCAP_THREADS"

ABLATION_ORDER = (Variant.ATTEND, Variant.MINUS_E1E2L2, Variant.MINUS_E2L2,
                  Variant.MINUS_L2, Variant.FULL)

VARIANT_LABELS = {
    Variant.ATTEND: "attend",
    Variant.MINUS_E1E2L2: "-E1E2L2",
    Variant.MINUS_E2L2: "-E2L2",
    Variant.MINUS_L2: "-L2",
    Variant.FULL: "full",
}

GRADCHECK_TOLERANCE = 1e-3


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


# ----------------------------------------------------------------------
# config plumbing

def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "variant", None):
        cfg.model.variant = args.variant
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "lr", None) is not None:
        cfg.train.learning_rate = args.lr
    if getattr(args, "lambda_l2", None) is not None:
        cfg.train.lambda_l2 = args.lambda_l2
    if getattr(args, "lambda_att", None) is not None:
        cfg.train.lambda_att = args.lambda_att
    if getattr(args, "beam", None) is not None:
        cfg.decode.beam_width = args.beam
    if getattr(args, "max_len", None) is not None:
        cfg.decode.max_len = args.max_len
    return cfg


def _require_paths(cfg: RunConfig, names: list[str]) -> None:
    missing = [n for n in names if getattr(cfg.paths, n) is None]
    if missing:
        raise ConfigError(f"config is missing required path(s): {missing}")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def check_feature_coverage(records, store) -> None:
    missing = sorted({r.image_id for r in records if r.image_id not in store})
    if missing:
        raise DataError(f"{len(missing)} caption image ids have no features: "
                        f"{missing[:5]}{'...' if len(missing) > 5 else ''}")


def _load_training_data(cfg: RunConfig):
    rows = D.read_caption_file(cfg.paths.train_captions)
    if not rows:
        raise DataError(f"{cfg.paths.train_captions}: no caption records")
    vocab = Vocabulary.build([r.text for r in rows], min_count=cfg.model.min_count,
                             cap=cfg.model.vocab_cap)
    records = D.make_records(rows, vocab, max_len=cfg.decode.max_len)
    records = assemble_corpus(records)[0]
    features = D.load_features(cfg.paths.features)
    check_feature_coverage(records, features)
    val_records = None
    if cfg.paths.val_captions:
        val_records = D.make_records(D.read_caption_file(cfg.paths.val_captions),
                                     vocab, max_len=cfg.decode.max_len)
        check_feature_coverage(val_records, features)
    return rows, vocab, records, val_records, features


def assemble_corpus(records):
    """Neutral-label unlabeled factual records, pass labeled ones through."""
    factual = [r for r in records if r.sentiment is None]
    labeled = [r for r in records if r.sentiment is not None]
    sentimental = [r for r in labeled if r.sentiment is not Sentiment.NEUTRAL]
    neutral = [r for r in labeled if r.sentiment is Sentiment.NEUTRAL]
    merged, counts = D.merge_datasets(factual, sentimental)
    merged += neutral
    counts["neutral"] = counts.get("neutral", 0) + len(neutral)
    return merged, counts


# ----------------------------------------------------------------------
# table formatting

def _report_values(report: MetricReport) -> dict[str, float]:
    return {
        "b1": report.bleu[0], "b2": report.bleu[1], "b3": report.bleu[2],
        "b4": report.bleu[3], "rouge_l": report.rouge_l, "cider": report.cider,
        "spice_n": report.spice_n, "entropy": report.entropy,
        "anp_m": float(report.anp_matched), "anp_g": float(report.anp_generated),
    }


def _average_rows(rows: list[dict[str, float]]) -> dict[str, float]:
    return {k: sum(r[k] for r in rows) / len(rows) for k in rows[0]}


METRIC_COLUMNS = ("B-1", "B-2", "B-3", "B-4", "ROUGE-L", "METEOR", "CIDEr",
                  "SPICE_N", "Entropy", "C_ANP")


def format_metric_row(values: dict[str, float], raw: bool = False) -> list[str]:
    scale = 1.0 if raw else 100.0
    digits = 4 if raw else 2
    cells = [f"{values[k] * scale:.{digits}f}" for k in ("b1", "b2", "b3", "b4", "rouge_l")]
    cells.append("-")  # METEOR needs external resources; intentionally absent
    cells += [f"{values[k] * scale:.{digits}f}" for k in ("cider", "spice_n")]
    cells.append(f"{values['entropy']:.4f}")
    cells.append(f"{values['anp_m']:.1f} / {values['anp_g']:.1f}")
    return cells


def format_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def pad_adjectives(adjectives: list[str], k: int = 10) -> str:
    padded = list(adjectives[:k]) + ["_"] * max(0, k - len(adjectives))
    return ", ".join(padded)


# ----------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    spec = SynthSpec(n_images=args.n_images, regions=args.regions,
                     feature_dim=args.feature_dim, n_objects=args.objects)
    corpus = synth_toy_corpus(spec, seed=args.seed if args.seed is not None else 0)
    paths = write_synth_corpus(corpus, args.out)
    cfg = RunConfig()
    cfg.model.regions = spec.regions
    cfg.model.feature_dim = spec.feature_dim
    # bare names: loaders anchor them at the config file's directory
    cfg.paths = dataclasses.replace(cfg.paths,
                                    **{k: Path(v).name for k, v in paths.items()},
                                    checkpoint_dir="checkpoints", out_dir=".")
    config_path = Path(args.out) / "config.json"
    config_path.write_text(cfg.to_json() + "\n", encoding="utf-8")
    for name, path in {**paths, "config": str(config_path)}.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    _require_paths(cfg, ["features", "train_captions"])
    print(cfg.to_json())
    _, vocab, records, val_records, features = _load_training_data(cfg)
    label_counts = {}
    for rec in records:
        label_counts[rec.sentiment.short] = label_counts.get(rec.sentiment.short, 0) + 1
    print(f"corpus: {len(records)} records {label_counts}, vocab {len(vocab)}")

    mconfig = cfg.model_config(len(vocab))
    tconfig = cfg.train_config()
    out = _out_dir(cfg)
    ckpt_dir = cfg.paths.checkpoint_dir or str(out / "checkpoints")

    log_lines: list[str] = []

    def log_fn(line: str) -> None:
        print(line)
        log_lines.append(line)

    result = train(records, features, vocab, mconfig, tconfig,
                   val_records=val_records, checkpoint_dir=ckpt_dir, log_fn=log_fn)
    log_path = out / "train.log"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(f"# started {datetime.datetime.now().isoformat()}\n")
        fh.write("\n".join(log_lines) + "\n")
    print(f"best epoch: {result.best_epoch}")
    for kind, path in sorted(result.checkpoint_paths.items()):
        print(f"checkpoint[{kind}]: {path}")
    return EXIT_OK


def _generation_pairs_for(args, cfg: RunConfig, mconfig: ModelConfig,
                          features: D.FeatureStore) -> list[tuple[str, Sentiment | None]]:
    if cfg.paths.test_captions:
        image_ids = list(dict.fromkeys(
            r.image_id for r in D.read_caption_file(cfg.paths.test_captions)))
    else:
        image_ids = features.image_ids
    missing = [i for i in image_ids if i not in features]
    if missing:
        raise DataError(f"no features for image ids: {missing[:5]}")
    if args.contrastive:
        if not mconfig.variant.has_gate_sentiment:
            raise ConfigError("contrastive generation needs a sentiment-aware variant")
        sentiments = [Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE]
    elif args.sentiment:
        sentiments = [Sentiment.from_name(args.sentiment)]
    elif mconfig.variant.has_gate_sentiment:
        sentiments = [Sentiment.POSITIVE, Sentiment.NEGATIVE]
    else:
        sentiments = [None]
    return [(image_id, s) for image_id in image_ids for s in sentiments]


def write_generated_file(path: str | Path, lines: list[GeneratedLine]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            label = line.sentiment.short if line.sentiment is not None else "none"
            fh.write(f"{line.image_id}\t{label}\t{line.text}\t{line.log_prob:.6f}\n")


def read_generated_file(path: str | Path) -> list[GeneratedLine]:
    lines = []
    for row in D.read_caption_file_with_scores(path):
        image_id, label, text, log_prob = row
        sentiment = None if label == "none" else Sentiment.from_name(label)
        lines.append(GeneratedLine(image_id, sentiment, D.normalize(text), log_prob, []))
    return lines


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    _require_paths(cfg, ["features"])
    checkpoint = args.checkpoint or (cfg.paths.checkpoint_dir and
                                     str(Path(cfg.paths.checkpoint_dir) / "best.ckpt"))
    if not checkpoint:
        raise ConfigError("no checkpoint given (use --checkpoint or set "
                          "paths.checkpoint_dir)")
    params, mconfig, vocab = load_checkpoint(checkpoint)
    if args.variant and mconfig.variant is not Variant(args.variant):
        raise ConfigError(f"checkpoint variant {mconfig.variant.value!r} does not "
                          f"match requested --variant {args.variant!r}")
    features = D.load_features(cfg.paths.features)
    pairs = _generation_pairs_for(args, cfg, mconfig, features)
    lines = generate_captions(params, mconfig, vocab, features, pairs,
                              max_len=cfg.decode.max_len,
                              beam_width=cfg.decode.beam_width,
                              length_penalty=cfg.decode.length_penalty,
                              suppress_unk=args.no_unk or cfg.decode.suppress_unk)
    out_path = args.out or str(_out_dir(cfg) / "generated.tsv")
    write_generated_file(out_path, lines)
    if args.attention_dump:
        with open(args.attention_dump, "w", encoding="utf-8") as fh:
            for line in lines:
                label = line.sentiment.short if line.sentiment is not None else "none"
                for t, alpha in enumerate(line.attention):
                    grid = " ".join(f"{a:.8f}" for a in alpha)
                    fh.write(f"{line.image_id}\t{label}\t{t}\t{grid}\n")
    print(f"wrote {len(lines)} captions to {out_path}")
    return EXIT_OK


def _evaluation_rows(lines: list[GeneratedLine], ref_records, lexicon,
                     polarities: list[str], per_image_anps: bool):
    rows = []
    for polarity in polarities:
        wanted = Sentiment.from_name(polarity)
        cands = [line for line in lines if line.sentiment is wanted]
        if not cands:
            # sentiment-free candidates are evaluated against each
            # sentiment's reference set, as a sentiment-less baseline
            cands = [GeneratedLine(l.image_id, wanted, l.words, l.log_prob, l.attention)
                     for l in lines if l.sentiment is None]
        if not cands:
            raise DataError(f"no generated captions for sentiment {polarity!r}")
        report = evaluate_lines(cands, ref_records, lexicon, polarity=polarity,
                                per_image_anps=per_image_anps)
        rows.append((polarity, report))
    return rows


def reference_records_from_rows(rows: list[D.RawCaption]) -> list[D.CaptionRecord]:
    records = []
    for row in rows:
        sentiment = None if row.sentiment_label == "none" else Sentiment.from_name(row.sentiment_label)
        records.append(D.CaptionRecord(row.image_id, [], sentiment, row.text))
    return records


def cmd_evaluate(args) -> int:
    lines = read_generated_file(args.generated)
    ref_records = reference_records_from_rows(D.read_caption_file(args.references))
    lexicon = D.load_lexicon(args.lexicon)
    polarities = ["pos", "neg"] if args.sentiment in (None, "both") else [args.sentiment]
    rows = _evaluation_rows(lines, ref_records, lexicon, polarities,
                            per_image_anps=not args.corpus_anps)
    values = [(label.capitalize(), _report_values(rep)) for label, rep in rows]
    if len(values) > 1:
        values.append(("Avg", _average_rows([v for _, v in values])))
    table_rows = [[label] + format_metric_row(vals, raw=args.raw)
                  for label, vals in values]
    table = format_table(["Senti", *METRIC_COLUMNS], table_rows)
    print(table)
    for label, rep in rows:
        print(f"top adjectives [{label}]: {pad_adjectives(rep.top_adjectives)}")
        if rep.unk_tokens:
            print(f"unk tokens [{label}]: {rep.unk_tokens}")
    if args.out:
        Path(args.out).write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


def _train_and_eval_variant(payload: dict) -> tuple[str, dict[str, float], float]:
    """Train one ablation variant and evaluate it on the test set.

    Standalone so worker processes can run it; loads data from paths.
    """
    cfg = RunConfig.from_dict(payload["config"])
    cfg.model.variant = payload["variant"]
    rows, vocab, records, val_records, features = _load_training_data(cfg)
    mconfig = cfg.model_config(len(vocab))
    tconfig = cfg.train_config()
    ckpt_dir = Path(payload["out_dir"]) / payload["variant"]
    result = train(records, features, vocab, mconfig, tconfig,
                   val_records=val_records, checkpoint_dir=str(ckpt_dir))
    params = result.best_params
    test_rows = D.read_caption_file(cfg.paths.test_captions)
    ref_records = reference_records_from_rows(test_rows)
    lexicon = D.load_lexicon(cfg.paths.lexicon)
    image_ids = list(dict.fromkeys(r.image_id for r in test_rows))
    if mconfig.variant.has_gate_sentiment:
        pairs = [(i, s) for i in image_ids
                 for s in (Sentiment.POSITIVE, Sentiment.NEGATIVE)]
    else:
        pairs = [(i, None) for i in image_ids]
    lines = generate_captions(params, mconfig, vocab, features, pairs,
                              max_len=cfg.decode.max_len)
    reports = _evaluation_rows(lines, ref_records, lexicon, ["pos", "neg"],
                               per_image_anps=True)
    avg = _average_rows([_report_values(rep) for _, rep in reports])
    val_metric = result.logs[-1].val_metric if result.logs and result.logs[-1].val_metric is not None else float("nan")
    return payload["variant"], avg, val_metric


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    _require_paths(cfg, ["features", "train_captions", "test_captions", "lexicon"])
    out = _out_dir(cfg)
    payloads = [{"config": cfg.to_dict(), "variant": v.value, "out_dir": str(out)}
                for v in ABLATION_ORDER]
    workers = args.workers
    cap = os.environ.get(WORKERS_ENV)
    if cap is not None:
        workers = max(1, min(workers, int(cap)))
    results: dict[str, dict[str, float]] = {}
    if workers > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for variant, avg, _ in pool.map(_train_and_eval_variant, payloads):
                results[variant] = avg
    else:
        for payload in payloads:
            variant, avg, _ = _train_and_eval_variant(payload)
            results[variant] = avg
            print(f"trained {variant}")
    table_rows = [[VARIANT_LABELS[v]] + format_metric_row(results[v.value], raw=args.raw)
                  for v in ABLATION_ORDER]
    table = format_table(["Model", *METRIC_COLUMNS], table_rows)
    print(table)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


def gradcheck_model_config(variant: Variant = Variant.FULL) -> ModelConfig:
    return ModelConfig(regions=4, feature_dim=8, hidden=16, word_dim=10,
                       sentiment_dim=6, vocab_size=20, variant=variant,
                       dropout_rate=0.0, attention_hidden=6)


def run_gradcheck(eps: float = 1e-5, seed: int = 0,
                  variant: Variant = Variant.FULL,
                  mconfig: ModelConfig | None = None) -> dict[str, float]:
    """Finite-difference check of the combined loss on the tiny config."""
    if mconfig is None:
        mconfig = gradcheck_model_config(variant)
    rng = np.random.default_rng(seed)
    params = Parameters.initialize(mconfig, rng)
    tconfig = TrainConfig(epochs=1, dropout_rate=0.0)
    grid = rng.normal(size=(mconfig.regions, mconfig.feature_dim))
    tokens = [1] + [int(t) for t in rng.integers(4, mconfig.vocab_size, 3)] + [2]
    sentiment = (Sentiment(int(rng.integers(3)))
                 if mconfig.variant.has_gate_sentiment else None)
    examples = [(grid, tokens, sentiment)]

    def build(arrs):
        loss, _ = build_batch_loss(params, examples, mconfig, tconfig)
        return loss

    probe = {name: params.values[name] for name in sorted(params.trainable)}
    return T.finite_diff_report(build, probe, eps=eps)


def cmd_gradcheck(args) -> int:
    if args.dropout and args.dropout > 0:
        raise ConfigError("gradcheck needs determinism: dropout must stay disabled "
                          "(got --dropout {})".format(args.dropout))
    report = run_gradcheck(eps=args.eps, seed=args.seed if args.seed is not None else 0,
                           variant=Variant(args.variant) if args.variant else Variant.FULL)
    worst_param = max(report, key=report.get)
    worst = report[worst_param]
    ok = worst < GRADCHECK_TOLERANCE
    if args.json:
        print(json.dumps({"pass": ok, "worst": worst, "worst_param": worst_param,
                          "tolerance": GRADCHECK_TOLERANCE, "per_param": report},
                         indent=2, sort_keys=True))
    else:
        for name in sorted(report, key=report.get, reverse=True):
            print(f"{name}: {report[name]:.3e}")
        status = "PASS" if ok else "FAIL"
        print(f"gradcheck: {status} worst={worst:.3e} param={worst_param} "
              f"tolerance={GRADCHECK_TOLERANCE:.0e}")
    return EXIT_OK if ok else EXIT_INTERNAL


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moodcap",
                                     description="Sentiment-controllable attention "
                                                 "captioner: train, generate, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, train_flags=False, decode_flags=False):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--seed", type=int)
        if train_flags:
            p.add_argument("--epochs", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--lambda-l2", dest="lambda_l2", type=float)
            p.add_argument("--lambda-att", dest="lambda_att", type=float)
        if decode_flags:
            p.add_argument("--beam", type=int)
            p.add_argument("--max-len", dest="max_len", type=int)

    p = sub.add_parser("synth", help="generate the synthetic desk-scale corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config file")
    add_common(p, train_flags=True, decode_flags=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="decode captions from a checkpoint")
    add_common(p, decode_flags=True)
    p.add_argument("--checkpoint")
    p.add_argument("--sentiment", choices=["pos", "neg", "neutral"])
    p.add_argument("--contrastive", action="store_true",
                   help="emit all three sentiments per image")
    p.add_argument("--no-unk", action="store_true", help="suppress <unk> in output")
    p.add_argument("--out")
    p.add_argument("--attention-dump", help="write per-step attention grids here")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="score a generated-captions file")
    p.add_argument("--generated", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--sentiment", choices=["pos", "neg", "both"], default="both")
    p.add_argument("--raw", action="store_true", help="print raw values, not x100")
    p.add_argument("--corpus-anps", action="store_true",
                   help="match ANPs corpus-wide instead of per image")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare all five variants")
    add_common(p, train_flags=True, decode_flags=True)
    p.add_argument("--workers", type=int, default=1,
                   help=f"parallel trainings (capped by ${WORKERS_ENV})")
    p.add_argument("--raw", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--dropout", type=float, default=0.0,
                   help="must stay 0; gradcheck refuses nondeterminism")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _err(f"missing file: {exc}")
        return EXIT_USAGE
    except DataError as exc:
        _err(f"data error: {exc}")
        return EXIT_DATA
    except MoodcapError as exc:
        _err(f"error: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
