"""
Command-line interface.

    python -m captrfuse synth-data --seed 7 --out data/
    python -m captrfuse pretrain-captioner --data data/ --out runs/cap
    python -m captrfuse train-classifier --data data/ --ckpt runs/cap/captioner --mode EF --out runs/ef
    python -m captrfuse evaluate --data data/ --ckpt runs/ef/classifier --out runs/ef/test
    python -m captrfuse analyze --predictions runs/ef/test/predictions.jsonl --out runs/ef/analysis
    python -m captrfuse gradcheck --module all
    python -m captrfuse decode --ckpt runs/ef/classifier --image data/images/test-0.ten --target alice --show-aux
    python -m captrfuse serve --ckpt runs/ef/classifier

Exit codes: 0 success, 1 invalid configuration or usage, 2 runtime failure.
"""
import argparse
import json
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

from pydantic import ValidationError

from captrfuse import __version__
from captrfuse.config import TrainConfig, settings
from captrfuse.core.tensor import precision
from captrfuse.exceptions import ConfigError, ParameterError
from captrfuse.logger import configure_logging, log
from captrfuse.nn.classifier import FusionMode
from captrfuse.services import evaluation, synthetic
from captrfuse.services.checkpoint import load_checkpoint
from captrfuse.services.datasets import SPLITS, load_caption_pairs, load_image, load_split, load_vocabulary
from captrfuse.services.gradcheck_suites import suite_manager
from captrfuse.services.inference_service import InferenceService
from captrfuse.services.trainer import decode_captions, pretrain_captioner, run_seeds, train_classifier

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2

MODES = [FusionMode.EF.value, FusionMode.LF.value, FusionMode.PAIR_QA.value, FusionMode.TEXT.value]


class UsageError(Exception):
    """Raised instead of argparse's own exit so usage problems map to exit 1."""


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage()
        raise UsageError(message)


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def _echo_config(out: Path, config: Optional[TrainConfig], **extra: Any) -> None:
    """Resolved configuration next to the command's outputs."""
    payload: Dict[str, Any] = {} if config is None else config.model_dump(mode="json")
    payload.update({k: str(v) if isinstance(v, Path) else v for k, v in extra.items()})
    _write_json(out / "config.json", payload)


def _train_config(args) -> TrainConfig:
    return TrainConfig.load(args.config, seed=args.seed)


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def cmd_synth_data(args) -> int:
    spec = synthetic.SyntheticSpec()
    if args.config is not None:
        try:
            spec = synthetic.SyntheticSpec.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read {args.config}: {e}") from e
    data = synthetic.generate_synthetic(args.seed, spec)
    synthetic.write_synthetic(data, args.out)
    _echo_config(args.out, None, seed=args.seed, **spec.model_dump(mode="json"))
    print(f"text-only Bayes accuracy: {synthetic.text_only_bayes_accuracy():.4f}")
    return EXIT_OK


def cmd_pretrain_captioner(args) -> int:
    config = _train_config(args)
    vocab = load_vocabulary(args.data)
    pairs = load_caption_pairs(args.data)
    _echo_config(args.out, config, data=args.data)
    checkpoint = pretrain_captioner(pairs, config, vocab, out_dir=args.out)
    print(f"token accuracy: {checkpoint.metrics['token_accuracy']:.4f}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    config = _train_config(args)
    mode = FusionMode(args.mode)
    captioner_ckpt = load_checkpoint(args.ckpt)
    train, labels = load_split(args.data, "train")
    dev = load_split(args.data, "dev")[0] if (Path(args.data) / "dev.jsonl").exists() else None
    _echo_config(args.out, config, data=args.data, ckpt=args.ckpt, mode=mode.value, seeds=args.seeds)

    if args.seeds > 1:
        test, _ = load_split(args.data, "test")
        seeds = list(range(config.seed, config.seed + args.seeds))
        summary = run_seeds(train, dev or [], test, captioner_ckpt, config, mode, labels, seeds)
        _write_json(args.out / "seeds.json", summary)
        print(f"{mode.value} test accuracy over {len(seeds)} seeds: {summary['mean']:.4f} ± {summary['std']:.4f}")
        return EXIT_OK

    checkpoint = train_classifier(train, captioner_ckpt, config, mode, labels, dev, out_dir=args.out)
    _write_json(args.out / "training.json", checkpoint.metrics)
    print(f"selected epoch {checkpoint.metrics['best_epoch']} accuracy {checkpoint.metrics['selection_accuracy']:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    classifier = checkpoint.classifier()
    if args.mode is not None and FusionMode(args.mode) is not classifier.mode:
        raise ConfigError(f"checkpoint was trained in {classifier.mode.value} mode, not {args.mode}")
    samples, labels = load_split(args.data, args.split)
    if tuple(labels) != checkpoint.labels:
        raise ConfigError(f"split labels {list(labels)} differ from checkpoint labels {list(checkpoint.labels)}")
    _echo_config(args.out, checkpoint.config, data=args.data, ckpt=args.ckpt, split=args.split, bins=args.bins)

    with precision(checkpoint.config.dtype):
        captions = decode_captions(checkpoint.captioner(), samples) if classifier.mode.uses_image else {}
        records = evaluation.predict_records(classifier, samples, captions)
    metrics = evaluation.write_evaluation(records, args.out, checkpoint.labels, args.bins)
    print(
        f"accuracy {metrics['accuracy']:.4f} macro_f1 {metrics['macro_f1']:.4f} "
        f"weighted_f1 {metrics['weighted_f1']:.4f} ece {metrics['ece']:.4f}"
    )
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.predictions is not None:
        records = evaluation.read_predictions(args.predictions)
    elif args.ckpt is not None and args.data is not None:
        checkpoint = load_checkpoint(args.ckpt)
        classifier = checkpoint.classifier()
        samples, _ = load_split(args.data, args.split)
        with precision(checkpoint.config.dtype):
            captions = decode_captions(checkpoint.captioner(), samples) if classifier.mode.uses_image else {}
            records = evaluation.predict_records(classifier, samples, captions)
    else:
        raise UsageError("analyze needs --predictions, or --ckpt with --data")
    if not records:
        raise ConfigError("no prediction records to analyze")
    _echo_config(
        args.out,
        None,
        predictions=args.predictions,
        ckpt=args.ckpt,
        data=args.data,
        bin_width=args.bin_width,
        bins=args.bins,
        temperature=args.temperature,
    )
    analysis = evaluation.write_analysis(records, args.out, args.bin_width, args.bins, args.temperature)
    line = f"ece {analysis['ece']:.4f} mce {analysis['mce']:.4f}"
    if args.temperature is not None:
        line += f" tempered_ece {analysis['tempered_ece']:.4f} (T={args.temperature})"
    print(line)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = suite_manager.run(args.module, seed=args.seed)
    summary = suite_manager.summary(results)
    if args.out is not None:
        _write_json(args.out / "gradcheck.json", summary)
    for suite, cases in summary.items():
        for case, report in cases.items():
            status = "ok" if report["passed"] else "FAIL"
            print(f"{suite}.{case}: {status} checked={report['checked']} max_error={report['max_error']:.2e}")
    return EXIT_OK if suite_manager.passed(results) else EXIT_FAILURE


def cmd_decode(args) -> int:
    if args.show_aux and not args.target:
        raise UsageError("--show-aux needs --target")
    service = InferenceService.from_checkpoint(args.ckpt)
    response = service.decode(load_image(args.image))
    print(response.caption)
    if args.show_aux:
        print(service.auxiliary_sentence(args.target, response.token_ids))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    settings.checkpoint_dir = args.ckpt
    log.info(f"Starting server on {args.host}:{args.port}")
    uvicorn.run("captrfuse.main:app", host=args.host, port=args.port, log_level=settings.log_level.lower())
    return EXIT_OK


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------
def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="captrfuse", description="Image-to-text fusion for target sentiment classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def command(name: str, handler: Callable, help: str) -> ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.set_defaults(handler=handler)
        return p

    p = command("synth-data", cmd_synth_data, "write the synthetic joint-dependency dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="JSON overrides for the generator")

    p = command("pretrain-captioner", cmd_pretrain_captioner, "phase 1: train the captioner")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)

    p = command("train-classifier", cmd_train_classifier, "phase 2: train the classifier with a frozen captioner")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True, help="captioner checkpoint directory")
    p.add_argument("--mode", choices=MODES, default=FusionMode.EF.value)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=1, help="repeat over N seeds and report test mean/std")

    p = command("evaluate", cmd_evaluate, "metrics of a classifier checkpoint on one split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bins", type=int, default=10)

    p = command("analyze", cmd_analyze, "caption-length bins and calibration")
    p.add_argument("--predictions", type=Path, help="predictions.jsonl from evaluate")
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bin-width", type=int, default=5)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--temperature", type=float)

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient verification")
    p.add_argument("--module", choices=suite_manager.names() + ["all"], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = command("decode", cmd_decode, "caption one image")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--target", help="target phrase for --show-aux")
    p.add_argument("--show-aux", action="store_true", help="also print the auxiliary sentence")

    p = command("serve", cmd_serve, "serve a checkpoint over HTTP")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--host", default=settings.host)
    p.add_argument("--port", type=int, default=settings.port)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"captrfuse: error: {e}")
        return EXIT_INVALID
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging()
    try:
        return args.handler(args)
    except UsageError as e:
        parser.print_usage()
        print(f"captrfuse: error: {e}")
        return EXIT_INVALID
    except (ConfigError, ParameterError, ValidationError) as e:
        log.error(f"Invalid configuration: {e}")
        return EXIT_INVALID
    except Exception as e:
        log.exception(f"{args.command} failed: {e}")
        return EXIT_FAILURE
