"""Single command-line entry point for augmentation, noise prep, training,
feature extraction, ABX scoring, band sweeps, and gradient checks.

Exit codes: 0 success, 1 usage error, 2 data/processing error.  Every run
writes a manifest recording the merged configuration and seed so it can be
reproduced bit-exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .abx import score_item_file, write_report_csv, write_report_json
from .audio import AudioBuffer, read_wav, resample, write_wav
from .bank import BandSpec, CANONICAL_BANDS, build_bank, resolve_chain_banks, save_bank
from .checkpoint import load_checkpoint, save_checkpoint
from .effects import (
    AddNoiseSpec,
    EffectChainSpec,
    apply_chain,
    chain_spec_from_json,
    preset_chain_doc,
    sample_chain,
)
from .errors import ChainError, CpclabError
from .model import CpcConfig, extract_features, grad_check_all_variants
from .rng import RngStream
from .synth import (
    ToneWorld,
    eval_items,
    noise_fixture_dir,
    training_corpus,
    write_item_file,
)
from .featio import write_features
from .train import train
from .views import AugPlacement, make_views

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

# rng namespaces for corpus/eval synthesis, distinct from train's internals
_NS_SYNTH_CORPUS, _NS_SYNTH_EVAL, _NS_SYNTH_NOISE = 1000, 2000, 3000


class UsageError(Exception):
    """Bad flag combination detected after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CPCLAB_THREADS", "1")))
    except ValueError:
        return 1


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    sub.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="worker threads; outputs are identical for any value",
    )


def _write_manifest(path: Path, subcommand: str, ns, inputs, outputs, started, elapsed) -> None:
    config = {
        k: v for k, v in vars(ns).items() if k not in ("func", "config") and not k.startswith("_")
    }
    doc = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": getattr(ns, "seed", None),
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started_utc": started,
        "wall_clock_seconds": elapsed,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


class _Run:
    """Tracks wall clock and writes the manifest on success."""

    def __init__(self, subcommand: str, ns, manifest_path: Path):
        self.subcommand = subcommand
        self.ns = ns
        self.manifest_path = Path(manifest_path)
        self.inputs: list = []
        self.outputs: list = []
        self.started = datetime.now(timezone.utc).isoformat()
        self.t0 = time.monotonic()

    def finish(self) -> None:
        _write_manifest(
            self.manifest_path,
            self.subcommand,
            self.ns,
            self.inputs,
            self.outputs,
            self.started,
            time.monotonic() - self.t0,
        )


def _load_chain_spec(ns, sample_rate: int) -> EffectChainSpec:
    if getattr(ns, "chain", None):
        doc = json.loads(Path(ns.chain).read_text())
    elif getattr(ns, "preset", None):
        doc = preset_chain_doc(ns.preset, bank_path=getattr(ns, "noise_dir", None))
    else:
        raise UsageError("need --chain FILE or --preset EFFECTS")
    spec = chain_spec_from_json(doc)
    return resolve_chain_banks(
        spec, sample_rate, threads=ns.threads, bank_dir_override=getattr(ns, "noise_dir", None)
    )


def _parse_band(text):
    if text in (None, "", "none"):
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise UsageError(f"--band expects LOW,HIGH, got {text!r}")
    return BandSpec(float(parts[0]), float(parts[1]))


def _build_config(ns) -> CpcConfig:
    overrides = {}
    if getattr(ns, "context_layers", None):
        overrides["context_layers"] = ns.context_layers
    if getattr(ns, "predictor_mode", None):
        overrides["predictor_mode"] = ns.predictor_mode
    if getattr(ns, "batch_size", None):
        overrides["batch_size"] = ns.batch_size
    if getattr(ns, "steps_per_epoch", None):
        overrides["steps_per_epoch"] = ns.steps_per_epoch
    if ns.profile == "tiny":
        return CpcConfig.tiny(**overrides)
    return CpcConfig(**overrides)


def _load_corpus(ns, config: CpcConfig):
    if ns.synthetic:
        world = ToneWorld(sample_rate=config.sample_rate)
        return training_corpus(world, RngStream(ns.seed).child(_NS_SYNTH_CORPUS))
    if not ns.corpus:
        raise UsageError("need --corpus DIR or --synthetic")
    paths = sorted(Path(ns.corpus).glob("*.wav"))
    if not paths:
        raise CpclabError(f"no WAV files in {ns.corpus}")
    return [resample(read_wav(p), config.sample_rate) for p in paths]


# ---------------------------------------------------------------------------
# subcommands


def cmd_augment(ns) -> int:
    file_mode = bool(ns.in_path)
    raw_mode = bool(ns.in_raw)
    if file_mode == raw_mode:
        raise UsageError("use exactly one of --in (file mode) or --in-raw (batch mode)")
    rng = RngStream(ns.seed)

    if file_mode:
        if not ns.out_path:
            raise UsageError("file mode needs --out")
        run = _Run("augment", ns, Path(str(ns.out_path) + ".manifest.json"))
        buf = read_wav(ns.in_path)
        spec = _load_chain_spec(ns, buf.sample_rate)
        view_index = 0 if ns.view == "past" else 1
        chain = sample_chain(spec, len(buf), buf.sample_rate, rng.child(ns.item, view_index))
        out = apply_chain(buf, chain)
        write_wav(ns.out_path, out, format=ns.format)
        run.inputs.append(ns.in_path)
        run.outputs.append(ns.out_path)
        run.finish()
        return EXIT_OK

    if not (ns.out_past and ns.out_future):
        raise UsageError("batch mode needs --out-past and --out-future")
    if ns.rows < 1:
        raise UsageError("--rows must be >= 1")
    run = _Run("augment", ns, Path(str(ns.out_past) + ".manifest.json"))
    flat = np.fromfile(ns.in_raw, dtype="<f4")
    if flat.size % ns.rows:
        raise CpclabError(
            f"{ns.in_raw}: {flat.size} floats do not divide into {ns.rows} rows"
        )
    rows = flat.reshape(ns.rows, -1).astype(np.float64)
    batch = [AudioBuffer(row, ns.rate) for row in rows]
    spec = _load_chain_spec(ns, ns.rate)
    views = make_views(batch, AugPlacement(ns.placement), spec, rng, threads=ns.threads)
    past = np.stack([v.past.samples for v in views]).astype("<f4")
    future = np.stack([v.future.samples for v in views]).astype("<f4")
    past.tofile(ns.out_past)
    future.tofile(ns.out_future)
    run.inputs.append(ns.in_raw)
    run.outputs += [ns.out_past, ns.out_future]
    run.finish()
    return EXIT_OK


def cmd_noise_prep(ns) -> int:
    out_dir = Path(ns.out_dir)
    run = _Run("noise-prep", ns, out_dir / "manifest.json")
    band = _parse_band(ns.band)
    bank = build_bank(ns.in_dir, band, ns.rate, threads=ns.threads)
    save_bank(bank, out_dir)
    run.inputs.append(ns.in_dir)
    run.outputs.append(out_dir)
    run.finish()
    print(f"prepared {len(bank)} segments -> {out_dir}")
    return EXIT_OK


def cmd_train(ns) -> int:
    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = _Run("train", ns, out_dir / "manifest.json")
    config = _build_config(ns)
    corpus = _load_corpus(ns, config)
    if getattr(ns, "noise_dir", None) == "synthetic":
        ns.noise_dir = str(
            noise_fixture_dir(
                out_dir / "noise", RngStream(ns.seed).child(_NS_SYNTH_NOISE), config.sample_rate
            )
        )
    spec = _load_chain_spec(ns, config.sample_rate)
    model, history = train(
        config,
        corpus,
        spec,
        AugPlacement(ns.placement),
        seed=ns.seed,
        steps=ns.steps,
        threads=ns.threads,
    )
    ckpt = out_dir / "checkpoint.cpc"
    save_checkpoint(ckpt, model, seed=ns.seed, step=ns.steps)
    history_doc = [
        {"loss": r.loss, "per_step_accuracy": list(r.per_step_accuracy)} for r in history
    ]
    (out_dir / "history.json").write_text(json.dumps(history_doc) + "\n")
    run.outputs += [ckpt, out_dir / "history.json"]
    run.finish()
    if history:
        print(f"trained {ns.steps} steps; final loss {history[-1].loss:.4f} -> {ckpt}")
    return EXIT_OK


def cmd_features(ns) -> int:
    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = _Run("features", ns, out_dir / "manifest.json")
    model, _meta = load_checkpoint(ns.checkpoint)
    config = model.config
    if ns.synthetic_eval:
        world = ToneWorld(sample_rate=config.sample_rate)
        utts, items = eval_items(world, RngStream(ns.seed).child(_NS_SYNTH_EVAL))
        write_item_file(out_dir_items := out_dir / "eval.item", items)
        waves = sorted(utts.items())
        run.outputs.append(out_dir_items)
    else:
        if not ns.in_dir:
            raise UsageError("need --in DIR or --synthetic-eval")
        paths = sorted(Path(ns.in_dir).glob("*.wav"))
        if not paths:
            raise CpclabError(f"no WAV files in {ns.in_dir}")
        waves = [(p.stem, resample(read_wav(p), config.sample_rate)) for p in paths]
        run.inputs.append(ns.in_dir)
    for utt_id, wave in waves:
        feats = extract_features(model, wave, level=ns.level)
        write_features(out_dir, utt_id, feats)
    run.outputs.append(out_dir)
    run.finish()
    print(f"wrote {len(waves)} feature files -> {out_dir}")
    return EXIT_OK


def cmd_abx(ns) -> int:
    out_path = Path(ns.out)
    run = _Run("abx", ns, Path(str(out_path) + ".manifest.json"))
    report = score_item_file(
        ns.features, ns.items, ns.mode, normalize=ns.normalize, threads=ns.threads
    )
    write_report_json(report, out_path)
    run.outputs.append(out_path)
    if ns.csv:
        write_report_csv(report, ns.csv)
        run.outputs.append(ns.csv)
    run.inputs += [ns.features, ns.items]
    run.finish()
    print(f"abx {ns.mode} error_rate={report.error_rate:.6f} ({report.n_triples} triples)")
    return EXIT_OK


def cmd_sweep_bands(ns) -> int:
    out_dir = Path(ns.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = _Run("sweep-bands", ns, out_dir / "manifest.json")
    config = _build_config(ns)
    corpus = _load_corpus(ns, config)
    world = ToneWorld(sample_rate=config.sample_rate)
    utts, items = eval_items(world, RngStream(ns.seed).child(_NS_SYNTH_EVAL))
    items_path = out_dir / "eval.item"
    write_item_file(items_path, items)

    bands = [None] + [BandSpec(lo, hi) for lo, hi in CANONICAL_BANDS]
    results = []
    for band in bands:
        label = "none" if band is None else f"{band.low_hz:g}-{band.high_hz:g}"
        bank = build_bank(ns.noise_dir, band, config.sample_rate, threads=ns.threads)
        spec = EffectChainSpec(
            (AddNoiseSpec(bank=bank, band=None if band is None else band.as_tuple()),)
        )
        model, history = train(
            config,
            corpus,
            spec,
            AugPlacement(ns.placement),
            seed=ns.seed,
            steps=ns.steps,
            threads=ns.threads,
        )
        feat_dir = out_dir / f"features_{label}"
        for utt_id, wave in sorted(utts.items()):
            write_features(feat_dir, utt_id, extract_features(model, wave, level="c"))
        row = {"band": label, "final_loss": history[-1].loss if history else None}
        for mode in ("within", "across"):
            report = score_item_file(feat_dir, items_path, mode, threads=ns.threads)
            row[f"{mode}_error"] = report.error_rate
        results.append(row)
        print(
            f"band {label}: within {row['within_error']:.4f} "
            f"across {row['across_error']:.4f}"
        )

    (out_dir / "sweep.json").write_text(json.dumps(results, indent=2) + "\n")
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["band", "within_error", "across_error", "final_loss"])
        writer.writeheader()
        writer.writerows(results)
    run.inputs.append(ns.noise_dir)
    run.outputs += [out_dir / "sweep.json", out_dir / "sweep.csv"]
    run.finish()
    return EXIT_OK


def cmd_grad_check(ns) -> int:
    results = grad_check_all_variants(seed=ns.seed, eps=ns.eps)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        print(f"{name}: max relative error {err:.3e}")
    ok = worst < ns.threshold
    print(f"worst {worst:.3e} {'<' if ok else '>='} threshold {ns.threshold:g}")
    if ns.out:
        Path(ns.out).write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_DATA


# ---------------------------------------------------------------------------
# parser


def _build_parser():
    parser = _Parser(prog="cpclab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cpclab {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    subs = {}

    sub = subparsers.add_parser("augment", help="apply a sampled effect chain")
    sub.add_argument("--in", dest="in_path", help="input WAV (file mode)")
    sub.add_argument("--out", dest="out_path", help="output WAV (file mode)")
    sub.add_argument("--in-raw", help="float32 row-major batch (batch mode)")
    sub.add_argument("--rows", type=int, default=0, help="row count for --in-raw")
    sub.add_argument("--rate", type=int, default=16000, help="sample rate for --in-raw")
    sub.add_argument("--out-past", help="float32 past views (batch mode)")
    sub.add_argument("--out-future", help="float32 future views (batch mode)")
    sub.add_argument(
        "--placement",
        default=AugPlacement.PAST_ONLY.value,
        choices=[p.value for p in AugPlacement],
    )
    sub.add_argument("--chain", help="chain spec JSON file")
    sub.add_argument("--preset", help="'+'-joined effects, e.g. pitch+add+reverb")
    sub.add_argument("--noise-dir", help="noise bank directory for the add effect")
    sub.add_argument("--item", type=int, default=0, help="item index in the rng path")
    sub.add_argument("--view", default="past", choices=["past", "future"])
    sub.add_argument("--format", default="float32", choices=["float32", "int16"])
    _add_common(sub)
    sub.set_defaults(func=cmd_augment)
    subs["augment"] = sub

    sub = subparsers.add_parser("noise-prep", help="band-filter a noise directory")
    sub.add_argument("--in", dest="in_dir", required=True)
    sub.add_argument("--out", dest="out_dir", required=True)
    sub.add_argument("--band", default=None, help="LOW,HIGH in Hz (omit for none)")
    sub.add_argument("--rate", type=int, default=16000)
    _add_common(sub)
    sub.set_defaults(func=cmd_noise_prep)
    subs["noise-prep"] = sub

    sub = subparsers.add_parser("train", help="train a CPC model")
    sub.add_argument("--corpus", help="directory of training WAVs")
    sub.add_argument("--synthetic", action="store_true", help="use the tone corpus")
    sub.add_argument("--noise-dir", help="noise bank dir, or 'synthetic'")
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--chain", help="chain spec JSON file")
    sub.add_argument("--preset", default="pitch+add+reverb")
    sub.add_argument(
        "--placement",
        default=AugPlacement.PAST_ONLY.value,
        choices=[p.value for p in AugPlacement],
    )
    sub.add_argument("--profile", default="tiny", choices=["tiny", "full"])
    sub.add_argument("--steps", type=int, default=2000)
    sub.add_argument("--context-layers", type=int, choices=[1, 2, 3])
    sub.add_argument("--predictor-mode", choices=["multi_head", "per_step"])
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--steps-per-epoch", type=int)
    _add_common(sub)
    sub.set_defaults(func=cmd_train)
    subs["train"] = sub

    sub = subparsers.add_parser("features", help="extract features with a checkpoint")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--in", dest="in_dir", help="directory of WAVs")
    sub.add_argument(
        "--synthetic-eval", action="store_true", help="generate held-out tone items"
    )
    sub.add_argument("--out", dest="out_dir", required=True)
    sub.add_argument("--level", default="c", choices=["z", "c"])
    _add_common(sub)
    sub.set_defaults(func=cmd_features)
    subs["features"] = sub

    sub = subparsers.add_parser("abx", help="score features against an item file")
    sub.add_argument("--features", required=True)
    sub.add_argument("--items", required=True)
    sub.add_argument("--mode", required=True, choices=["within", "across"])
    sub.add_argument("--normalize", default="path", choices=["path", "max_len"])
    sub.add_argument("--out", default="abx_report.json")
    sub.add_argument("--csv")
    _add_common(sub)
    sub.set_defaults(func=cmd_abx)
    subs["abx"] = sub

    sub = subparsers.add_parser(
        "sweep-bands", help="train+abx once per canonical noise band"
    )
    sub.add_argument("--noise-dir", required=True)
    sub.add_argument("--out-dir", required=True)
    sub.add_argument("--corpus")
    sub.add_argument("--synthetic", action="store_true", default=True)
    sub.add_argument(
        "--placement",
        default=AugPlacement.PAST_ONLY.value,
        choices=[p.value for p in AugPlacement],
    )
    sub.add_argument("--profile", default="tiny", choices=["tiny", "full"])
    sub.add_argument("--steps", type=int, default=300)
    sub.add_argument("--context-layers", type=int, choices=[1, 2, 3])
    sub.add_argument("--predictor-mode", choices=["multi_head", "per_step"])
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--steps-per-epoch", type=int)
    _add_common(sub)
    sub.set_defaults(func=cmd_sweep_bands)
    subs["sweep-bands"] = sub

    sub = subparsers.add_parser("grad-check", help="finite-difference gradient check")
    sub.add_argument("--tiny", action="store_true", help="tiny config (always on)")
    sub.add_argument("--eps", type=float, default=1e-4)
    sub.add_argument("--threshold", type=float, default=1e-4)
    sub.add_argument("--out", help="write per-variant errors as JSON")
    _add_common(sub)
    sub.set_defaults(func=cmd_grad_check)
    subs["grad-check"] = sub

    return parser, subs


def _extract_config(argv: list[str]):
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            raise UsageError("--config needs a file argument")
        path = argv[i + 1]
        return path, argv[:i] + argv[i + 2 :]
    return None, argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config_path, argv = _extract_config(argv)
        parser, subs = _build_parser()
        if config_path:
            doc = json.loads(Path(config_path).read_text())
            for name, sub in subs.items():
                defaults = dict(doc.get("global", {}))
                defaults.update(doc.get(name.replace("-", "_"), {}))
                defaults.update(doc.get(name, {}))
                if defaults:
                    sub.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except UsageError as exc:
        print(f"cpclab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CpclabError as exc:
        print(f"cpclab: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"cpclab: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
