"""Command-line interface wiring the pipeline end to end.

    melforge <degrade|featurize|build-dict|train|enhance|eval|verify|plot>
             --config path [flags]

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config
from .data import (
    ManifestEntry,
    SplitSpec,
    build_pairs,
    iter_alignments,
    load_manifest,
    save_manifest,
    split,
)
from .degrade import DegradationSpec, NoiseBank, RirBank
from .diffusion import NoiseSchedule
from .dsp import (
    compute_norm_stats,
    extract_log_mel,
    load_mel,
    load_norm_stats,
    mel_filterbank,
    normalize,
    read_wav,
    resample,
    save_mel,
    save_norm_stats,
)
from .enhance import enhance_corpus
from .errors import ConfigError, DataError, MelforgeError
from .evaluate import evaluate
from .model import UNetConfig, load_checkpoint
from .textcond import build_dict, load_phone_dict, save_phone_dict
from .train import train

log = logging.getLogger("melforge")


def _schedule(config: RunConfig) -> NoiseSchedule:
    s = config.schedule
    return NoiseSchedule(s.beta0, s.beta1, s.t_min)


def _unet_config(config: RunConfig) -> UNetConfig:
    m = config.model
    return UNetConfig(
        in_channels=3,
        depth=m.depth,
        channels=tuple(m.channels),
        time_embed_dim=m.time_embed_dim,
        groupnorm_groups=m.groupnorm_groups,
    )


def _split_spec(config: RunConfig) -> SplitSpec:
    s = config.split
    return SplitSpec(s.validation_ids, s.validation_fraction, s.seed)


def _workdir(config: RunConfig) -> Path:
    wd = Path(config.paths.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _manifest_path(config: RunConfig, args) -> Path:
    path = getattr(args, "manifest", None) or config.paths.manifest
    if path is None:
        raise ConfigError("no manifest: set paths.manifest in the config or pass --manifest")
    return Path(path)


def _echo_config(config: RunConfig, out_dir: Path) -> None:
    save_config(out_dir / "config_effective.json", config)


def _degradation_spec(config: RunConfig) -> DegradationSpec:
    d = config.degradation
    return DegradationSpec(
        snr_db_range=tuple(d.snr_db_range),
        clip_quantile_range=tuple(d.clip_quantile_range),
        cutoff_hz_range=tuple(d.cutoff_hz_range),
        stage_probabilities=tuple(d.stage_probabilities),
    )


def cmd_degrade(config: RunConfig, args) -> int:
    manifest_path = _manifest_path(config, args)
    entries = load_manifest(manifest_path)
    wd = _workdir(config)
    d = config.degradation
    noise_bank = (
        NoiseBank.from_dir(d.noise_dir, config.features.sample_rate) if d.noise_dir else None
    )
    rir_bank = (
        RirBank.from_dir(d.rir_dir, config.features.sample_rate) if d.rir_dir else None
    )
    seed = config.resolve_seed(args.seed)
    updated = build_pairs(
        entries,
        _degradation_spec(config),
        seed,
        config.features,
        wd,
        manifest_path.parent,
        noise_bank=noise_bank,
        rir_bank=rir_bank,
        jobs=args.jobs,
    )
    out_manifest = wd / "manifest.jsonl"
    save_manifest(out_manifest, updated)
    _echo_config(config, wd)
    log.info("degraded %d/%d utterances -> %s", len(updated), len(entries), out_manifest)
    return 0


def cmd_featurize(config: RunConfig, args) -> int:
    manifest_path = _manifest_path(config, args)
    entries = load_manifest(manifest_path)
    wd = _workdir(config)
    feats = config.features
    fb = mel_filterbank(feats.n_fft, feats.sample_rate, feats.n_mels, feats.fmin, feats.fmax)
    mel_dir = wd / "mels"
    mel_dir.mkdir(parents=True, exist_ok=True)
    updated = []
    for entry in entries:
        fields = dict(entry.__dict__)
        for kind, wav_field, mel_field in (
            ("clean", "clean_wav", "clean_mel"),
            ("degraded", "degraded_wav", "degraded_mel"),
        ):
            wav_path = fields.get(wav_field)
            if wav_path is None:
                continue
            audio = resample(read_wav(wav_path), feats.sample_rate)
            mel = extract_log_mel(audio, feats.n_fft, feats.hop, fb, feats.log_floor)
            out = mel_dir / f"{entry.utt_id}.{kind}.mel"
            save_mel(out, mel)
            fields[mel_field] = str(out)
        updated.append(ManifestEntry(**fields))
    out_manifest = wd / "manifest.jsonl"
    save_manifest(out_manifest, updated)

    train_entries, _ = split(updated, _split_spec(config))
    corpus = []
    for entry in train_entries:
        for mel_field in ("clean_mel", "degraded_mel"):
            path = getattr(entry, mel_field)
            if path is not None:
                corpus.append(load_mel(path))
    stats = compute_norm_stats(corpus)
    save_norm_stats(wd / "norm_stats.json", stats)
    _echo_config(config, wd)
    log.info(
        "featurized %d utterances; stats mean=%.4f scale=%.4f", len(updated), stats.mean, stats.scale
    )
    return 0


def cmd_build_dict(config: RunConfig, args) -> int:
    manifest_path = _manifest_path(config, args)
    entries = load_manifest(manifest_path)
    wd = _workdir(config)
    stats = load_norm_stats(wd / "norm_stats.json")
    train_entries, _ = split(entries, _split_spec(config))
    corpus = [
        (normalize(mel, stats), alignment)
        for mel, alignment in iter_alignments(train_entries)
    ]
    if not corpus:
        raise DataError("no aligned utterances with clean mels in the training split")
    phone_dict = build_dict(corpus)
    save_phone_dict(wd / "phone_dict.json", phone_dict)
    _echo_config(config, wd)
    log.info("built dictionary with %d phones from %d utterances", len(phone_dict.phones), len(corpus))
    return 0


def cmd_train(config: RunConfig, args) -> int:
    manifest_path = _manifest_path(config, args)
    entries = load_manifest(manifest_path)
    wd = _workdir(config)
    stats = load_norm_stats(wd / "norm_stats.json")
    phone_dict = None
    if not args.no_text:
        phone_dict = load_phone_dict(wd / "phone_dict.json")
    train_entries, _ = split(entries, _split_spec(config))
    seed = config.resolve_seed(args.seed)
    out_dir = Path(args.output) if args.output else wd / ("train_notext" if args.no_text else "train")

    resume_model = resume_adam = None
    start_epoch = 0
    if args.resume:
        resume_model, meta, resume_adam = load_checkpoint(args.resume, _unet_config(config))
        start_epoch = int(meta.get("epoch", 0))
        log.info("resuming from %s at epoch %d", args.resume, start_epoch)

    result = train(
        _unet_config(config),
        train_entries,
        stats,
        _schedule(config),
        config.training,
        out_dir,
        seed,
        phone_dict=phone_dict,
        hop_seconds=config.features.hop_seconds,
        resume_model=resume_model,
        resume_adam=resume_adam,
        start_epoch=start_epoch,
    )
    _echo_config(config, out_dir)
    log.info("trained %d steps, final loss %.6g -> %s", result.steps, result.final_loss, result.checkpoint_path)
    return 0


def cmd_enhance(config: RunConfig, args) -> int:
    manifest_path = _manifest_path(config, args)
    entries = load_manifest(manifest_path)
    if args.split != "all":
        train_entries, val_entries = split(entries, _split_spec(config))
        entries = train_entries if args.split == "train" else val_entries
    wd = _workdir(config)
    stats = load_norm_stats(wd / "norm_stats.json")
    phone_dict = None
    if not args.no_text:
        phone_dict = load_phone_dict(wd / "phone_dict.json")
    model, meta, _ = load_checkpoint(args.checkpoint, _unet_config(config))
    if meta.get("text_conditioning") is not None and meta["text_conditioning"] != (not args.no_text):
        log.warning(
            "checkpoint was trained with text_conditioning=%s but enhance runs with %s",
            meta["text_conditioning"],
            not args.no_text,
        )
    out_dir = Path(args.output) if args.output else wd / "enhanced"
    seed = config.resolve_seed(args.seed)
    updated, report = enhance_corpus(
        model,
        _schedule(config),
        entries,
        stats,
        out_dir,
        seed,
        n_steps=args.steps if args.steps is not None else config.schedule.n_steps,
        solver=args.solver or config.schedule.solver,
        phone_dict=phone_dict,
    )
    save_manifest(out_dir / "manifest.jsonl", updated)
    (out_dir / "enhance_report.json").write_text(
        json.dumps(
            {
                "n_steps": report.n_steps,
                "solver": report.solver,
                "seed": report.seed,
                "text_conditioning": report.text_conditioning,
                "enhanced": report.enhanced,
                "errors": report.errors,
            },
            indent=2,
        )
    )
    _echo_config(config, out_dir)
    if report.errors:
        log.warning("%d utterances failed enhancement", len(report.errors))
        return 3
    log.info("enhanced %d utterances -> %s", len(report.enhanced), out_dir)
    return 0


def cmd_eval(config: RunConfig, args) -> int:
    entries = load_manifest(_manifest_path(config, args))
    if args.enhanced_manifest:
        enhanced = {e.utt_id: e for e in load_manifest(args.enhanced_manifest)}
        merged = []
        for entry in entries:
            other = enhanced.get(entry.utt_id)
            if other is not None and other.enhanced_mel is not None:
                merged.append(ManifestEntry(**{**entry.__dict__, "enhanced_mel": other.enhanced_mel}))
        entries = merged
    report = evaluate(entries)
    out_path = Path(args.output) if args.output else _workdir(config) / "eval_report.json"
    report.save(out_path)
    print(
        f"utterances={len(report.utterances)} mse_enhanced={report.mse_enhanced:.6f} "
        f"mse_degraded={report.mse_degraded:.6f} lsd={report.lsd_enhanced:.6f} "
        f"improvement_ratio={report.improvement_ratio:.4f}"
    )
    return 0


def cmd_verify(config: RunConfig, args) -> int:
    from .verify import run_all

    seed = config.resolve_seed(args.seed)
    checks = run_all(seed=seed)
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
        failed += 0 if check.passed else 1
    return 0 if failed == 0 else 4


def cmd_plot(config: RunConfig, args) -> int:
    from .plotting import plot_loss_curve, plot_mels

    inputs = [Path(p) for p in args.inputs]
    out = Path(args.output)
    if all(p.suffix == ".mel" for p in inputs):
        plot_mels(inputs, out)
    elif len(inputs) == 1 and inputs[0].suffix == ".csv":
        plot_loss_curve(inputs[0], out)
    else:
        raise ConfigError("plot expects .mel cache files or a single training-log .csv")
    log.info("wrote %s", out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="melforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for parallel stages")
        if manifest:
            p.add_argument("--manifest", default=None, help="override paths.manifest")

    p = sub.add_parser("degrade", help="build the paired (clean, degraded) corpus")
    common(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("featurize", help="(re)extract mel caches and normalization stats")
    common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("build-dict", help="build the phone-to-mean-mel dictionary")
    common(p)
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("train", help="train the score model")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--no-text", action="store_true", help="train without text conditioning")
    p.add_argument("--output", default=None, help="training output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance degraded mels with a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=None, help="reverse steps (default from config)")
    p.add_argument("--solver", choices=["euler", "expint1", "expint2"], default=None)
    p.add_argument("--no-text", action="store_true")
    p.add_argument("--split", choices=["all", "train", "val"], default="all")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score enhanced mels against clean references")
    common(p)
    p.add_argument("--enhanced-manifest", default=None, help="manifest carrying enhanced_mel paths")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the built-in analytic verification suites")
    common(p, manifest=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="plot mel caches or a training loss curve")
    common(p, manifest=False)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        return args.func(config, args)
    except MelforgeError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
