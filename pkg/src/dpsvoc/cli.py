"""Command-line entry point: ``dpsvoc <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import audio_io, checkpoint, filterbank, metrics
from .adversary import DiscriminatorConfig, toy_discriminator_config
from .generator import FULL_BAND, MULTIBAND, GeneratorConfig, NoiseControl, full_config, toy_config
from .trainer import TrainConfig, Trainer, load_generator

log = logging.getLogger("dpsvoc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DEFAULT_MU_GRID = (-0.4, -0.2, 0.0, 0.2, 0.4)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _bands(text):
    try:
        return tuple(int(b) for b in text.split(",") if b.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bands must be comma-separated integers, got {text!r}") from None


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = _Parser(prog="dpsvoc", description="Neural source-filter vocoder toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("features", help="compute mel features for a manifest")
    s.add_argument("manifest")
    s.add_argument("--overwrite", action="store_true")

    s = sub.add_parser("train", help="train a vocoder")
    s.add_argument("manifest")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config", help="flat key = value file")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override; repeatable")
    s.add_argument("--resume", action="store_true", help="continue from OUT_DIR/checkpoint.bin")

    s = sub.add_parser("synth", help="synthesize a waveform from a feature file")
    s.add_argument("checkpoint")
    s.add_argument("features")
    s.add_argument("output", help="output WAV path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mu", type=float, default=0.0)
    s.add_argument("--bands", type=_bands, default=None, help="bands the offset applies to, e.g. 0,1")

    s = sub.add_parser("eval", help="objective metrics over paired WAV directories")
    s.add_argument("reference_dir")
    s.add_argument("synthesized_dir")
    s.add_argument("--out-dir", required=True)

    s = sub.add_parser("edit-noise", help="sweep the stochastic mask offset")
    s.add_argument("checkpoint")
    s.add_argument("features")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--reference", help="natural WAV to score against (default: the mu=0 output)")
    s.add_argument("--grid", type=_floats, default=DEFAULT_MU_GRID)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bands", type=_bands, default=None)

    s = sub.add_parser("design-fb", help="write prototype/analysis taps and magnitude responses")
    s.add_argument("--bands", "-m", type=int, default=2, choices=sorted(filterbank.PROTOTYPES))
    s.add_argument("--out-dir", required=True)
    s.add_argument("--points", type=int, default=4096)
    return p


# -- subcommands ----------------------------------------------------------------


def cmd_features(args):
    res = audio_io.prepare_features(audio_io.read_manifest(args.manifest), overwrite=args.overwrite)
    print(f"written {len(res.written)}, skipped {len(res.skipped)}, failed {len(res.failed)}")
    return EXIT_RUNTIME if res.failed else EXIT_OK


def _coerce(field_type, value):
    if field_type in (int, "int"):
        return int(value)
    if field_type in (float, "float"):
        return float(value)
    if field_type in (tuple, "tuple") and isinstance(value, str):
        return tuple(int(v) for v in value.split(","))
    return value


def train_configs(settings):
    """Split flat settings into generator, discriminator and training configs.

    Recognised keys: ``preset`` (toy or full), ``mode``, ``m_bands``,
    ``gen.<field>``, ``disc.<field>`` and any training field.
    """
    settings = dict(settings)
    preset = settings.pop("preset", "toy")
    mode = settings.pop("mode", MULTIBAND)
    m_bands = settings.pop("m_bands", None)
    m_bands = None if m_bands is None else int(m_bands)
    if preset == "toy":
        gen, disc = toy_config(mode, m_bands), toy_discriminator_config()
    elif preset == "full":
        gen, disc = full_config(mode, m_bands), DiscriminatorConfig()
    else:
        raise ValueError(f"unknown preset {preset!r} (toy or full)")
    gen_f = {f.name: f.type for f in dataclasses.fields(GeneratorConfig)}
    disc_f = {f.name: f.type for f in dataclasses.fields(DiscriminatorConfig)}
    train_f = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    gen_kw, disc_kw, train_kw = {}, {}, {}
    for key, value in settings.items():
        if key.startswith("gen.") and key[4:] in gen_f:
            gen_kw[key[4:]] = _coerce(gen_f[key[4:]], value)
        elif key.startswith("disc.") and key[5:] in disc_f:
            disc_kw[key[5:]] = _coerce(disc_f[key[5:]], value)
        elif key in train_f:
            train_kw[key] = _coerce(train_f[key], value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return (dataclasses.replace(gen, **gen_kw), dataclasses.replace(disc, **disc_kw),
            TrainConfig(**train_kw))


def _overrides(pairs):
    out = {}
    for item in pairs:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = audio_io._parse_value(v.strip())
    return out


def cmd_train(args):
    settings = audio_io.read_config(args.config) if args.config else {}
    settings.update(_overrides(args.set))
    os.makedirs(args.out_dir, exist_ok=True)
    ck_path = os.path.join(args.out_dir, "checkpoint.bin")
    if args.resume:
        # the checkpoint carries its own configs; only the step budget may grow
        trainer = Trainer.load(ck_path)
        extra = set(settings) - {"total_steps"}
        if extra:
            raise UsageError(f"--resume only accepts total_steps, got {sorted(extra)}")
        if "total_steps" in settings:
            trainer.train_cfg = dataclasses.replace(trainer.train_cfg, total_steps=int(settings["total_steps"]))
    else:
        trainer = Trainer(*train_configs(settings))
    utts = [u for u in audio_io.read_manifest(args.manifest) if u.split == "train"]
    if not utts:
        raise ValueError("manifest has no train utterances")
    data = [audio_io.load_pair(u) for u in utts]
    trainer.fit(data, log_path=os.path.join(args.out_dir, "train_log.csv"))
    trainer.save(ck_path)
    print(f"trained to step {trainer.step}; checkpoint {ck_path}")
    return EXIT_OK


def _control(mu, bands):
    if mu == 0.0 and bands is None:
        return None
    return NoiseControl(mu=mu, bands=bands)


def cmd_synth(args):
    gen = load_generator(args.checkpoint)
    mel = audio_io.read_features(args.features)
    wav = gen.synthesize(mel, seed=args.seed, ctrl=_control(args.mu, args.bands))
    audio_io.write_wav(args.output, wav)
    print(f"wrote {wav.size} samples to {args.output}")
    return EXIT_OK


def _wav_names(directory):
    return sorted(f for f in os.listdir(directory) if f.lower().endswith(".wav"))


def _write_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(("id",) + metrics.METRIC_NAMES)
        for r in rows:
            w.writerow([r.utt_id] + [f"{getattr(r, k):.6g}" for k in metrics.METRIC_NAMES])


def cmd_eval(args):
    ref_names = _wav_names(args.reference_dir)
    syn_names = set(_wav_names(args.synthesized_dir))
    missing = [n for n in ref_names if n not in syn_names]
    if missing:
        raise ValueError(f"{len(missing)} reference files have no synthesized counterpart, e.g. {missing[0]}")
    if not ref_names:
        raise ValueError(f"no WAV files in {args.reference_dir}")

    def pairs():
        for name in ref_names:
            ref = audio_io.read_wav(os.path.join(args.reference_dir, name))
            syn = audio_io.read_wav(os.path.join(args.synthesized_dir, name))
            n = min(ref.size, syn.size)
            yield os.path.splitext(name)[0], ref[:n], syn[:n]

    report = metrics.evaluate_corpus(pairs())
    mean = report.mean()
    os.makedirs(args.out_dir, exist_ok=True)
    _write_report(os.path.join(args.out_dir, "metrics.tsv"), report.utterances + [mean])
    with open(os.path.join(args.out_dir, "metrics.json"), "w") as fh:
        json.dump({"mean": mean.to_dict(), "utterances": [u.to_dict() for u in report.utterances]},
                  fh, indent=2)
    for k in metrics.METRIC_NAMES:
        print(f"{k}\t{getattr(mean, k):.4f}")
    return EXIT_OK


def cmd_edit_noise(args):
    gen = load_generator(args.checkpoint)
    mel = audio_io.read_features(args.features)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {mu: gen.synthesize(mel, seed=args.seed, ctrl=_control(mu, args.bands)) for mu in args.grid}
    if args.reference:
        ref = audio_io.read_wav(args.reference)
    else:
        ref = outputs[0.0] if 0.0 in outputs else gen.synthesize(mel, seed=args.seed)
    table = os.path.join(args.out_dir, "snr.tsv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t")
        w.writerow(("mu", "snr_db", "wav"))
        for mu, wav in outputs.items():
            name = f"mu_{mu:+.2f}.wav"
            audio_io.write_wav(os.path.join(args.out_dir, name), wav)
            n = min(ref.size, wav.size)
            value = metrics.snr(ref[:n], wav[:n])
            w.writerow((f"{mu:g}", f"{value:.4f}", name))
            print(f"mu={mu:+.2f}\tSNR={value:.3f} dB")
    return EXIT_OK


def cmd_design_fb(args):
    bank = filterbank.make_bank(args.bands)
    os.makedirs(args.out_dir, exist_ok=True)
    taps = np.column_stack([np.arange(bank.n_taps), bank.prototype, bank.analysis.T])
    head = "n\tprototype\t" + "\t".join(f"h{k}" for k in range(bank.m))
    np.savetxt(os.path.join(args.out_dir, "taps.tsv"), taps, delimiter="\t", header=head,
               comments="", fmt=["%d"] + ["%.12e"] * (bank.m + 1))
    n = args.points
    proto = np.abs(np.fft.rfft(bank.prototype, n=n))
    resp = np.vstack([proto, filterbank.magnitude_response(bank, n)])
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(np.maximum(resp, 1e-300))
    freq = np.arange(n // 2 + 1) / n
    head = "freq\tprototype_db\t" + "\t".join(f"h{k}_db" for k in range(bank.m))
    np.savetxt(os.path.join(args.out_dir, "response.tsv"), np.column_stack([freq, db.T]),
               delimiter="\t", header=head, comments="", fmt="%.8g")
    print(f"M={bank.m}: {bank.n_taps} taps written to {args.out_dir}")
    return EXIT_OK


COMMANDS = {
    "features": cmd_features,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "edit-noise": cmd_edit_noise,
    "design-fb": cmd_design_fb,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dpsvoc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, checkpoint.CheckpointError) as exc:
        print(f"dpsvoc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
