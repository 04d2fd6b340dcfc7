"""WAV, feature-file, manifest and config I/O."""
import csv
import logging
import os
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .spectral import N_MELS, SAMPLE_RATE, mel_features

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"DPSF"
_FEAT_HEADER = struct.Struct("<4sI")
MANIFEST_FIELDS = ("id", "audio", "feature", "split")
SPLITS = ("train", "valid", "test")


class AudioFormatError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


# -- WAV --------------------------------------------------------------------


def read_wav(path, sample_rate=SAMPLE_RATE):
    """Mono 16-bit PCM WAV as float64 in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from None
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != sample_rate:
        raise AudioFormatError(f"{path}: expected {sample_rate} Hz, got {rate} Hz")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, x, sample_rate=SAMPLE_RATE):
    """Write mono PCM16; values outside [-1, 1) clamp to the extreme codes."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot write non-finite samples")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


# -- features -----------------------------------------------------------------


def write_features(path, mel):
    """Store an (80, B) mel as a magic/count header plus float32 [B x 80] rows."""
    mel = np.asarray(mel)
    if mel.ndim != 2 or mel.shape[0] != N_MELS:
        raise FeatureFormatError(f"expected ({N_MELS}, frames) features, got {mel.shape}")
    body = np.ascontiguousarray(mel.T, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEATURE_MAGIC, mel.shape[1]))
        fh.write(body)


def read_features(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _FEAT_HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, frames = _FEAT_HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    want = _FEAT_HEADER.size + 4 * N_MELS * frames
    if len(buf) != want:
        raise FeatureFormatError(f"{path}: {frames} frames need {want} bytes, file has {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_FEAT_HEADER.size)
    return data.reshape(frames, N_MELS).T.astype(np.float64)


# -- manifest and config ------------------------------------------------------


@dataclass
class Utterance:
    id: str
    audio: str
    feature: str
    split: str = "train"


def read_manifest(path):
    """Tab-separated manifest with columns id, audio, feature, split.

    Relative paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    out = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            if row["split"] not in SPLITS:
                raise ValueError(f"{path}: unknown split {row['split']!r} for {row['id']}")
            if row["id"] in seen:
                raise ValueError(f"{path}: duplicate utterance id {row['id']!r}")
            seen.add(row["id"])
            out.append(Utterance(row["id"], os.path.join(base, row["audio"]),
                                 os.path.join(base, row["feature"]), row["split"]))
    return out


def write_manifest(path, utterances):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(MANIFEST_FIELDS)
        for u in utterances:
            writer.writerow([u.id, u.audio, u.feature, u.split])


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment. Numbers and booleans are parsed."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = _parse_value(value)
    return out


# -- feature extraction over a corpus -------------------------------------------


@dataclass
class PrepareResult:
    written: list
    skipped: list
    failed: list  # (id, message)


def prepare_features(utterances, overwrite=False):
    """Compute mel features for every utterance whose feature file is missing.

    Existing files are left alone unless ``overwrite``; a failing file is
    recorded and the rest continue.
    """
    res = PrepareResult([], [], [])
    if not utterances:
        log.warning("no utterances to process")
        return res
    for u in utterances:
        if os.path.exists(u.feature) and not overwrite:
            res.skipped.append(u.id)
            continue
        try:
            mel = mel_features(read_wav(u.audio), SAMPLE_RATE)
            os.makedirs(os.path.dirname(os.path.abspath(u.feature)), exist_ok=True)
            write_features(u.feature, mel)
            log.info("%s: %d frames", u.id, mel.shape[1])
        except (OSError, ValueError) as exc:
            log.error("%s: %s", u.id, exc)
            res.failed.append((u.id, str(exc)))
            continue
        res.written.append(u.id)
    return res


def load_pair(u):
    """(mel, waveform) trimmed to a whole number of frames."""
    mel = read_features(u.feature)
    x = read_wav(u.audio)
    n = min(mel.shape[1], x.size // 80)
    return mel[:, :n], x[: n * 80]
