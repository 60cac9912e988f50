"""Seeded synthetic corpus with severity-graded degradations.

Each phrase id maps to a deterministic multi-tone/chirp template of a
configured duration; each speaker gets a seeded timbre perturbation
(detune, per-harmonic gains, vibrato, recording level).  A speaker's
severity s degrades every utterance three ways, all monotone in s:
additive noise at snr_db(s), low-pass filtering at lowpass_hz(s), and
random local time-jitter up to jitter_ms(s).  The degradations push
log-mel statistics monotonically with severity, giving classifiers a
learnable, severity-ordered signal that is analogous to (not imitative
of) disordered acoustics.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scipy.signal import butter, sosfiltfilt

from .data import SpeakerRating, Utterance, save_manifest
from .dsp import SAMPLE_RATE, write_wav
from .errors import ConfigError
from .seeding import subrng


@dataclass(frozen=True)
class Phrase:
    phrase_id: int
    text: str
    duration: float


@dataclass(frozen=True)
class SeverityProfile:
    snr_db: float
    lowpass_hz: float
    jitter_ms: float


def _default_phrases():
    word_durations = (0.50, 0.55, 0.60, 0.62, 0.66, 0.70, 0.75, 0.80)
    phrase_durations = (1.20, 1.35, 1.50, 1.60, 1.75, 1.90, 2.00, 2.10, 2.25, 2.40, 2.50)
    sentence_durations = (2.80, 3.00, 3.20, 3.35, 3.50, 3.65, 3.80, 3.90, 3.95, 4.00)
    phrases = []
    pid = 1
    for dur in word_durations:
        phrases.append(Phrase(pid, f"word-{pid:02d}", dur))
        pid += 1
    for dur in phrase_durations:
        phrases.append(Phrase(pid, f"phrase-{pid:02d}", dur))
        pid += 1
    for dur in sentence_durations:
        phrases.append(Phrase(pid, f"sentence-{pid:02d}", dur))
        pid += 1
    return tuple(phrases)


# Mix of short words and long sentences (29 entries, 0.5 s - 4 s) so
# phrase-length effects are exercisable.
DEFAULT_PHRASES = _default_phrases()

DEFAULT_PROFILES = (
    SeverityProfile(snr_db=34.0, lowpass_hz=7600.0, jitter_ms=0.0),
    SeverityProfile(snr_db=29.0, lowpass_hz=6000.0, jitter_ms=2.0),
    SeverityProfile(snr_db=22.0, lowpass_hz=4300.0, jitter_ms=5.0),
    SeverityProfile(snr_db=14.0, lowpass_hz=2700.0, jitter_ms=9.0),
    SeverityProfile(snr_db=4.0, lowpass_hz=1500.0, jitter_ms=15.0),
)

DEFAULT_SEVERITY_DISTRIBUTION = (0.35, 0.30, 0.15, 0.12, 0.08)

_N_HARMONICS = 12
_PEAK = 0.35


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 60
    phrases: tuple[Phrase, ...] = DEFAULT_PHRASES
    severity_distribution: tuple[float, ...] = DEFAULT_SEVERITY_DISTRIBUTION
    profiles: tuple[SeverityProfile, ...] = DEFAULT_PROFILES
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ConfigError("n_speakers must be >= 1")
        if len(self.severity_distribution) != 5 or any(p < 0 for p in self.severity_distribution):
            raise ConfigError("severity_distribution needs 5 nonnegative entries")
        if abs(sum(self.severity_distribution) - 1.0) > 1e-9:
            raise ConfigError("severity_distribution must sum to 1")
        if len(self.profiles) != 5:
            raise ConfigError("need one degradation profile per severity")
        snrs = [p.snr_db for p in self.profiles]
        cutoffs = [p.lowpass_hz for p in self.profiles]
        if any(b >= a for a, b in zip(snrs, snrs[1:])):
            raise ConfigError("snr_db must be strictly decreasing in severity")
        if any(b >= a for a, b in zip(cutoffs, cutoffs[1:])):
            raise ConfigError("lowpass_hz must be strictly decreasing in severity")
        if any(c <= 0 or c >= self.sample_rate / 2 for c in cutoffs):
            raise ConfigError("lowpass_hz must lie inside (0, Nyquist)")
        if any(p.jitter_ms < 0 for p in self.profiles):
            raise ConfigError("jitter_ms must be >= 0")
        if any(p.duration <= 0 for p in self.phrases):
            raise ConfigError("phrase durations must be > 0")
        if len({p.phrase_id for p in self.phrases}) != len(self.phrases):
            raise ConfigError("phrase ids must be unique")


def speaker_ids(config):
    return [f"spk{i:04d}" for i in range(config.n_speakers)]


def speaker_ratings(config):
    """Severity per speaker: largest-remainder proportions, seeded shuffle."""
    n = config.n_speakers
    exact = np.asarray(config.severity_distribution) * n
    counts = np.floor(exact).astype(int)
    leftovers = np.argsort(-(exact - counts), kind="stable")
    for c in leftovers[: n - counts.sum()]:
        counts[c] += 1
    pool = np.repeat(np.arange(5), counts)
    rng = subrng(config.seed, "speaker-ratings")
    pool = pool[rng.permutation(n)]
    return {sid: int(pool[i]) for i, sid in enumerate(speaker_ids(config))}


def _speaker_timbre(config, speaker_index):
    # Wide timbre spread on purpose: speaker brightness and breathiness
    # overlap with adjacent severity signatures, so classifiers must
    # generalize rather than read the profile off a single level cue.
    rng = subrng(config.seed, "speaker-timbre", speaker_index)
    return {
        "detune": 2.0 ** rng.uniform(-0.08, 0.08),
        "harmonic_gains": rng.uniform(0.4, 1.6, size=_N_HARMONICS),
        "brightness": rng.uniform(0.50, 0.95),
        "breath_db": rng.uniform(-38.0, -22.0),
        "rolloff_hz": math.exp(rng.uniform(math.log(2400.0), math.log(7800.0))),
        "vibrato_depth": rng.uniform(0.002, 0.040),
        "vibrato_rate": rng.uniform(1.5, 7.0),
        "tremor_depth": rng.uniform(0.0, 0.35),
        "tremor_rate": rng.uniform(0.6, 2.2),
        "level": rng.uniform(0.6, 1.4),
    }


def _phrase_fundamental(phrase_id):
    # Spread fundamentals over ~2 octaves, deterministically by id.
    return 110.0 * 2.0 ** ((phrase_id * 7) % 24 / 24.0)


def clean_utterance(config, speaker_index, phrase):
    """Pre-degradation signal for (speaker, phrase): the stored clean template.

    Speaker timbre (detune, per-harmonic gains, brightness rolloff, breath
    noise, vibrato, level) and a per-utterance recording gain are part of
    the clean rendering, so the severity oracle measures the degradation
    alone.
    """
    sr = config.sample_rate
    n = int(round(phrase.duration * sr))
    t = np.arange(n) / sr
    timbre = _speaker_timbre(config, speaker_index)
    f0 = _phrase_fundamental(phrase.phrase_id) * timbre["detune"]
    # Slow upward chirp plus vibrato, expressed as a phase function.
    chirp_phase = 2.0 * np.pi * f0 * (t + 0.025 * t * t / phrase.duration)
    rate = timbre["vibrato_rate"]
    vibrato_phase = (f0 * timbre["vibrato_depth"] / rate) * (1.0 - np.cos(2.0 * np.pi * rate * t))
    phase = chirp_phase + 2.0 * np.pi * vibrato_phase
    signal = np.zeros(n)
    for k in range(1, _N_HARMONICS + 1):
        gain = timbre["harmonic_gains"][k - 1] * timbre["brightness"] ** (k - 1)
        signal += (gain / k) * np.sin(k * phase)
    # Syllable-like amplitude modulation, speaker tremor, soft edges.
    am = 1.0 + 0.25 * np.sin(2.0 * np.pi * (2.5 + 0.15 * phrase.phrase_id) * t)
    am *= 1.0 + timbre["tremor_depth"] * np.sin(2.0 * np.pi * timbre["tremor_rate"] * t)
    edge = int(min(0.030 * sr, n // 4))
    envelope = np.ones(n)
    if edge > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
        envelope[:edge] = ramp
        envelope[-edge:] = ramp[::-1]
    signal *= am
    clean_rng = subrng(config.seed, "utterance-clean", speaker_index, phrase.phrase_id)
    breath = 10.0 ** (timbre["breath_db"] / 20.0) * np.sqrt(np.mean(signal * signal))
    signal = (signal + breath * clean_rng.standard_normal(n)) * envelope
    # Per-speaker brightness roll-off: the speaker's own spectrum must
    # overlap the severity cutoffs, or the cutoff alone labels the class.
    signal = _lowpass(signal, timbre["rolloff_hz"], sr)
    peak = np.abs(signal).max()
    recording_gain = clean_rng.uniform(0.55, 1.30)
    if peak > 0:
        signal *= _PEAK * timbre["level"] * recording_gain / peak
    return signal


def _lowpass(signal, cutoff_hz, sr):
    # Gentle (2nd-order Butterworth, zero-phase) roll-off: muffling should
    # overlap with natural speaker brightness, not leave a hard spectral
    # edge that trivially identifies the severity.
    sos = butter(2, cutoff_hz, btype="low", fs=sr, output="sos")
    return sosfiltfilt(sos, signal)


def _jitter(signal, max_ms, sr, rng):
    # Draws happen even at zero jitter so streams align across severities.
    freqs = rng.uniform(0.8, 2.5, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    if max_ms <= 0 or signal.size < 2:
        return signal
    t = np.arange(signal.size) / sr
    warp = np.zeros(signal.size)
    for f, p in zip(freqs, phases):
        warp += np.sin(2.0 * np.pi * f * t + p)
    warp /= max(np.abs(warp).max(), 1e-12)
    offset = warp * (max_ms / 1000.0) * sr
    positions = np.clip(np.arange(signal.size) + offset, 0, signal.size - 1)
    return np.interp(positions, np.arange(signal.size), signal)


def degrade(clean, severity, config, rng, noise_rolloff_hz=None):
    """Apply the severity profile: time-jitter, additive noise, low-pass.

    ``noise_rolloff_hz`` colors the added noise like the speaker's own
    spectrum (voice-carried noise); the noise is renormalized to unit
    power after shaping, so the configured SNR holds exactly.
    """
    reference = _reference_from_clean(clean, severity, config, rng)
    return _degrade_reference(reference, severity, config, rng, noise_rolloff_hz)


def _reference_from_clean(clean, severity, config, rng):
    profile = config.profiles[severity]
    return _jitter(clean, profile.jitter_ms, config.sample_rate, rng)


def _degrade_reference(reference, severity, config, rng, noise_rolloff_hz=None):
    profile = config.profiles[severity]
    noise = rng.standard_normal(reference.size)
    # Slow level wander makes the noise non-stationary: short recordings
    # then give noisier floor estimates than long ones.
    wander_db = rng.uniform(3.0, 7.0)
    wander_hz = rng.uniform(0.15, 0.7)
    wander_phase = rng.uniform(0.0, 2.0 * np.pi)
    if noise_rolloff_hz is not None:
        noise = _lowpass(noise, noise_rolloff_hz, config.sample_rate)
    t = np.arange(reference.size) / config.sample_rate
    noise *= 10.0 ** (wander_db * np.sin(2.0 * np.pi * wander_hz * t + wander_phase) / 20.0)
    noise /= max(np.sqrt(np.mean(noise * noise)), 1e-12)
    power = np.mean(reference * reference)
    sigma = math.sqrt(power * 10.0 ** (-profile.snr_db / 10.0))
    return _lowpass(reference + sigma * noise, profile.lowpass_hz, config.sample_rate)


def render_utterance(config, speaker_index, phrase, severity):
    """(stored clean template, degraded audio) for one utterance.

    The stored template is the jittered pre-noise signal, so the SNR
    oracle measures exactly what the noise and filtering removed.
    """
    clean = clean_utterance(config, speaker_index, phrase)
    rng = subrng(config.seed, "utterance", speaker_index, phrase.phrase_id)
    reference = _reference_from_clean(clean, severity, config, rng)
    rolloff = _speaker_timbre(config, speaker_index)["rolloff_hz"]
    return reference, _degrade_reference(reference, severity, config, rng, rolloff)


def measure_snr_db(clean, degraded):
    """Signal power over residual power, in dB, against the clean template."""
    signal_power = np.mean(clean * clean)
    noise_power = np.mean((degraded - clean) ** 2)
    if noise_power == 0:
        return math.inf
    return 10.0 * math.log10(signal_power / noise_power)


def _utterance_record(speaker_id, phrase, audio_dir="audio"):
    uid = f"{speaker_id}_p{phrase.phrase_id:02d}"
    return Utterance(
        utterance_id=uid,
        speaker_id=speaker_id,
        phrase_id=phrase.phrase_id,
        phrase_text=phrase.text,
        audio_path=f"{audio_dir}/{uid}.wav",
        duration=phrase.duration,
    )


def iter_corpus(config):
    """Stream (utterance, rating, degraded samples) without touching disk."""
    ratings = speaker_ratings(config)
    for index, speaker_id in enumerate(speaker_ids(config)):
        severity = ratings[speaker_id]
        for phrase in config.phrases:
            _, degraded = render_utterance(config, index, phrase, severity)
            yield _utterance_record(speaker_id, phrase), severity, degraded


def corpus_manifest(config):
    """The manifest that :func:`generate` would write, without audio."""
    ratings_map = speaker_ratings(config)
    ratings = [SpeakerRating(sid, ratings_map[sid]) for sid in speaker_ids(config)]
    utterances = [
        _utterance_record(sid, phrase)
        for sid in speaker_ids(config)
        for phrase in config.phrases
    ]
    return utterances, ratings


def generate(config, out_dir):
    """Write WAV files plus a manifest; returns (utterances, ratings)."""
    out = Path(out_dir)
    audio_dir = out / "audio"
    try:
        audio_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {audio_dir}: {exc}") from exc
    utterances = []
    ratings_map = speaker_ratings(config)
    for utterance, _, samples in iter_corpus(config):
        write_wav(out / utterance.audio_path, samples, config.sample_rate)
        utterances.append(utterance)
    ratings = [SpeakerRating(sid, ratings_map[sid]) for sid in speaker_ids(config)]
    save_manifest(out / "manifest.jsonl", utterances, ratings)
    return utterances, ratings
