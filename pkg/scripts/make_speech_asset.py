"""Regenerate the packaged 2.7 s test sentence (src/mwfic/data/speech.wav)."""

from pathlib import Path

from mwfic.speech import ASSET, synthetic_speech
from mwfic.stft import write_wav

if __name__ == "__main__":
    target = Path(__file__).resolve().parents[1] / "src" / "mwfic" / "data" / ASSET
    write_wav(target, synthetic_speech(), 16000, fmt="int16")
    print(f"wrote {target}")
