#!/usr/bin/env python3
"""Regenerate the frozen MFCC fixture used by the feature tests.

The fixture is one second of a 440 Hz tone at 16 kHz run through the
default front end. Rerun only when the front end intentionally changes,
and review the resulting test diff.
"""
from pathlib import Path

import numpy as np

from spkfuse import features, tensorio

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "mfcc_440hz_golden.tensors"


def main() -> None:
    t = np.arange(features.SAMPLE_RATE) / features.SAMPLE_RATE
    wav = features.Waveform(0.5 * np.sin(2.0 * np.pi * 440.0 * t))
    coeffs = features.mfcc_from_waveform(wav)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    tensorio.save_tensors(OUT, {"mfcc": coeffs})
    print(f"wrote {OUT} shape={coeffs.shape}")


if __name__ == "__main__":
    main()
