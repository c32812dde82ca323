"""maskbeam: spatial-clustering masks, recurrent mask cleaning, MVDR beamforming."""

__version__ = "0.1.0"

from .audio import AudioClip, read_wav, write_wav  # noqa: F401
from .stft import StftConfig, Spectrogram, analyze, synthesize, to_features  # noqa: F401
