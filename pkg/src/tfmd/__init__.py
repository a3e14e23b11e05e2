"""Motor-current fault diagnosis from STFT-variant time-frequency images.

Pipeline: synthetic motor-current signals -> five STFT-variant spectrograms
-> 64x64 RGB images -> compact CNN -> 10-fold stratified cross-validation.
"""

from .dsp import TimeSeries, Window, WindowKind, energy, fft, frame_signal, make_window
from .tfr import Method, Spectrogram, TFGrid, TransformConfig, transform

__version__ = "0.1.0"
