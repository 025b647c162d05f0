"""Impact-echo slab assessment toolkit.

Waveform synthesis, peak-frequency extraction, spatial mapping, defect
clustering, ground-truth validation, and LSTM defect-type classification,
wired together by the ``echomap`` CLI.
"""

__version__ = "0.1.0"
