"""Visual-fatigue detection from VR eye-gaze time series."""

__version__ = "0.1.0"
