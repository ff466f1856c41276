"""LED-panel fiducial markers read through a rolling-shutter camera.

Marker IDs are encoded as a grid of LEDs blinking at one of two frequencies.
A rolling-shutter camera turns each frequency into horizontal bands of a
characteristic height, which the detector measures to rebuild the binary
pattern and look the ID up in a dictionary.
"""

from ledmarker.codec import (
    BlinkAssignment,
    Dictionary,
    MarkerPattern,
    SquareWave,
    assign_frequencies,
    decode,
    encode,
    generate_dictionary,
    hamming,
    rotate,
)
from ledmarker.optics import (
    CameraModel,
    Frame,
    NoiseModel,
    ScenePose,
    band_width,
    marker_homography,
    render_frame,
    sample_wave,
)
from ledmarker.detector import DetectionResult, DetectorConfig, detect
from ledmarker.pose import (
    MarkerMap,
    PoseEstimate,
    decompose,
    homography_from_quad,
    localize,
)

__all__ = [
    "BlinkAssignment",
    "CameraModel",
    "DetectionResult",
    "DetectorConfig",
    "Dictionary",
    "Frame",
    "MarkerMap",
    "MarkerPattern",
    "NoiseModel",
    "PoseEstimate",
    "ScenePose",
    "SquareWave",
    "assign_frequencies",
    "band_width",
    "decode",
    "decompose",
    "detect",
    "encode",
    "generate_dictionary",
    "hamming",
    "homography_from_quad",
    "localize",
    "marker_homography",
    "render_frame",
    "rotate",
    "sample_wave",
]
