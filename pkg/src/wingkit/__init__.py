"""wingkit: a desk-scale fixed-wing indoor autonomy toolkit.

Modules: geom (rigid-body geometry and projection), dynamics (reduced-order
aircraft model), sysid (least-squares parameter identification), estimation
(hybrid pose estimation and frame-quality monitoring), percept (synthetic
camera and masks), control (expert guidance and the vision stand-in),
harness (scenarios, trials, metrics, datasets), link (wire format, PPM,
20 Hz loop), cli (command-line entry point).
"""

__version__ = "0.1.0"

__all__ = [
    "geom",
    "dynamics",
    "sysid",
    "estimation",
    "percept",
    "control",
    "harness",
    "link",
    "cli",
    "seeding",
]
