"""Host-side workbench for a tiny on-device vision classifier.

Subpackages cover the full loop: training a small fixed CNN, serializing
its weights in the device's binary and C header formats, speaking the
newline-delimited serial protocol, simulating the device, and exposing the
whole thing through a CLI and a local HTTP service.
"""

__version__ = "0.1.0"
