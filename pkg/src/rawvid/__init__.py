"""rawvid: RAW video noise synthesis, ISP emulation, metrics, and a
recurrent video denoising transformer forward-pass reference."""

__version__ = "0.1.0"

FORMAT_VERSION = "1"
