"""Simulator for a carrier-modulated high-speed overlay on CAN dominant bits."""

from .channel import ChannelSpec, NoiseSpec
from .frame import CanFrame, all_dominant_frame, build_frame, stuff, unstuff
from .link import simulate_frame
from .metrics import SweepResult, net_rate_bps, net_rate_ratio, output_snr
from .overlay import OverlayConfig
from .rx import EqualizerConfig
from .sweep import SweepPlan, load_plan, run_sweep
from .waveform import BitTiming, Waveform

__version__ = "0.1.0"
