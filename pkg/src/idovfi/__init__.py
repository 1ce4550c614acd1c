"""Event-guided video frame interpolation with motion splines and gated
region refinement."""
from .events import EventStream, InvalidInputError, reverse_stream, simulate_events, split_stream, voxelize
from .gating import CostModel, Region, divide_regions, expected_flops, gumbel_softmax
from .metrics import EvalReport, psnr, ssim
from .splines import FlowField, MotionSpline, backward_warp, forward_warp_softmax, sample_flow

__version__ = "0.1.0"

__all__ = [
    "CostModel", "EvalReport", "EventStream", "FlowField", "InvalidInputError", "MotionSpline", "Region",
    "backward_warp", "divide_regions", "expected_flops", "forward_warp_softmax", "gumbel_softmax", "psnr",
    "reverse_stream", "sample_flow", "simulate_events", "split_stream", "ssim", "voxelize",
]
