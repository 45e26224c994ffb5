"""Deformable aggregation operator (v3/v4 modes) and its kernels."""

from .backend import active_backend, available_backends, set_backend, set_num_threads
from .operator import DcnOutput, DcnParams, DeformSample, MODES, dcn_aggregate, predict_offsets_modulation, sampling_grid
from .bench import BenchReport, BenchRow, dcn_bench
