"""Architecture and training hyper-parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple


@dataclass
class ModelConfig:
    stage_dims: Tuple[int, ...] = (16, 32, 64)
    stage_depths: Tuple[int, ...] = (2, 2, 2)
    groups: Tuple[int, ...] = (2, 4, 8)
    dcn_mode: str = "v4"
    mlp_ratio: int = 4
    main_branch_enabled: bool = True
    frequency_branch_enabled: bool = True
    refinement_enabled: bool = True
    refine_channels: int = 16
    refine_blocks: int = 2
    seed: int = 0

    def validate(self) -> "ModelConfig":
        n = len(self.stage_dims)
        if n == 0 or len(self.stage_depths) != n or len(self.groups) != n:
            raise ValueError("stage_dims, stage_depths and groups must have the same non-zero length")
        for d, depth, g in zip(self.stage_dims, self.stage_depths, self.groups):
            if depth < 1:
                raise ValueError("every stage needs depth >= 1")
            if g < 1 or d % g:
                raise ValueError(f"stage dim {d} not divisible by {g} groups")
        if self.dcn_mode not in ("v3", "v4"):
            raise ValueError(f"dcn_mode must be v3 or v4, got {self.dcn_mode!r}")
        if not (self.main_branch_enabled or self.frequency_branch_enabled):
            raise ValueError("at least one of the main and frequency branches must be enabled")
        if self.stage_dims[0] % 2:
            raise ValueError("first stage dim must be even")
        return self

    @property
    def total_stride(self) -> int:
        return 4 * 2 ** (len(self.stage_dims) - 1)


@dataclass
class TrainConfig:
    crop_size: int = 64
    batch_size: int = 2
    epochs_stage1: int = 100
    epochs_stage2_refine: int = 10
    epochs_stage2_joint: int = 10
    lr_init: float = 1e-4
    milestone_fractions: Tuple[float, ...] = (0.3, 0.6, 0.8)
    lr_decay: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    disc_lr: float = 1e-4
    stage2_lr: float = 1e-5
    loss_alpha: float = 0.4
    loss_beta: float = 0.01
    loss_gamma: float = 0.0005
    seed: int = 0
    log_every: int = 1

    def validate(self) -> "TrainConfig":
        fr = self.milestone_fractions
        if any(b <= a for a, b in zip(fr, fr[1:])) or any(not 0 < f < 1 for f in fr):
            raise ValueError("milestone fractions must be strictly increasing within (0, 1)")
        for name in ("lr_init", "disc_lr", "stage2_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.crop_size < 4:
            raise ValueError("batch_size must be >= 1 and crop_size >= 4")
        if min(self.loss_alpha, self.loss_beta, self.loss_gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        return self


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
