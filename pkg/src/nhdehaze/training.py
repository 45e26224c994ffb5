"""Two-stage optimisation: augmentation, Adam, schedule, training loops, evaluation.

Trainable parameters and Adam moments live on the float32 grid (values are
rounded after every update) while arithmetic runs in float64. Checkpoints
store float32, so a resumed run continues bit-for-bit.

Per-step randomness (batch order, crops, flips) is derived from
``(seed, epoch, position)`` rather than from a running generator, so the
schedule position alone determines the next step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, mean, no_grad
from .config import Config, ModelConfig, TrainConfig
from .losses import Discriminator, LossWeights, combine_losses, loss_components
from .metrics import psnr, ssim
from .nn import Module, Parameter
from .refinement import DehazePipeline

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]

ABLATION_ROWS = (
    "w/o_Refinement_module",
    "w/o_Dehazing_module",
    "only_main_branch",
    "only_frequency_branch",
)


class TrainingDiverged(NonFiniteError):
    """A loss or gradient went non-finite; ``last_good`` holds the last clean checkpoint."""

    def __init__(self, message: str, last_good: Optional["Checkpoint"] = None) -> None:
        super().__init__(message)
        self.last_good = last_good


def to_f32_grid(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def _seed(*parts: int) -> np.random.Generator:
    return np.random.default_rng([int(p) for p in parts])


# --- augmentation -------------------------------------------------------------


def augment_pair(hazy: np.ndarray, clean: np.ndarray, seed, crop: int) -> Pair:
    """Apply one random crop, 90-degree rotation and flip identically to both images.

    Images are ``[3, H, W]``; rotation is uniform over {0, 90, 180, 270} and
    the flip uniform over {none, vertical, horizontal}.
    """
    if hazy.shape != clean.shape:
        raise ValueError(f"pair shapes differ: {hazy.shape} vs {clean.shape}")
    h, w = hazy.shape[-2:]
    if h < crop or w < crop:
        raise ValueError(f"image {h}x{w} smaller than crop {crop}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    turns = int(rng.integers(0, 4))
    flip = int(rng.integers(0, 3))
    out = []
    for img in (hazy, clean):
        x = img[:, top : top + crop, left : left + crop]
        x = np.rot90(x, turns, axes=(1, 2))
        if flip == 1:
            x = x[:, ::-1, :]
        elif flip == 2:
            x = x[:, :, ::-1]
        out.append(np.ascontiguousarray(x))
    return out[0], out[1]


# --- optimisation -------------------------------------------------------------


class Adam:
    """Bias-corrected Adam with per-parameter step counters."""

    def __init__(self, named_params: Sequence[Tuple[str, Parameter]], betas=(0.9, 0.999), eps: float = 1e-8) -> None:
        self.params = list(named_params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t: Dict[str, int] = {}

    def check_grads(self) -> None:
        bad = [n for n, p in self.params if p.grad is not None and not np.isfinite(p.grad).all()]
        if bad:
            raise NonFiniteError(f"non-finite gradients in {len(bad)} tensor(s): {', '.join(bad[:5])}")

    def step(self, lr: float) -> None:
        self.check_grads()
        for name, p in self.params:
            if p.grad is None or not p.requires_grad:
                continue
            t = self.t.get(name, 0) + 1
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            g = p.grad
            m = to_f32_grid(self.beta1 * m + (1.0 - self.beta1) * g)
            v = to_f32_grid(self.beta2 * v + (1.0 - self.beta2) * g * g)
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.data = to_f32_grid(p.data - lr * mhat / (np.sqrt(vhat) + self.eps))
            self.m[name], self.v[name], self.t[name] = m, v, t

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def state_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
            out[f"{prefix}.t.{name}"] = np.array(self.t[name], dtype=np.float64)
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str) -> None:
        self.m, self.v, self.t = {}, {}, {}
        names = {n for n, _ in self.params}
        for key, value in state.items():
            for kind in ("m", "v", "t"):
                head = f"{prefix}.{kind}."
                if key.startswith(head):
                    name = key[len(head) :]
                    if name not in names:
                        raise KeyError(f"optimizer state for unknown parameter {name!r}")
                    if kind == "t":
                        self.t[name] = int(np.asarray(value).reshape(-1)[0])
                    else:
                        getattr(self, kind)[name] = np.asarray(value, dtype=np.float64)


def adam_step(params, grads, state: Adam, lr: float) -> None:
    """Functional entry point: assign ``grads`` to ``params`` and take one step."""
    for (_, p), g in zip(state.params, grads):
        p.grad = None if g is None else np.asarray(g, dtype=np.float64)
    state.step(lr)


def milestones(config: TrainConfig) -> List[int]:
    return [int(round(f * config.epochs_stage1)) for f in config.milestone_fractions]


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Step schedule; the decay takes effect at the milestone epoch itself."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    passed = sum(1 for m in milestones(config) if epoch >= m)
    return config.lr_init * config.lr_decay**passed


# --- checkpoints --------------------------------------------------------------


@dataclass
class Checkpoint:
    """In-memory checkpoint: model tensors plus optimiser/schedule state."""

    tensors: Dict[str, np.ndarray]
    state: Dict[str, np.ndarray] = field(default_factory=dict)

    def meta(self, key: str, default: float = 0.0) -> float:
        v = self.state.get(f"meta.{key}")
        return default if v is None else float(np.asarray(v).reshape(-1)[0])


def quantize_module(module: Module) -> None:
    for p in module.parameters():
        p.data = to_f32_grid(p.data)


def build_model(config: ModelConfig) -> DehazePipeline:
    model = DehazePipeline(config)
    quantize_module(model)
    return model


def _batch(pairs: Sequence[Pair]) -> Tuple[Tensor, Tensor]:
    return Tensor(np.stack([p[0] for p in pairs])), Tensor(np.stack([p[1] for p in pairs]))


def _prefixed(module: Module, prefix: str) -> List[Tuple[str, Parameter]]:
    return [(f"{prefix}.{n}", p) for n, p in module.named_parameters()]


def epoch_batches(dataset: Sequence[Pair], tc: TrainConfig, epoch: int, salt: int = 0) -> List[List[Pair]]:
    """Shuffled, augmented batches for one epoch, fully determined by (seed, epoch)."""
    order = _seed(tc.seed, salt, epoch, 0).permutation(len(dataset))
    out = []
    for b in range(0, len(order), tc.batch_size):
        group = []
        for pos, idx in enumerate(order[b : b + tc.batch_size]):
            hazy, clean = dataset[idx]
            group.append(augment_pair(hazy, clean, _seed(tc.seed, salt, epoch, 1, b + pos), tc.crop_size))
        out.append(group)
    return out


# --- stage I ------------------------------------------------------------------


class Stage1Trainer:
    """Dehazing module plus discriminator, full composite loss, 1:1 alternation.

    With ``refine_only`` the same recipe trains the refinement stage directly
    on hazy inputs instead (the no-dehazing ablation).
    """

    def __init__(self, config: Config, dataset: Sequence[Pair], refine_only: bool = False) -> None:
        if not dataset:
            raise ValueError("dataset is empty")
        self.config = config
        config.model.validate()
        config.train.validate()
        self.dataset = list(dataset)
        if refine_only and not config.model.refinement_enabled:
            raise ValueError("refine_only needs refinement_enabled=true")
        self.refine_only = refine_only
        self.model = build_model(config.model)
        self.disc = Discriminator(seed=config.train.seed + 7)
        quantize_module(self.disc)
        tc = config.train
        self.weights = LossWeights(tc.loss_alpha, tc.loss_beta, tc.loss_gamma)
        trained = _prefixed(self.model.phi, "phi") if refine_only else _prefixed(self.model.theta, "theta")
        self.opt_g = Adam(trained, (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
        self.opt_d = Adam(_prefixed(self.disc, "disc"), (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
        self.epoch = 0
        self.step_count = 0
        self.best_psnr = -math.inf
        self.best: Optional[Checkpoint] = None
        self.improved = False
        self.history: List[dict] = []

    # checkpoint plumbing
    def checkpoint(self) -> Checkpoint:
        state = {}
        state.update(self.opt_g.state_dict("opt_g"))
        state.update(self.opt_d.state_dict("opt_d"))
        state.update({f"disc.{k}": v for k, v in self.disc.state_dict().items()})
        state["meta.stage"] = np.array(1.0)
        state["meta.epoch"] = np.array(float(self.epoch))
        state["meta.step"] = np.array(float(self.step_count))
        state["meta.best_psnr"] = np.array(self.best_psnr if np.isfinite(self.best_psnr) else -1.0)
        return Checkpoint(self.model.state_dict(), state)

    def restore(self, ckpt: Checkpoint) -> None:
        self.model.load_state_dict({k: np.asarray(v, np.float64) for k, v in ckpt.tensors.items()})
        disc_state = {k[5:]: v for k, v in ckpt.state.items() if k.startswith("disc.")}
        self.disc.load_state_dict({k: np.asarray(v, np.float64) for k, v in disc_state.items()})
        self.opt_g.load_state_dict(ckpt.state, "opt_g")
        self.opt_d.load_state_dict(ckpt.state, "opt_d")
        self.epoch = int(ckpt.meta("epoch"))
        self.step_count = int(ckpt.meta("step"))
        best = ckpt.meta("best_psnr", -1.0)
        self.best_psnr = best if best >= 0 else -math.inf

    def generate(self, x: Tensor) -> Tensor:
        return self.model(x, skip_dehaze=True) if self.refine_only else self.model.theta(x)

    def batches(self, epoch: int) -> List[List[Pair]]:
        return epoch_batches(self.dataset, self.config.train, epoch)

    def train_step(self, pairs: Sequence[Pair], lr: float) -> dict:
        hazy, clean = _batch(pairs)
        self.disc.requires_grad_(False)
        pred = self.generate(hazy)
        comps = loss_components(pred, clean, self.disc)
        total = combine_losses(comps, self.weights, include_adv=True)
        if not total.is_finite():
            raise NonFiniteError("generator loss is non-finite")
        backward(total)
        self.opt_g.step(lr)
        self.opt_g.zero_grad()
        self.disc.requires_grad_(True)

        fake = pred.detach()
        d_loss = 0.5 * (mean((self.disc(clean) - 1.0) ** 2) + mean(self.disc(fake) ** 2))
        if not d_loss.is_finite():
            raise NonFiniteError("discriminator loss is non-finite")
        backward(d_loss)
        self.opt_d.step(self.config.train.disc_lr * lr / self.config.train.lr_init)
        self.opt_d.zero_grad()
        self.step_count += 1
        rec = comps.as_floats()
        rec.update(total=total.item(), disc=d_loss.item())
        return rec

    def run(self, until_epoch: Optional[int] = None, on_epoch: Optional[Callable[[dict], None]] = None) -> Checkpoint:
        """Train to ``until_epoch`` (default: the configured budget); returns the best checkpoint."""
        tc = self.config.train
        until = tc.epochs_stage1 if until_epoch is None else until_epoch
        last_good = self.checkpoint()
        while self.epoch < until:
            lr = lr_schedule(self.epoch, tc)
            recs = []
            try:
                for pairs in self.batches(self.epoch):
                    recs.append(self.train_step(pairs, lr))
            except NonFiniteError as exc:
                raise TrainingDiverged(f"stage 1 diverged at epoch {self.epoch}: {exc}", self.best or last_good) from exc
            self.epoch += 1
            train_psnr = _score(self.generate, self.dataset)[0]
            rec = {"stage": 1, "epoch": self.epoch, "step": self.step_count, "lr": lr}
            rec.update({k: float(np.mean([r[k] for r in recs])) for k in recs[0]})
            rec["psnr"] = train_psnr
            self.history.append(rec)
            self.improved = train_psnr > self.best_psnr
            if self.improved:
                self.best_psnr = train_psnr
                self.best = self.checkpoint()
            last_good = self.checkpoint()
            if on_epoch:
                on_epoch(rec)
        return self.best if self.best is not None else self.checkpoint()


def train_stage1(config: Config, dataset: Sequence[Pair], on_epoch=None) -> Checkpoint:
    return Stage1Trainer(config, dataset).run(on_epoch=on_epoch)


# --- stage II -----------------------------------------------------------------


class Stage2Trainer:
    """Refinement training with the dehazing module frozen, then joint fine-tuning.

    Both phases use the constant stage-II learning rate and drop the
    adversarial term.
    """

    def __init__(self, config: Config, stage1: Checkpoint, dataset: Sequence[Pair]) -> None:
        if not dataset:
            raise ValueError("dataset is empty")
        if not config.model.refinement_enabled:
            raise ValueError("stage II needs refinement_enabled=true")
        self.config = config
        self.dataset = list(dataset)
        self.model = build_model(config.model)
        self.model.load_state_dict({k: np.asarray(v, np.float64) for k, v in stage1.tensors.items()})
        tc = config.train
        self.weights = LossWeights(tc.loss_alpha, tc.loss_beta, tc.loss_gamma)
        self.opt = Adam(_prefixed(self.model, "model"), (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
        self.epoch = 0
        self.history: List[dict] = []

    def objective(self, pairs: Sequence[Pair]) -> Tensor:
        hazy, clean = _batch(pairs)
        comps = loss_components(self.model(hazy), clean, None)
        return combine_losses(comps, self.weights, include_adv=False)

    def dataset_objective(self) -> float:
        with no_grad():
            return float(np.mean([self.objective([p]).item() for p in self.dataset]))

    def _epoch(self, phase: str) -> dict:
        tc = self.config.train
        losses = []
        for pairs in epoch_batches(self.dataset, tc, self.epoch, salt=2):
            total = self.objective(pairs)
            if not total.is_finite():
                raise TrainingDiverged(f"stage 2 ({phase}) diverged at epoch {self.epoch}", self.checkpoint())
            backward(total)
            self.opt.step(tc.stage2_lr)
            self.opt.zero_grad()
            losses.append(total.item())
        self.epoch += 1
        return {"stage": 2, "phase": phase, "epoch": self.epoch, "lr": tc.stage2_lr, "total": float(np.mean(losses))}

    def run(self, on_epoch=None) -> Checkpoint:
        tc = self.config.train
        self.model.theta.requires_grad_(False)
        for _ in range(tc.epochs_stage2_refine):
            rec = self._epoch("refine")
            self.history.append(rec)
            if on_epoch:
                on_epoch(rec)
        self.model.theta.requires_grad_(True)
        for _ in range(tc.epochs_stage2_joint):
            rec = self._epoch("joint")
            self.history.append(rec)
            if on_epoch:
                on_epoch(rec)
        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        state = self.opt.state_dict("opt")
        state["meta.stage"] = np.array(2.0)
        state["meta.epoch"] = np.array(float(self.epoch))
        return Checkpoint(self.model.state_dict(), state)


def train_stage2(config: Config, stage1_ckpt: Checkpoint, dataset: Sequence[Pair], on_epoch=None) -> Checkpoint:
    return Stage2Trainer(config, stage1_ckpt, dataset).run(on_epoch=on_epoch)


# --- evaluation ---------------------------------------------------------------


def load_model(ckpt: Checkpoint, config: ModelConfig) -> DehazePipeline:
    model = DehazePipeline(config)
    model.load_state_dict({k: np.asarray(v, np.float64) for k, v in ckpt.tensors.items()})
    return model


def _score(fn, dataset: Sequence[Pair]) -> Tuple[float, float]:
    ps, ss = [], []
    with no_grad():
        for hazy, clean in dataset:
            out = fn(Tensor(hazy[None])).data
            ps.append(psnr(out, clean[None]))
            ss.append(ssim(out, clean[None]))
    return float(np.mean(ps)), float(np.mean(ss))


def evaluate(model: DehazePipeline, dataset: Sequence[Pair]) -> dict:
    """Mean PSNR/SSIM of the model, plus the hazy-input baseline."""
    hp, hs = _score(lambda x: x, dataset)
    p, s = _score(model, dataset)
    return {"psnr": p, "ssim": s, "hazy_psnr": hp, "hazy_ssim": hs}


def ablation_configs(config: Config) -> Dict[str, Tuple[Config, bool]]:
    """Per-row ``(config, refine_only)`` for the break-down ablation.

    Each variant is trained separately with the stage-I recipe, without the
    refinement stage except for the no-dehazing row, which trains only it.
    """
    def variant(**model_changes) -> Config:
        m = replace(config.model, **model_changes)
        return Config(m.validate(), replace(config.train))

    return {
        "w/o_Refinement_module": (variant(refinement_enabled=False), False),
        "w/o_Dehazing_module": (variant(refinement_enabled=True), True),
        "only_main_branch": (variant(refinement_enabled=False, frequency_branch_enabled=False, main_branch_enabled=True), False),
        "only_frequency_branch": (variant(refinement_enabled=False, main_branch_enabled=False, frequency_branch_enabled=True), False),
    }


@dataclass
class AblationVariant:
    row: str
    model: DehazePipeline
    refine_only: bool

    def __call__(self, x: Tensor) -> Tensor:
        return self.model(x, skip_dehaze=True) if self.refine_only else self.model.theta(x)


def train_ablations(config: Config, dataset: Sequence[Pair], on_epoch=None,
                    stage1: Optional[Checkpoint] = None) -> List[AblationVariant]:
    """Train the four ablation variants.

    ``stage1`` (a checkpoint of the full model's stage I) stands in for the
    no-refinement row when given, since it is exactly that model.
    """
    out = []
    for row, (cfg, refine_only) in ablation_configs(config).items():
        if row == "w/o_Refinement_module" and stage1 is not None:
            model = load_model(stage1, config.model)
        else:
            trainer = Stage1Trainer(cfg, dataset, refine_only=refine_only)
            ckpt = trainer.run(on_epoch=(lambda r, row=row: on_epoch(dict(r, variant=row))) if on_epoch else None)
            model = load_model(ckpt, cfg.model)
        out.append(AblationVariant(row, model, refine_only))
    return out


def ablation_table(variants: Sequence[AblationVariant], dataset: Sequence[Pair]) -> List[dict]:
    rows = []
    for v in variants:
        p, s = _score(v, dataset)
        rows.append({"row": v.row, "psnr": p, "ssim": s})
    return rows


def smoke_config(seed: int = 0) -> Config:
    """Desk-scale overfit recipe: 300 stage-I epochs at a raised learning rate."""
    cfg = Config()
    cfg.model.seed = seed
    t = cfg.train
    t.seed = seed
    t.lr_init = 2e-3
    t.disc_lr = 2e-3
    t.epochs_stage1 = 300
    t.epochs_stage2_refine = 5
    t.epochs_stage2_joint = 5
    return cfg
