"""Training loops: dense fitting, the alternating optimize/sparsify
schedule with zero-splat removal and light tuning, and one-shot pruning
baselines for comparison.

A run walks ``total_iters`` gradient steps. For the sparsified run the
phases are: dense warmup until ``sparsify_start_iter``; a constrained
phase where every step adds the coupling gradient (chained through the
opacity sigmoid) and every ``sparsify_interval`` steps refreshes z and
the multiplier; physical removal of splats outside z's support at
``prune_iter`` (leaving exactly kappa alive); light tuning to the end
with the coupling dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sparsifier as sp
from .errors import (
    InvalidBudgetError,
    InvalidParameterError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .gs_core import (
    CLOUD_COLUMNS,
    PARAM_COLUMNS,
    GaussianCloud,
    inverse_sigmoid,
    sigmoid,
)
from .loss_metrics import LossConfig, loss, psnr, ssim
from .renderer import RenderSettings, render, render_backward, render_weight_sums

OPACITY_HIST_BINS = 32

# prune criterion tags
PRUNE_ZERO_Z = "zero-z"
PRUNE_OPACITY = "opacity-magnitude"
PRUNE_HIT_COUNT = "hit-count"
PRUNE_CRITERIA = (PRUNE_ZERO_Z, PRUNE_OPACITY, PRUNE_HIT_COUNT)


@dataclass
class TrainSchedule:
    total_iters: int
    sparsify_start_iter: int
    prune_iter: int
    lr_position: float
    lr_theta: float = 5e-3
    lr_log_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    # position rate decays exponentially to lr_position * final_scale at the
    # last iteration, per the usual splat-training recipe; 1.0 = constant
    lr_position_final_scale: float = 1e-2
    rng_seed: int = 0
    eval_every: int = 50


def make_schedule(width, height, total_iters=8000, sparsify_start_iter=3000,
                  prune_iter=6000, rng_seed=0, eval_every=50, **lr_overrides):
    """Desk-scale defaults; the position rate scales with the image diagonal
    (1.6e-4 * diagonal, decaying 100x over the run)."""
    lrs = dict(lr_position=1.6e-4 * math.hypot(width, height))
    lrs.update(lr_overrides)
    return TrainSchedule(total_iters=total_iters,
                         sparsify_start_iter=sparsify_start_iter,
                         prune_iter=prune_iter, rng_seed=rng_seed,
                         eval_every=eval_every, **lrs)


def validate_schedule(schedule, mode="dense"):
    """Check milestone consistency for the given run mode and report
    whether the sparsifying phase is enabled (start before the end)."""
    s = schedule
    if s.total_iters < 0 or s.eval_every < 1:
        raise InvalidParameterError("total_iters must be >= 0 and eval_every >= 1")
    sparsify_enabled = s.sparsify_start_iter < s.total_iters
    if mode == "gaussianspa" and sparsify_enabled:
        if not (0 <= s.sparsify_start_iter < s.prune_iter <= s.total_iters):
            raise InvalidParameterError(
                f"milestones must satisfy 0 <= sparsify_start_iter "
                f"({s.sparsify_start_iter}) < prune_iter ({s.prune_iter}) "
                f"<= total_iters ({s.total_iters})")
    if mode == "baseline" and not (1 <= s.prune_iter <= s.total_iters):
        raise InvalidParameterError(
            f"prune_iter ({s.prune_iter}) must lie in [1, total_iters "
            f"({s.total_iters})] for a one-shot baseline")
    return sparsify_enabled


@dataclass
class SparsifyConfig:
    """Outer-loop hyperparameters; epsilon defaults to 1e-4 * kappa and
    max_outer to the number of events fitting before the prune."""

    kappa: int
    delta: float = 1e-2
    epsilon: float | None = None
    max_outer: int | None = None
    interval: int = 50
    criterion: sp.ProjectionCriterion | None = None


@dataclass
class OneShotConfig:
    criterion: str
    keep_fraction: float

    def __post_init__(self):
        if self.criterion not in (PRUNE_OPACITY, PRUNE_HIT_COUNT):
            raise InvalidParameterError(
                f"one-shot criterion must be one of "
                f"{(PRUNE_OPACITY, PRUNE_HIT_COUNT)}, got {self.criterion!r}")
        if not (0.0 < self.keep_fraction < 1.0):
            raise InvalidParameterError("keep_fraction must be in (0, 1)")


class AdamState:
    """Per-column Adam moments (beta1=0.9, beta2=0.999 by default)."""

    def __init__(self, cloud, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(getattr(cloud, k)) for k in PARAM_COLUMNS}
        self.v = {k: np.zeros_like(getattr(cloud, k)) for k in PARAM_COLUMNS}

    def apply(self, cloud, grads, lrs):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for key in PARAM_COLUMNS:
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            getattr(cloud, key)[...] -= lrs[key] * update

    def compact(self, keep_indices):
        keep = np.asarray(keep_indices, dtype=np.int64)
        for key in PARAM_COLUMNS:
            self.m[key] = self.m[key][keep].copy()
            self.v[key] = self.v[key][keep].copy()


def init_cloud(gt_image, n, seed):
    """Random cloud covering the target image.

    Positions are uniform over the image, colors are sampled from the
    target at the position, both scales start at sqrt(H*W/n)/2 pixels and
    opacities at 0.1. Deterministic for a fixed seed.
    """
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    gt = np.asarray(gt_image, dtype=np.float64)
    h, w = gt.shape[0], gt.shape[1]
    rng = np.random.default_rng(seed)
    mu = rng.uniform(size=(n, 2)) * np.array([w, h], dtype=np.float64)
    order_key = rng.uniform(size=n)
    px = np.clip(mu[:, 0].astype(np.int64), 0, w - 1)
    py = np.clip(mu[:, 1].astype(np.int64), 0, h - 1)
    color = gt[py, px].copy()
    scale = math.sqrt(h * w / n) / 2.0
    return GaussianCloud(
        mu=mu,
        theta=np.zeros(n),
        log_s=np.full((n, 2), math.log(scale)),
        opacity_logit=np.full(n, inverse_sigmoid(0.1)),
        color=color,
        order_key=order_key,
        alive_mask=np.ones(n, dtype=bool),
    )


def hit_count_scores(cloud, gt_views, settings):
    """Accumulated blend-weight mass per splat over the given views.

    Each view contributes sum over pixels of alpha_i * transmittance_i;
    the view images only fix how many render passes are taken (the single
    training view in this testbed)."""
    scores = np.zeros(cloud.n)
    for view in gt_views:
        view = np.asarray(view)
        if view.shape[:2] != (settings.height, settings.width):
            raise ShapeMismatchError(
                f"view shape {view.shape[:2]} != render target "
                f"{(settings.height, settings.width)}")
        scores += render_weight_sums(cloud, settings)[1]
    return scores


def prune_keep_indices(cloud, keep_count, criterion, *, z=None, gt_views=None,
                       settings=None):
    """Top-``keep_count`` splat indices under a prune criterion, ascending."""
    if criterion == PRUNE_ZERO_Z:
        scores = np.abs(z)
    elif criterion == PRUNE_OPACITY:
        scores = cloud.opacities()
    elif criterion == PRUNE_HIT_COUNT:
        scores = hit_count_scores(cloud, gt_views, settings)
    else:
        raise InvalidParameterError(f"unknown prune criterion {criterion!r}")
    return np.sort(sp.top_k_indices(scores, keep_count))


@dataclass
class TrainResult:
    cloud: GaussianCloud
    metrics: list
    residuals: list
    opacity_hists: list
    events: dict
    prune_render_before: np.ndarray | None
    prune_render_after: np.ndarray | None
    checkpoint: "object"


class TrainerSession:
    """Owns one training run: cloud, optimizer, sparsifier state, logs.

    ``step()`` executes one gradient iteration; ``run()`` drives the loop
    to ``total_iters``. All state needed to resume bit-identically is
    captured by ``checkpoint()``.
    """

    def __init__(self, cloud, gt, schedule, *, loss_config=None,
                 render_settings=None, sparsify=None, oneshot=None):
        if sparsify is not None and oneshot is not None:
            raise InvalidParameterError("sparsify and oneshot are exclusive")
        self.gt = np.asarray(gt, dtype=np.float64)
        if self.gt.ndim != 3 or self.gt.shape[2] != 3:
            raise ShapeMismatchError(f"gt must be H x W x 3, got {self.gt.shape}")
        self.cloud = cloud
        self.schedule = schedule
        self.loss_config = loss_config or LossConfig()
        self.settings = render_settings or RenderSettings(
            width=self.gt.shape[1], height=self.gt.shape[0])
        if (self.settings.height, self.settings.width) != self.gt.shape[:2]:
            raise ShapeMismatchError("render settings do not match the target size")
        self.sparsify_cfg = sparsify
        self.oneshot_cfg = oneshot
        mode = "gaussianspa" if sparsify is not None else (
            "baseline" if oneshot is not None else "dense")
        self.sparsify_enabled = (
            validate_schedule(schedule, mode) and sparsify is not None)

        self.optimizer = AdamState(cloud)
        self.state = None
        self.iteration = 0
        self.rng = np.random.default_rng(schedule.rng_seed)
        self.metrics = []
        self.residuals = []
        self.opacity_hists = []
        self.events = {}
        self.prune_render_before = None
        self.prune_render_after = None

    # -- helpers ---------------------------------------------------------

    @property
    def mode(self):
        if self.sparsify_cfg is not None:
            return "gaussianspa"
        if self.oneshot_cfg is not None:
            return "baseline"
        return "dense"

    @property
    def pruned(self):
        prunes = self.sparsify_enabled or self.oneshot_cfg is not None
        return prunes and self.iteration >= self.schedule.prune_iter

    @property
    def sparsifier_active(self):
        return self.state is not None and not self.pruned

    def _lrs(self):
        s = self.schedule
        frac = min(self.iteration / max(s.total_iters, 1), 1.0)
        lr_pos = s.lr_position * s.lr_position_final_scale ** frac
        return {"mu": lr_pos, "theta": s.lr_theta, "log_s": s.lr_log_scale,
                "opacity_logit": s.lr_opacity, "color": s.lr_color}

    def _eval_iters(self):
        s = self.schedule
        forced = {0, s.total_iters - 1}
        if self.sparsify_enabled or self.oneshot_cfg is not None:
            forced |= {s.prune_iter - 1, s.prune_iter, s.prune_iter + 1}
        if self.sparsify_enabled:
            forced.add(s.sparsify_start_iter)
        return forced

    def _diverged_column(self):
        for name in CLOUD_COLUMNS[:-1]:
            if not np.all(np.isfinite(getattr(self.cloud, name))):
                return name
        return "loss"

    def _hist_row(self, iteration):
        a = self.cloud.opacities()[self.cloud.alive_mask]
        counts, _ = np.histogram(a, bins=OPACITY_HIST_BINS, range=(0.0, 1.0))
        return {"iter": iteration, "counts": counts}

    def _init_sparsifier(self):
        cfg = self.sparsify_cfg
        alive = self.cloud.alive_count
        if cfg.kappa >= alive:
            raise InvalidBudgetError(
                f"kappa ({cfg.kappa}) must be < alive splat count ({alive})")
        s = self.schedule
        epsilon = cfg.epsilon if cfg.epsilon is not None else 1e-4 * cfg.kappa
        if cfg.max_outer is not None:
            max_outer = cfg.max_outer
        else:
            max_outer = max(1, (s.prune_iter - s.sparsify_start_iter) // cfg.interval)
        self.state = sp.init_state(self.cloud.opacities(), cfg.delta, cfg.kappa,
                                   epsilon, max_outer, cfg.interval)

    def _prune_zero_z(self):
        self.opacity_hists.append(self._hist_row(self.schedule.prune_iter))
        before = render(self.cloud, self.settings)
        alive_before = self.cloud.alive_count
        keep = prune_keep_indices(self.cloud, self.state.kappa, PRUNE_ZERO_Z,
                                  z=self.state.z)
        self._compact(keep)
        sp.compact_state(self.state, keep)
        after = render(self.cloud, self.settings)
        self.prune_render_before = before
        self.prune_render_after = after
        self.events["prune"] = {
            "iter": self.schedule.prune_iter,
            "criterion": PRUNE_ZERO_Z,
            "alive_before": alive_before,
            "alive_after": self.cloud.alive_count,
            "psnr_before": psnr(before, self.gt),
            "psnr_after": psnr(after, self.gt),
            "agreement_psnr": psnr(before, after),
        }

    def _prune_oneshot(self):
        cfg = self.oneshot_cfg
        before = render(self.cloud, self.settings)
        alive_before = self.cloud.alive_count
        keep_count = int(round(cfg.keep_fraction * alive_before))
        keep_count = min(max(keep_count, 1), alive_before)
        keep = prune_keep_indices(self.cloud, keep_count, cfg.criterion,
                                  gt_views=[self.gt], settings=self.settings)
        self._compact(keep)
        after = render(self.cloud, self.settings)
        self.prune_render_before = before
        self.prune_render_after = after
        self.events["prune"] = {
            "iter": self.schedule.prune_iter,
            "criterion": cfg.criterion,
            "alive_before": alive_before,
            "alive_after": self.cloud.alive_count,
            "psnr_before": psnr(before, self.gt),
            "psnr_after": psnr(after, self.gt),
            "agreement_psnr": psnr(before, after),
        }

    def _compact(self, keep):
        self.cloud = self.cloud.compact(keep)
        self.optimizer.compact(keep)

    # -- the loop --------------------------------------------------------

    def step(self):
        i = self.iteration
        s = self.schedule
        if self.sparsify_enabled and i == s.sparsify_start_iter and self.state is None:
            self._init_sparsifier()

        image = render(self.cloud, self.settings)
        loss_val, d_image = loss(image, self.gt, self.loss_config)
        if not np.isfinite(loss_val):
            raise TrainingDivergedError(i, self._diverged_column())

        if i % s.eval_every == 0 or i in self._eval_iters():
            row = {
                "iter": i,
                "loss": loss_val,
                "psnr": psnr(image, self.gt),
                "ssim": ssim(image, self.gt, self.loss_config),
                "alive": self.cloud.alive_count,
            }
            if self.sparsifier_active:
                a = self.cloud.opacities()
                penalty, dual_sq = sp.penalty_terms(a, self.state)
                row["penalty"] = penalty
                row["lagrangian"] = loss_val + penalty
                row["lagrangian_with_dual_norm"] = loss_val + penalty + dual_sq
                self.opacity_hists.append(self._hist_row(i))
            self.metrics.append(row)

        buffers = render_backward(self.cloud, self.settings, d_image)
        grads = buffers.param_grads()
        if self.sparsifier_active:
            a = self.cloud.opacities()
            coupling = sp.coupling_gradient(a, self.state)
            grads["opacity_logit"] = grads["opacity_logit"] + coupling * a * (1.0 - a)
        self.optimizer.apply(self.cloud, grads, self._lrs())

        if self.sparsifier_active and not self.state.converged:
            if (i - s.sparsify_start_iter + 1) % self.state.sparsify_interval == 0:
                a = self.cloud.opacities()
                # the convergence guard applies from the second event on:
                # right after init z == a would satisfy it vacuously
                if self.state.outer_count >= 1 and sp.converged(
                        self.state, a, self.state.outer_count):
                    self.state.converged = True
                    self.residuals.append(
                        {"iter": i, "residual": sp.residual(a, self.state)})
                else:
                    criterion = self.sparsify_cfg.criterion
                    sp.sparsify_step(a, self.state, criterion)
                    sp.multiplier_update(a, self.state)
                    self.state.outer_count += 1
                    self.residuals.append(
                        {"iter": i, "residual": sp.residual(a, self.state)})

        # physical removal happens when the counter reaches prune_iter, so
        # a checkpoint taken at that boundary already holds the compact cloud
        if i + 1 == s.prune_iter:
            if self.sparsify_enabled and self.state is not None:
                self._prune_zero_z()
            elif self.oneshot_cfg is not None:
                self._prune_oneshot()
        self.iteration = i + 1

    def run(self):
        while self.iteration < self.schedule.total_iters:
            self.step()
        return self

    # -- persistence -----------------------------------------------------

    def checkpoint(self):
        from .model_io import CheckpointModel, CHECKPOINT_VERSION

        return CheckpointModel(
            version=CHECKPOINT_VERSION,
            iteration=self.iteration,
            mode=self.mode,
            cloud=self.cloud,
            optimizer=self.optimizer,
            sparsifier=self.state,
            schedule=self.schedule,
            sparsify_config=self.sparsify_cfg,
            oneshot_config=self.oneshot_cfg,
            loss_config=self.loss_config,
            render_settings=self.settings,
            rng_state=self.rng.bit_generator.state,
        )

    @classmethod
    def resume(cls, model, gt):
        """Rebuild a session from a checkpoint; the caller supplies the
        target image (not stored in checkpoints)."""
        session = cls(model.cloud, gt, model.schedule,
                      loss_config=model.loss_config,
                      render_settings=model.render_settings,
                      sparsify=model.sparsify_config,
                      oneshot=model.oneshot_config)
        session.optimizer = model.optimizer
        session.state = model.sparsifier
        session.iteration = model.iteration
        session.rng.bit_generator.state = model.rng_state
        return session

    def result(self):
        return TrainResult(
            cloud=self.cloud,
            metrics=self.metrics,
            residuals=self.residuals,
            opacity_hists=self.opacity_hists,
            events=self.events,
            prune_render_before=self.prune_render_before,
            prune_render_after=self.prune_render_after,
            checkpoint=self.checkpoint(),
        )


def train_dense(cloud, gt, schedule, *, loss_config=None, render_settings=None):
    """Fit the cloud to the target with the sparsifier disabled."""
    session = TrainerSession(cloud, gt, schedule, loss_config=loss_config,
                             render_settings=render_settings)
    return session.run().result()


def train_gaussianspa(cloud, gt, schedule, sparsify_cfg, *, loss_config=None,
                      render_settings=None):
    """Full sparsified run: warmup, optimize/sparsify, prune, light tuning."""
    session = TrainerSession(cloud, gt, schedule, loss_config=loss_config,
                             render_settings=render_settings, sparsify=sparsify_cfg)
    return session.run().result()


def oneshot_prune_baseline(cloud, gt, schedule, criterion, keep_fraction, *,
                           loss_config=None, render_settings=None):
    """Dense training with a single hard prune at ``prune_iter``."""
    cfg = OneShotConfig(criterion=criterion, keep_fraction=keep_fraction)
    session = TrainerSession(cloud, gt, schedule, loss_config=loss_config,
                             render_settings=render_settings, oneshot=cfg)
    return session.run().result()
