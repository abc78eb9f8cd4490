"""Alternating adversarial training, evaluation and run history.

Each step runs the generator once in train mode, then
``d_steps_per_g_step`` discriminator updates on the detached generator
output, then one generator update on ``adv_g + lambda_rec * rec`` with the
discriminator frozen. The discriminator always scores generated and real
maps in a single concatenated batch so batch-norm statistics never separate
the two.

Data order is a pure function of ``(seed, step)``: step ``s`` falls in
epoch ``s // batches_per_epoch``, whose shuffle and augmentation come from
fixed substreams of the run seed. Resuming therefore needs only the step
counter plus network and optimizer state.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from itertools import islice
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from adverseg.core import losses
from adverseg.core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from adverseg.core.losses import LossBreakdown
from adverseg.core.metrics import ConfusionCounts, MetricsReport, argmax_labels, confusion
from adverseg.core.models import (
    DiscriminatorNet,
    GeneratorNet,
    NetConfig,
    build_discriminator,
    build_generator,
    discriminator_input,
)
from adverseg.core.optim import Adam, AdamState
from adverseg.core.rng import Rng
from adverseg.data.manifest import batch_iter, load_samples, split_indices
from adverseg.data.models import AugmentPolicy, Batch, DatasetManifest, Sample
from adverseg.errors import ConfigError, DataError, NonFiniteError

logger = logging.getLogger("adverseg.training")

# Substream indices of the run seed.
GEN_INIT_STREAM = 1
DISC_INIT_STREAM = 2
SHUFFLE_STREAM = 3
AUGMENT_STREAM = 4

HISTORY_NAME = "history.txt"
REPORT_NAME = "report.txt"
FINAL_NAME = "final.ckpt"
BEST_NAME = "best.ckpt"
PARTIAL_NAME = "partial.ckpt"

Source = Union[DatasetManifest, Sequence[Sample]]


@dataclass
class TrainConfig:
    """Optimization schedule, loss weighting and data policy of a run."""

    steps: int = 200
    batch_size: int = 16
    lr: float = 1e-4
    lambda_rec: float = 10.0
    seed: int = 0
    d_steps_per_g_step: int = 1
    adversarial: bool = True
    loss_convention: losses.Convention = "minmax"
    recon_mode: losses.ReconMode = "bce"
    label_smoothing: bool = False
    clip_norm: float = 0.0
    eval_every: int = 50
    holdout_fraction: float = 0.2
    model_name: str = "Ours"
    augment_enabled: bool = True
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self) -> None:
        if self.lambda_rec < 0:
            raise ConfigError(f"lambda_rec must be >= 0, got {self.lambda_rec}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.d_steps_per_g_step < 1:
            raise ConfigError("d_steps_per_g_step must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0")
        if self.loss_convention not in ("minmax", "standard"):
            raise ConfigError(f"unknown loss_convention '{self.loss_convention}'")
        if self.recon_mode not in ("bce", "categorical"):
            raise ConfigError(f"unknown recon_mode '{self.recon_mode}'")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["augment"] = {k: list(v) if isinstance(v, tuple) else v
                           for k, v in data["augment"].items()}
        data["net"] = self.net.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        augment = data.pop("augment", {})
        net = data.pop("net", {})
        return cls(
            **data,
            augment=AugmentPolicy(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in augment.items()}),
            net=NetConfig.from_dict(net) if net else NetConfig(),
        )


@dataclass
class TrainState:
    """Networks, optimizers and counters owned by the training driver."""

    gen: GeneratorNet
    disc: DiscriminatorNet
    opt_g: Adam
    opt_d: Adam
    step: int = 0
    best_dice: Optional[float] = None
    last_scores: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, cfg: TrainConfig) -> "TrainState":
        root = Rng(cfg.seed)
        gen = build_generator(cfg.net, root.substream(GEN_INIT_STREAM))
        disc = build_discriminator(cfg.net, root.substream(DISC_INIT_STREAM))
        return cls(
            gen=gen,
            disc=disc,
            opt_g=Adam(gen, lr=cfg.lr, clip_norm=cfg.clip_norm),
            opt_d=Adam(disc, lr=cfg.lr, clip_norm=cfg.clip_norm),
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: TrainConfig) -> "TrainState":
        if ckpt.net_config != cfg.net:
            raise ConfigError("checkpoint network config does not match the run config")
        if ckpt.adam_g.lr != cfg.lr:
            logger.warning("resuming with the checkpoint's lr %g, not %g", ckpt.adam_g.lr, cfg.lr)
        gen = ckpt.restore_generator()
        disc = ckpt.restore_discriminator()
        opt_g = Adam(gen, clip_norm=cfg.clip_norm)
        opt_d = Adam(disc, clip_norm=cfg.clip_norm)
        opt_g.state = _copy_adam(ckpt.adam_g)
        opt_d.state = _copy_adam(ckpt.adam_d)
        return cls(
            gen=gen,
            disc=disc,
            opt_g=opt_g,
            opt_d=opt_d,
            step=ckpt.step,
            best_dice=ckpt.extras.get("best_dice"),
        )

    def to_checkpoint(self, cfg: TrainConfig) -> Checkpoint:
        return Checkpoint(
            net_config=cfg.net,
            step=self.step,
            rng_state=Rng(cfg.seed).get_state(),
            generator=self.gen.state_arrays(),
            discriminator=self.disc.state_arrays(),
            adam_g=_copy_adam(self.opt_g.state),
            adam_d=_copy_adam(self.opt_d.state),
            train_config=cfg.to_dict(),
            extras={"best_dice": self.best_dice},
        )


def _copy_adam(state: AdamState) -> AdamState:
    return AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        t=state.t,
        m={k: v.copy() for k, v in state.m.items()},
        v={k: v.copy() for k, v in state.v.items()},
    )


def format_history_line(step: int, loss: LossBreakdown) -> str:
    return (
        f"step={step} rec={loss.rec!r} adv_d={loss.adv_d!r} "
        f"adv_g={loss.adv_g!r} total_g={loss.total_g!r}"
    )


def parse_history_line(line: str) -> tuple[int, LossBreakdown]:
    try:
        fields = dict(token.split("=", 1) for token in line.split())
        return int(fields["step"]), LossBreakdown(
            rec=float(fields["rec"]),
            adv_d=float(fields["adv_d"]),
            adv_g=float(fields["adv_g"]),
            total_g=float(fields["total_g"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed history line: {line!r}") from exc


@dataclass
class RunHistory:
    """Per-step losses and per-evaluation reports."""

    steps: list[tuple[int, LossBreakdown]] = field(default_factory=list)
    evals: list[tuple[int, MetricsReport]] = field(default_factory=list)

    def record(self, step: int, loss: LossBreakdown) -> None:
        if self.steps and step <= self.steps[-1][0]:
            raise ValueError(f"history step {step} is not after {self.steps[-1][0]}")
        self.steps.append((step, loss))

    def record_eval(self, step: int, report: MetricsReport) -> None:
        self.evals.append((step, report))

    def truncated(self, step: int) -> "RunHistory":
        """Entries up to and including ``step``."""
        return RunHistory(
            steps=[(s, l) for s, l in self.steps if s <= step],
            evals=[(s, r) for s, r in self.evals if s <= step],
        )

    def lines(self) -> list[str]:
        return [format_history_line(step, loss) for step, loss in self.steps]

    def write(self, path: Path | str) -> None:
        text = "\n".join(self.lines())
        Path(path).write_text(text + "\n" if text else "")

    @classmethod
    def read(cls, path: Path | str) -> "RunHistory":
        history = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                history.record(*parse_history_line(line))
        return history


def _smooth(one_hot: np.ndarray, enabled: bool) -> np.ndarray:
    return one_hot * 0.8 + 0.1 if enabled else one_hot


def _checked(loss: LossBreakdown, step: int) -> LossBreakdown:
    bad = loss.first_non_finite()
    if bad is not None:
        raise NonFiniteError(bad, step)
    return loss


def _apply(opt: Adam, step: int) -> None:
    try:
        opt.step()
    except NonFiniteError as exc:
        raise NonFiniteError(exc.name, step) from exc


def _snapshot(state: TrainState) -> tuple:
    return (
        state.gen.state_arrays(),
        state.disc.state_arrays(),
        _copy_adam(state.opt_g.state),
        _copy_adam(state.opt_d.state),
        state.last_scores,
    )


def _restore(state: TrainState, saved: tuple) -> None:
    gen, disc, adam_g, adam_d, last_scores = saved
    state.gen.load_state_arrays(gen)
    state.disc.load_state_arrays(disc)
    state.opt_g.state = adam_g
    state.opt_d.state = adam_d
    state.last_scores = last_scores
    state.gen.zero_grad()
    state.disc.zero_grad()
    state.gen.clear_cache()
    state.disc.clear_cache()


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig) -> LossBreakdown:
    """One alternating update; returns the losses measured before the updates.

    A step that raises :class:`NonFiniteError` leaves both networks, their
    running statistics and both optimizers exactly as they were.
    """
    saved = _snapshot(state)
    try:
        return _alternating_step(state, batch, cfg)
    except NonFiniteError:
        _restore(state, saved)
        raise


def _alternating_step(state: TrainState, batch: Batch, cfg: TrainConfig) -> LossBreakdown:
    step = state.step + 1
    net = cfg.net
    gen, disc = state.gen, state.disc
    x = batch.images
    y = batch.one_hot
    n = batch.size

    prob = gen.forward(x, train=True, update_stats=True)
    rec, g_rec = losses.reconstruction_loss(prob, y, cfg.recon_mode)

    if not cfg.adversarial:
        total = losses.total_generator_objective(0.0, rec, cfg.lambda_rec)
        loss = _checked(LossBreakdown(rec=rec, total_g=total), step)
        gen.zero_grad()
        gen.backward(cfg.lambda_rec * g_rec)
        _apply(state.opt_g, step)
        return loss

    real = discriminator_input(_smooth(y, cfg.label_smoothing).astype(prob.dtype), x, net)
    fake = discriminator_input(prob.copy(), x, net)
    pair = np.concatenate([fake, real])

    adv_d = 0.0
    for _ in range(cfg.d_steps_per_g_step):
        scores = disc.forward(pair, train=True, update_stats=True)
        adv_d, (g_fake, g_real) = losses.discriminator_loss(
            scores[:n], scores[n:], cfg.loss_convention
        )
        _checked(LossBreakdown(rec=rec, adv_d=adv_d), step)
        disc.zero_grad()
        # D ascends its objective.
        disc.backward(-np.concatenate([g_fake, g_real]))
        _apply(state.opt_d, step)

    scores = disc.forward(pair, train=True, update_stats=False)
    state.last_scores = scores.copy()
    adv_g, g_adv = losses.generator_adversarial_loss(scores[:n])
    total = losses.total_generator_objective(adv_g, rec, cfg.lambda_rec)
    loss = _checked(LossBreakdown(rec=rec, adv_d=adv_d, adv_g=adv_g, total_g=total), step)

    grad_scores = np.zeros_like(scores)
    grad_scores[:n] = g_adv
    g_prob = disc.backward(grad_scores)[:n, : net.num_classes]
    disc.zero_grad()

    gen.zero_grad()
    gen.backward(g_prob + cfg.lambda_rec * g_rec)
    _apply(state.opt_g, step)
    return loss


class Segmenter(Protocol):
    def forward(self, x: np.ndarray, train: bool = True, update_stats: bool = True) -> np.ndarray:
        ...

    def clear_cache(self) -> None:
        ...


def _as_samples(source: Source) -> Sequence[Sample]:
    if isinstance(source, DatasetManifest):
        return load_samples(source)
    return source


def evaluate(
    gen: Segmenter,
    source: Source,
    num_classes: int,
    model_name: str = "Ours",
    include_absent: bool = False,
    batch_size: int = 16,
) -> MetricsReport:
    """Eval-mode forward over every sample, argmax labels, aggregated counts."""
    samples = _as_samples(source)
    if not samples:
        raise DataError("cannot evaluate on an empty dataset")
    counts = ConfusionCounts.empty(num_classes)
    for batch in batch_iter(samples, batch_size, num_classes):
        prob = gen.forward(batch.images, train=False, update_stats=False)
        gen.clear_cache()
        counts = counts + confusion(argmax_labels(prob), batch.labels, num_classes)
    return MetricsReport.from_counts(model_name, counts, include_absent=include_absent)


@dataclass
class TrainResult:
    gen: GeneratorNet
    disc: DiscriminatorNet
    history: RunHistory
    checkpoint: Checkpoint
    report: Optional[MetricsReport] = None


StepCallback = Callable[[int, LossBreakdown, TrainState], None]


def _check_data(samples: Sequence[Sample], net: NetConfig) -> None:
    first = samples[0]
    if first.in_channels != net.in_channels:
        raise ConfigError(
            f"data has {first.in_channels} input channels, network expects {net.in_channels}"
        )
    net.check_spatial(first.height, first.width)


def train(
    source: Source,
    cfg: TrainConfig,
    out_dir: Optional[Path | str] = None,
    resume: Optional[Union[Checkpoint, Path, str]] = None,
    callback: Optional[StepCallback] = None,
) -> TrainResult:
    """Run ``cfg.steps`` training steps; fully determined by data, config and seed.

    With ``out_dir`` the history, final report, ``final.ckpt`` and
    ``best.ckpt`` (best held-out foreground Dice among the evaluations every
    ``eval_every`` steps) are written there; an abort
    on a non-finite value leaves ``partial.ckpt`` and the history so far.
    """
    samples = _as_samples(source)
    if not samples:
        raise DataError("cannot train on an empty dataset")
    if isinstance(source, DatasetManifest) and source.num_classes != cfg.net.num_classes:
        raise ConfigError(
            f"manifest declares {source.num_classes} classes, network has {cfg.net.num_classes}"
        )
    _check_data(samples, cfg.net)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    train_idx, held_idx = split_indices(len(samples), cfg.holdout_fraction)
    train_set = [samples[i] for i in train_idx]
    held_set = [samples[i] for i in held_idx]
    num_classes = cfg.net.num_classes

    history = RunHistory()
    if resume is not None:
        ckpt = load_checkpoint(resume) if not isinstance(resume, Checkpoint) else resume
        state = TrainState.from_checkpoint(ckpt, cfg)
        if out is not None and (out / HISTORY_NAME).is_file():
            history = RunHistory.read(out / HISTORY_NAME).truncated(state.step)
        logger.info("resuming at step %d", state.step)
    else:
        state = TrainState.initial(cfg)

    root = Rng(cfg.seed)
    policy = cfg.augment if cfg.augment_enabled else None
    per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    last_eval = None
    report = None

    def run_eval(track_best: bool = True) -> Optional[MetricsReport]:
        if not held_set:
            return None
        result = evaluate(state.gen, held_set, num_classes, cfg.model_name)
        history.record_eval(state.step, result)
        logger.info(
            "step %d: held-out pa=%.4f dice=%.4f", state.step, result.pixel_accuracy, result.dice
        )
        if not track_best or math.isnan(result.dice):
            return result
        if state.best_dice is None or result.dice > state.best_dice:
            state.best_dice = result.dice
            if out is not None:
                save_checkpoint(out / BEST_NAME, state.to_checkpoint(cfg))
        return result

    try:
        while state.step < cfg.steps:
            epoch, skip = divmod(state.step, per_epoch)
            batches = batch_iter(
                train_set,
                cfg.batch_size,
                num_classes,
                shuffle_rng=root.substream(SHUFFLE_STREAM).substream(epoch),
                augment_rng=root.substream(AUGMENT_STREAM).substream(epoch),
                policy=policy,
            )
            for batch in islice(batches, skip, None):
                loss = train_step(state, batch, cfg)
                state.step += 1
                history.record(state.step, loss)
                logger.debug("%s", format_history_line(state.step, loss))
                if callback is not None:
                    callback(state.step, loss, state)
                if state.step % cfg.eval_every == 0:
                    report = run_eval()
                    last_eval = state.step
                if state.step >= cfg.steps:
                    break
    except NonFiniteError:
        if out is not None:
            save_checkpoint(out / PARTIAL_NAME, state.to_checkpoint(cfg))
            history.write(out / HISTORY_NAME)
        raise

    if last_eval != state.step:
        # Off-schedule evaluations never move the best checkpoint.
        report = run_eval(track_best=False)
    checkpoint = state.to_checkpoint(cfg)
    if out is not None:
        save_checkpoint(out / FINAL_NAME, checkpoint)
        history.write(out / HISTORY_NAME)
        if report is not None:
            (out / REPORT_NAME).write_text(report.to_kv() + "\n")
    return TrainResult(state.gen, state.disc, history, checkpoint, report)
