"""Online inner-loop adaptation and episodic meta-training.

The online optimizer runs plain SGD on a copy of the trainable parameters:
S sweeps over K support pairs, one gradient step per pair.  The meta-trainer
wraps it: per epoch it samples T tasks, adapts a fresh copy on K pairs each,
re-samples K held-out pairs, and steps the shared initialization against the
averaged post-adaptation loss with a cosine-annealed learning rate.  The
meta-gradient is first-order by default (gradient at the adapted weights);
the second-order flag differentiates through the inner updates themselves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ParameterError, Tape, Tensor, backward
from .data import Episode, dsc, make_episodes
from .losses import LossReport, pair_loss
from .model import ModelConfig, forward, init_model, predict
from .params import ParamSet
from .prompt import sample_points
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 1e-2          # inner SGD step
    beta0: float = 2e-4          # initial outer learning rate
    eta_min: float = 0.0         # annealing floor
    inner_steps: int = 5         # S: sweeps over the support pairs
    pairs_per_task: int = 5      # K
    tasks_per_batch: int = 3     # T
    epochs: int = 50             # E
    meta_order: str = "first"    # "first" | "second"
    outer_opt: str = "adam"      # "adam" | "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.meta_order not in ("first", "second"):
            raise ParameterError("meta_order must be 'first' or 'second'")
        if self.outer_opt not in ("adam", "sgd"):
            raise ParameterError("outer_opt must be 'adam' or 'sgd'")
        for name in ("inner_steps", "pairs_per_task", "tasks_per_batch", "epochs"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


def cosine_anneal(beta0: float, epoch: int, total: int, eta_min: float = 0.0) -> float:
    """eta_min + (beta0 - eta_min) * (1 + cos(pi * epoch / total)) / 2."""
    if total <= 0:
        raise ParameterError("total epochs must be positive")
    if not 0 <= epoch <= total:
        raise ParameterError(f"epoch {epoch} outside [0, {total}]")
    return eta_min + 0.5 * (beta0 - eta_min) * (1.0 + math.cos(math.pi * epoch / total))


def episode_objective(
    ps: ParamSet,
    cfg: ModelConfig,
    episode: Episode,
    rng: np.random.Generator,
    k_pos: int | None = None,
    k_neg: int | None = None,
) -> tuple[Tensor, LossReport]:
    """Mean loss over the episode's queries, differentiable.

    Per query: draw training clicks from the query's own mask, decode gated
    by the episode's support mask, score against the query mask.
    """
    k_pos = cfg.prompt.k_pos_train if k_pos is None else k_pos
    k_neg = cfg.prompt.k_neg_train if k_neg is None else k_neg
    totals, bces, ious = [], [], []
    for image, mask in episode.queries:
        prompt = None
        if cfg.prompt_mode != "none":
            prompt = sample_points(mask, k_pos, k_neg, rng)
        logits = forward(ps, cfg, image, prompt, episode.support_mask)
        total, rep = pair_loss(logits, mask)
        totals.append(total)
        bces.append(rep.bce)
        ious.append(rep.iou)
    mean_t = ad.mul(ad.concat([ad.reshape(t, (1,)) for t in totals], 0).sum(),
                    1.0 / len(totals))
    report = LossReport(float(mean_t.data), float(np.mean(bces)), float(np.mean(ious)))
    return mean_t, report


def episode_loss(
    ps: ParamSet, cfg: ModelConfig, episode: Episode, rng: np.random.Generator
) -> LossReport:
    """Evaluation-only wrapper around the differentiable objective."""
    _, report = episode_objective(ps, cfg, episode, rng)
    return report


def online_optimize(
    ps: ParamSet,
    episodes: list[Episode],
    mcfg: MetaConfig,
    model_cfg: ModelConfig,
    seed: int,
    path: tuple = (),
) -> tuple[ParamSet, list[float]]:
    """S sweeps of per-pair SGD on a copy of the trainable set.

    Returns the adapted parameters and the loss trace, one entry per
    (sweep, pair) visit in order.  S=0 or alpha=0 leaves the parameters
    byte-identical to the input.  Non-finite losses or gradients abort.
    """
    theta = ps.copy()
    names = theta.trainable_names()
    trace: list[float] = []
    for s in range(mcfg.inner_steps):
        for k, ep in enumerate(episodes):
            rng = derive_rng(seed, *path, "inner", s, k)
            with Tape() as tape:
                loss_t, rep = episode_objective(theta, model_cfg, ep, rng)
            stage = f"inner step {s}, pair {k}"
            if not np.isfinite(rep.total):
                raise NumericError(f"non-finite loss at {stage}")
            grads = backward(tape, loss_t, wrt=[theta[n] for n in names])
            for n in names:
                g = grads[theta[n]].data
                if not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient for {n} at {stage}")
                theta.replace(n, theta[n].data - mcfg.alpha * g)
            trace.append(rep.total)
    return theta, trace


def _online_optimize_linked(
    ps: ParamSet,
    episodes: list[Episode],
    mcfg: MetaConfig,
    model_cfg: ModelConfig,
    tape: Tape,
    seed: int,
    path: tuple,
) -> ParamSet:
    """Inner loop with taped updates so meta-gradients flow through it."""
    theta = ps.copy()
    names = theta.trainable_names()
    for n in names:  # re-link to the caller's leaves so grads reach ps
        theta._entries[n] = ps[n]
    for s in range(mcfg.inner_steps):
        for k, ep in enumerate(episodes):
            rng = derive_rng(seed, *path, "inner", s, k)
            loss_t, rep = episode_objective(theta, model_cfg, ep, rng)
            if not np.isfinite(rep.total):
                raise NumericError(f"non-finite loss at inner step {s}, pair {k}")
            grads = backward(tape, loss_t, wrt=[theta[n] for n in names],
                             create_graph=True)
            for n in names:
                theta._entries[n] = ad.sub(
                    theta[n], ad.mul(grads[theta[n]], mcfg.alpha)
                )
    return theta


@dataclass
class EpochLog:
    epoch: int
    lr: float
    meta_loss: float
    task_losses: dict[str, float] = field(default_factory=dict)


class AdamState:
    """Adam with decoupled weight decay of zero (so: plain Adam), bias-corrected."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
        self.t += 1
        deltas = {}
        for n, g in grads.items():
            m = self.m.get(n, np.zeros_like(g))
            v = self.v.get(n, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[n], self.v[n] = m, v
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            deltas[n] = lr * mhat / (np.sqrt(vhat) + self.eps)
        return deltas


def meta_train(
    source,
    model_cfg: ModelConfig,
    mcfg: MetaConfig,
    init_params: ParamSet | None = None,
    callback=None,
) -> tuple[ParamSet, list[EpochLog]]:
    """Episodic meta-training of the shared initialization.

    ``source`` provides ``tasks`` (labels) and ``sample_pairs(task, k, rng)``.
    Every epoch: anneal the outer lr, sample T tasks, adapt on K pairs per
    task, and step against the mean post-adaptation loss on K fresh pairs.
    """
    theta = init_params.copy() if init_params is not None else init_model(
        model_cfg, mcfg.seed
    )
    names = theta.trainable_names()
    opt = AdamState() if mcfg.outer_opt == "adam" else None
    history: list[EpochLog] = []
    n_tasks = len(source.tasks)
    t_batch = min(mcfg.tasks_per_batch, n_tasks)

    for e in range(mcfg.epochs):
        beta = cosine_anneal(mcfg.beta0, e, mcfg.epochs, mcfg.eta_min)
        task_idx = derive_rng(mcfg.seed, "tasks", e).choice(
            n_tasks, size=t_batch, replace=n_tasks < mcfg.tasks_per_batch
        )
        grad_sum = {n: np.zeros_like(theta[n].data) for n in names}
        task_losses: dict[str, float] = {}

        for i, ti in enumerate(task_idx):
            task = source.tasks[int(ti)]
            support = source.sample_pairs(task, mcfg.pairs_per_task,
                                          derive_rng(mcfg.seed, "pairs", e, i, 0))
            held_out = source.sample_pairs(task, mcfg.pairs_per_task,
                                           derive_rng(mcfg.seed, "pairs", e, i, 1))
            if mcfg.meta_order == "first":
                theta_i, _ = online_optimize(
                    theta, support, mcfg, model_cfg, mcfg.seed, path=("adapt", e, i)
                )
                with Tape() as tape:
                    meta_loss = _held_out_loss(theta_i, model_cfg, held_out,
                                               mcfg.seed, e, i)
                grads = backward(tape, meta_loss, wrt=[theta_i[n] for n in names])
                for n in names:
                    grad_sum[n] += grads[theta_i[n]].data
            else:
                with Tape() as tape:
                    theta_i = _online_optimize_linked(
                        theta, support, mcfg, model_cfg, tape, mcfg.seed,
                        path=("adapt", e, i),
                    )
                    meta_loss = _held_out_loss(theta_i, model_cfg, held_out,
                                               mcfg.seed, e, i)
                grads = backward(tape, meta_loss, wrt=[theta[n] for n in names])
                for n in names:
                    grad_sum[n] += grads[theta[n]].data
            task_losses[task] = float(meta_loss.data)

        grad_avg = {n: grad_sum[n] / t_batch for n in names}
        for n, g in grad_avg.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite meta-gradient for {n} at epoch {e}")
        if opt is not None:
            deltas = opt.step(grad_avg, beta)
            for n in names:
                theta.replace(n, theta[n].data - deltas[n])
        else:
            for n in names:
                theta.replace(n, theta[n].data - beta * grad_avg[n])

        entry = EpochLog(e, beta, float(np.mean(list(task_losses.values()))),
                         task_losses)
        history.append(entry)
        if callback is not None:
            callback(entry)
        log.info("epoch %d lr %.2e meta-loss %.4f", e, beta, entry.meta_loss)
    return theta, history


def _held_out_loss(ps, model_cfg, episodes, seed, e, i) -> Tensor:
    terms = []
    for k, ep in enumerate(episodes):
        rng = derive_rng(seed, "meta", e, i, k)
        loss_t, _ = episode_objective(ps, model_cfg, ep, rng)
        terms.append(ad.reshape(loss_t, (1,)))
    return ad.mul(ad.concat(terms, 0).sum(), 1.0 / len(terms))


def pretrain(
    source,
    model_cfg: ModelConfig,
    mcfg: MetaConfig,
    init_params: ParamSet | None = None,
    callback=None,
) -> tuple[ParamSet, list[EpochLog]]:
    """Conventional supervised baseline: the same loop with no inner
    adaptation, so each epoch is a plain multi-task gradient step."""
    return meta_train(source, model_cfg, replace(mcfg, inner_steps=0),
                      init_params=init_params, callback=callback)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    mean_dsc: float
    per_episode: list[float]
    n_queries: int


def evaluate_episodes(
    ps: ParamSet,
    cfg: ModelConfig,
    episodes: list[Episode],
    seed: int,
    k_pos: int | None = None,
    k_neg: int | None = None,
) -> EvalReport:
    """Mean DSC with the inference protocol: one positive click per query
    (by default), gated by each episode's support mask."""
    k_pos = cfg.prompt.k_pos_eval if k_pos is None else k_pos
    k_neg = cfg.prompt.k_neg_eval if k_neg is None else k_neg
    per_episode = []
    n_queries = 0
    for ep in episodes:
        scores = []
        for qi, (image, mask) in enumerate(ep.queries):
            prompt = None
            if cfg.prompt_mode != "none":
                rng = derive_rng(seed, "eval", ep.volume_id, ep.chunk_index, qi)
                prompt = sample_points(mask, k_pos, k_neg, rng)
            pred = predict(ps, cfg, image, prompt, ep.support_mask)
            scores.append(dsc(pred, mask))
            n_queries += 1
        per_episode.append(float(np.mean(scores)))
    mean = float(np.mean(per_episode)) if per_episode else 0.0
    return EvalReport(mean, per_episode, n_queries)


def adapt_and_evaluate(
    ps: ParamSet,
    cfg: ModelConfig,
    mcfg: MetaConfig,
    volume,
    organ: str,
    seed: int,
) -> tuple[EvalReport, EvalReport, list[float], ParamSet]:
    """Test-time protocol on one volume: adapt online on the chunk supports,
    then score every chunk episode before and after.  Also returns the
    adapted parameters so callers can persist them."""
    episodes = make_episodes(volume, organ)
    if not episodes:
        raise ParameterError(f"volume {volume.volume_id} has no usable episodes "
                             f"for {organ!r}")
    k = min(mcfg.pairs_per_task, len(episodes))
    picks = np.unique(np.linspace(0, len(episodes) - 1, k).round().astype(int))
    supports = [Episode(organ, ep.support_image, ep.support_mask,
                        [(ep.support_image, ep.support_mask)], ep.volume_id,
                        ep.chunk_index)
                for ep in (episodes[i] for i in picks)]
    before = evaluate_episodes(ps, cfg, episodes, seed)
    adapted, trace = online_optimize(ps, supports, mcfg, cfg, seed,
                                     path=("test_adapt", volume.volume_id, organ))
    after = evaluate_episodes(adapted, cfg, episodes, seed)
    return before, after, trace, adapted


# ---------------------------------------------------------------------------
# ablation variants


@dataclass(frozen=True)
class VariantSpec:
    name: str
    prompt_mode: str   # visual | positional | none
    decoder_mode: str  # gated | plain
    trainer: str       # meta | pretrain


def ablation_variants(base: ModelConfig) -> list[tuple[VariantSpec, ModelConfig]]:
    """The full toggle cross: prompt encoding x decoder gating x trainer."""
    out = []
    for pm in ("visual", "positional", "none"):
        for dm in ("gated", "plain"):
            for tr in ("meta", "pretrain"):
                spec = VariantSpec(f"{pm}+{dm}+{tr}", pm, dm, tr)
                cfg = replace(base, prompt_mode=pm, decoder_mode=dm)
                out.append((spec, cfg))
    return out
