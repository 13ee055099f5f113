"""Training loops: first-order meta-learning and the plain unsupervised baseline.

Meta-training follows the MAML pattern with first-order outer gradients: the
inner loop takes plain gradient steps on each task's support loss, and the
outer step feeds the sum of per-task query gradients (evaluated at the adapted
parameters, no second-order terms) into Adam. Both the inner objective and the
outer accumulation are unnormalized sums over samples and tasks respectively;
the per-sample scale is absorbed by the inner rate and by Adam's
normalization.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import channels, nn, pipeline


@dataclass
class MetaConfig:
    """Knobs of the training loops.

    inner_lr (a): plain-SGD rate of the inner/support steps.
    outer_lr (b): Adam rate of the meta update.
    n_support/n_query: samples per task split; n_tasks: tasks per epoch.
    inner_steps: support steps during meta-training; adapt_steps: steps used
    when adapting to a test batch. batch_size only affects unsupervised_train.
    """

    inner_lr: float = 0.01
    outer_lr: float = 0.001
    n_support: int = 40
    n_query: int = 40
    n_tasks: int = 40
    inner_steps: int = 1
    adapt_steps: int = 5
    epochs: int = 200
    width: int = nn.DEFAULT_WIDTH
    batch_size: int = 40
    loss_variant: str = "corrected"
    v_current_mode: str = "mrt"


@dataclass
class TrainLog:
    """Per-epoch scalars recorded by the training loops."""

    epochs: list = field(default_factory=list)
    support_loss: list = field(default_factory=list)  # at the meta parameters
    query_loss: list = field(default_factory=list)  # at the adapted parameters
    wall_time: list = field(default_factory=list)


def _loss_and_grad(params, batch, cfg, meta_cfg, reduction):
    """One tape pass: loss and flat gradient at params on a channel batch."""
    tape = ad.Tape()
    leaves, flat = nn.leaves_for(tape, params)
    loss, _ = pipeline.reconstruct_and_loss(
        tape,
        leaves,
        batch,
        cfg,
        variant=meta_cfg.loss_variant,
        reduction=reduction,
    )
    grads = ad.grad(tape, loss, flat)
    return float(loss.value), np.concatenate([g.ravel() for g in grads])


def inner_adapt(params, support, cfg, meta_cfg, steps=None, reduction="sum"):
    """Plain gradient descent on the support loss.

    Each step is theta <- theta - a * grad of the summed support loss (the
    unnormalized inner objective); steps defaults to meta_cfg.inner_steps.
    Returns new parameters; the inputs are never mutated.
    """
    steps = meta_cfg.inner_steps if steps is None else steps
    vec = nn.pack(params)
    for _ in range(steps):
        current = nn.unpack(vec, params)
        _, g = _loss_and_grad(current, support, cfg, meta_cfg, reduction)
        vec = nn.sgd_step(vec, g, meta_cfg.inner_lr)
    return nn.unpack(vec, params)


def adapt_on_test(params, batch, cfg, meta_cfg, steps=None, reduction="sum"):
    """Test-time adaptation; shares the inner_adapt implementation exactly.

    steps defaults to meta_cfg.adapt_steps (the deployment-time knob).
    """
    steps = meta_cfg.adapt_steps if steps is None else steps
    return inner_adapt(params, batch, cfg, meta_cfg, steps=steps, reduction=reduction)


def outer_update(params, tasks, cfg, meta_cfg, adam_state):
    """One first-order meta step over a list of tasks.

    For each task: adapt on the support set, then take the gradient of the
    summed query loss at the adapted parameters. The accumulated (summed)
    per-task gradients drive one Adam step on the meta parameters.

    Returns (new_params, new_adam_state, mean_support_loss, mean_query_loss).
    """
    vec = nn.pack(params)
    total_g = np.zeros_like(vec)
    support_losses, query_losses = [], []
    for task in tasks:
        support_losses.append(
            float(
                np.mean(
                    pipeline.per_sample_losses(
                        params, task.support, cfg, variant=meta_cfg.loss_variant
                    )
                )
            )
        )
        adapted = inner_adapt(params, task.support, cfg, meta_cfg)
        q_loss_sum, g = _loss_and_grad(adapted, task.query, cfg, meta_cfg, "sum")
        total_g += g
        query_losses.append(q_loss_sum / len(task.query))
    new_vec, adam_state = adam_step_packed(vec, total_g, adam_state, meta_cfg.outer_lr)
    return (
        nn.unpack(new_vec, params),
        adam_state,
        float(np.mean(support_losses)),
        float(np.mean(query_losses)),
    )


def adam_step_packed(vec, g, state, lr):
    if state is None:
        state = nn.AdamState.init(vec.size)
    return nn.adam_step(vec, g, state, lr)


def meta_train(dataset, cfg, meta_cfg, seed=0, init=None, log=None):
    """First-order meta-training over tasks drawn from a fixed dataset.

    Every epoch draws n_tasks tasks (support/query index draws without
    replacement within a task), runs one outer_update per epoch over the full
    task list, and records epoch means in a TrainLog. Deterministic for a
    fixed (dataset, seed, init).
    """
    rng = np.random.default_rng(seed)
    params = init or nn.init_predictor(rng, cfg.n, cfg.k, width=meta_cfg.width)
    log = log if log is not None else TrainLog()
    adam_state = None
    start = time.perf_counter()
    for epoch in range(1, meta_cfg.epochs + 1):
        tasks = [
            channels.task_from_dataset(
                rng, dataset, meta_cfg.n_support, meta_cfg.n_query
            )
            for _ in range(meta_cfg.n_tasks)
        ]
        params, adam_state, s_loss, q_loss = outer_update(
            params, tasks, cfg, meta_cfg, adam_state
        )
        log.epochs.append(epoch)
        log.support_loss.append(s_loss)
        log.query_loss.append(q_loss)
        log.wall_time.append(time.perf_counter() - start)
    return params, log


def unsupervised_train(dataset, cfg, meta_cfg, seed=0, init=None, log=None):
    """Plain Adam minimization of the batch loss, no task structure.

    Shuffles the dataset each epoch and takes one Adam step per minibatch of
    meta_cfg.batch_size samples. Records the epoch-mean minibatch loss.
    """
    rng = np.random.default_rng(seed)
    params = init or nn.init_predictor(rng, cfg.n, cfg.k, width=meta_cfg.width)
    log = log if log is not None else TrainLog()
    vec = nn.pack(params)
    adam_state = None
    start = time.perf_counter()
    size = dataset.shape[0]
    bs = min(meta_cfg.batch_size, size)
    for epoch in range(1, meta_cfg.epochs + 1):
        order = rng.permutation(size)
        losses = []
        for lo in range(0, size - bs + 1, bs):
            batch = dataset[order[lo : lo + bs]]
            current = nn.unpack(vec, params)
            loss, g = _loss_and_grad(current, batch, cfg, meta_cfg, "mean")
            vec, adam_state = adam_step_packed(vec, g, adam_state, meta_cfg.outer_lr)
            losses.append(loss)
        log.epochs.append(epoch)
        log.support_loss.append(float(np.mean(losses)))
        log.query_loss.append(float(np.mean(losses)))
        log.wall_time.append(time.perf_counter() - start)
    return nn.unpack(vec, params), log
