"""NAdam, the warm-restart cosine schedule, and the two-stage training loop.

The schedule restarts at epochs {6, 18, 42} with period lengths doubling
6 -> 12 -> 24 -> 48 (summing to 90), then holds the minimum rate. Stage two
starts at the first restart; before that the completion head's parameters
sit outside the optimizer's active set, so they keep their initial values
bit-exactly.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .decoder import S1, S2, completion_param_names, init_model, run_pipeline
from .errors import ContractError, TrainingError
from .losses import total_loss
from .metrics import min_fde
from .scene import normalize

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8
_MOMENTUM_DECAY = 0.96
_MOMENTUM_SPAN = 250.0


def _mu(t):
    return BETA1 * (1.0 - 0.5 * _MOMENTUM_DECAY ** (t / _MOMENTUM_SPAN))


class NAdam:
    """Adam with Nesterov momentum and the 0.96-power momentum schedule."""

    def __init__(self, store, active=None):
        self.store = store
        self.active = list(active) if active is not None else store.names()
        self.t = 0
        self.mu_prod = 1.0
        self._m = {n: np.zeros_like(store[n].data) for n in self.active}
        self._v = {n: np.zeros_like(store[n].data) for n in self.active}

    def set_active(self, names):
        """Swap the trainable set; accumulators for new names start at zero."""
        self.active = list(names)
        for n in self.active:
            if n not in self._m:
                self._m[n] = np.zeros_like(self.store[n].data)
                self._v[n] = np.zeros_like(self.store[n].data)

    def step(self, grads, lr):
        if lr <= 0:
            raise ContractError(f"lr must be positive, got {lr}")
        self.t += 1
        t = self.t
        mu_t, mu_next = _mu(t), _mu(t + 1)
        self.mu_prod *= mu_t
        mu_prod_next = self.mu_prod * mu_next
        bias_v = 1.0 - BETA2 ** t
        for name in self.active:
            p = self.store[name]
            g = np.asarray(grads[name], dtype=p.dtype)
            if g.shape != p.shape:
                raise ContractError(f"grad shape {g.shape} != param {name} {p.shape}")
            m, v = self._m[name], self._v[name]
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            denom = np.sqrt(v / bias_v) + EPS
            step = (mu_next / (1.0 - mu_prod_next)) * m + \
                   ((1.0 - mu_t) / (1.0 - self.mu_prod)) * g
            p.data = p.data - (lr * step / denom).astype(p.dtype)


@dataclass
class LrSchedule:
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    periods: tuple[int, ...] = (6, 12, 24, 48)
    total_epochs: int = 100

    starts: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        acc, starts = 0, []
        for p in self.periods:
            starts.append(acc)
            acc += p
        self.starts = tuple(starts)
        self.cycle_end = acc  # constant lr_min from here on

    def lr_at(self, epoch):
        if not 0 <= epoch < self.total_epochs:
            raise ContractError(
                f"epoch {epoch} outside [0, {self.total_epochs})")
        if epoch >= self.cycle_end:
            return self.lr_min
        for start, period in zip(reversed(self.starts), reversed(self.periods)):
            if epoch >= start:
                frac = (epoch - start) / period
                return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * \
                    (1.0 + math.cos(math.pi * frac))
        raise ContractError(f"epoch {epoch} matched no period")  # unreachable


def make_schedule(train_cfg):
    return LrSchedule(lr_max=train_cfg.lr_max, lr_min=train_cfg.lr_min,
                      periods=tuple(train_cfg.periods),
                      total_epochs=train_cfg.total_epochs)


# ---------------------------------------------------------------------------
# training


def _scene_views(scenes):
    """(scene index, focal actor id) pairs, the unit of one forward pass."""
    views = []
    for si, scene in enumerate(scenes):
        for actor in scene.focal_actors():
            views.append((si, actor.id))
    return views


def _view_loss(scene, actor_id, store, cfg, stage):
    ns = normalize(scene, actor_id)
    targets, traj, logits = run_pipeline(ns, store, cfg.model, stage)
    gt = [a.future for a in ns.actors]
    last_obs = np.array([bool(a.observed[-1]) for a in ns.actors])
    loss, bd = total_loss(targets, traj, logits, gt, last_obs, stage)
    # train-time minFDE(K=6) for the focal actor, in its agent frame
    fde = None
    focal_idx = next(i for i, a in enumerate(ns.actors) if a.id == actor_id)
    if gt[focal_idx] is not None:
        modes = traj.data[focal_idx] if traj is not None \
            else targets.data[focal_idx][:, None, :]
        conf = dc.softmax(logits, axis=1).data[focal_idx]
        k = modes.shape[0]
        gt_ref = np.asarray(gt[focal_idx], dtype=np.float64)
        fde, _ = min_fde(np.asarray(modes, dtype=np.float64), conf,
                         gt_ref[-1:] if modes.shape[1] == 1 else gt_ref, k)
    return loss, bd, fde


def train(scenes, run_cfg, log_path=None):
    """Two-stage training over synthetic scenes.

    Deterministic for a fixed (scenes, config): parameter init, batch order
    and every reduction order are seeded or fixed. Returns (store, log
    records, optimizer). Non-finite losses abort with context.
    """
    if not scenes:
        raise TrainingError("empty dataset")
    tc = run_cfg.train
    dtype = np.float32 if tc.precision == "float32" else np.float64
    store = dc.ParamStore(dtype)
    rng = np.random.default_rng(run_cfg.seed)
    t_future = scenes[0].horizon[1]
    init_model(store, run_cfg.model, t_future, rng)

    frozen = set(completion_param_names(store))
    sched = make_schedule(tc)
    opt = NAdam(store, active=[n for n in store.names() if n not in frozen])
    views = _scene_views(scenes)
    order_rng = np.random.default_rng(run_cfg.seed + 1)

    records = []
    log_file = open(log_path, "w") if log_path else None
    started = time.monotonic()
    try:
        for epoch in range(tc.total_epochs):
            stage = S1 if epoch < tc.stage2_start_epoch else S2
            if epoch == tc.stage2_start_epoch:
                opt.set_active(store.names())
            lr = sched.lr_at(epoch)
            perm = order_rng.permutation(len(views))

            sums = {"conf": 0.0, "target": 0.0, "traj": 0.0, "total": 0.0}
            fde_sum, fde_n = 0.0, 0
            for b0 in range(0, len(perm), tc.batch_size):
                batch = perm[b0:b0 + tc.batch_size]
                batch_terms = []
                for vi in batch:
                    si, aid = views[vi]
                    loss, bd, fde = _view_loss(scenes[si], aid, store,
                                               run_cfg, stage)
                    if not math.isfinite(bd.total):
                        raise TrainingError(
                            f"non-finite loss at epoch {epoch}, view "
                            f"{views[vi]}, components {bd}")
                    batch_terms.append(loss)
                    for key, val in (("conf", bd.conf), ("target", bd.target),
                                     ("traj", bd.traj), ("total", bd.total)):
                        sums[key] += val
                    if fde is not None:
                        fde_sum += fde
                        fde_n += 1
                acc = batch_terms[0]
                for term in batch_terms[1:]:
                    acc = dc.add(acc, term)
                batch_loss = dc.scale(acc, 1.0 / len(batch_terms))
                grads = dc.backward(batch_loss, {n: store[n] for n in opt.active})
                opt.step(grads, lr)

            n = len(views)
            rec = {"epoch": epoch, "lr": lr, "stage": stage,
                   "conf": sums["conf"] / n, "target": sums["target"] / n}
            if stage == S2:
                rec["traj"] = sums["traj"] / n
            rec["total"] = sums["total"] / n
            rec["minFDE6"] = (fde_sum / fde_n) if fde_n else None
            records.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
    finally:
        if log_file:
            log_file.close()
    elapsed = time.monotonic() - started
    return store, records, opt, elapsed
