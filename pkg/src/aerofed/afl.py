"""HAPS-side federated GAN training over a selected subset of UAVs.

One episode: the HAPS broadcasts the global generator/discriminator and a
selection indicator; selected UAVs run ``K`` local rounds on their shard and
upload; the HAPS averages whatever arrived, weighted by shard size.  Only the
selected subset is waited on.
"""

from __future__ import annotations

import logging
import math
import queue
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from .gan import GanHyper, GanModels, disc_loss, gen_loss, local_train, sample_noise

log = logging.getLogger(__name__)

ROUND_HEADER = ("episode", "selection_mask", "gen_loss", "disc_loss", "val_loss", "energy_J", "latency_s")


@dataclass
class GlobalModels:
    generator: np.ndarray
    discriminator: np.ndarray
    version: int = 0


@dataclass
class RoundLog:
    episode: int
    selection: tuple
    gen_loss: float = float("nan")
    disc_loss: float = float("nan")
    val_loss: float = float("nan")
    energy_train: float = 0.0
    energy_upload: float = 0.0
    energy_fly: float = 0.0
    latency_s: float = 0.0
    per_uav_losses: dict = field(default_factory=dict)
    dropped: tuple = ()
    val_gen_loss: float = float("nan")

    @property
    def energy_J(self):
        return self.energy_train + self.energy_upload + self.energy_fly

    @property
    def mask(self):
        return "".join("1" if s else "0" for s in self.selection)

    def row(self):
        return (
            self.episode, self.mask, _fmt(self.gen_loss), _fmt(self.disc_loss),
            _fmt(self.val_loss), _fmt(self.energy_J), _fmt(self.latency_s),
        )


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def broadcast(global_models, indicator, local_models):
    """Overwrite every UAV's local parameters with the global ones.

    Returns ``(new_locals, selected)``; ``selected`` is a bool per UAV.
    """
    new = [
        m.with_params(global_models.generator, global_models.discriminator, global_models.version)
        for m in local_models
    ]
    return new, [bool(b) for b in indicator]


def _canonical(submissions):
    # fixed summation order, so the result cannot depend on arrival order
    return sorted(
        submissions,
        key=lambda s: (float(s[1]), s[0][0].tobytes(), s[0][1].tobytes()),
    )


def aggregate(submissions, previous=None):
    """Shard-size weighted federated averaging.

    ``submissions`` is a list of ``((generator, discriminator), shard_size)``.
    With nothing submitted the previous global is returned unchanged.
    """
    subs = [(tuple(np.asarray(p, dtype=float) for p in pair), n) for pair, n in submissions]
    if not subs:
        log.warning("aggregate: no submissions, keeping the previous global model")
        return previous
    total = float(sum(n for _, n in subs))
    if total <= 0:
        log.warning("aggregate: all submissions carry zero weight, keeping the previous global")
        return previous
    g = np.zeros_like(subs[0][0][0])
    d = np.zeros_like(subs[0][0][1])
    for (gp, dp), n in _canonical(subs):
        w = n / total
        g += w * gp
        d += w * dp
    version = (previous.version if previous is not None else 0) + 1
    return GlobalModels(g, d, version)


@dataclass
class Federation:
    """State of the federated system apart from geometry.

    ``uavs`` are shared with the simulator, which charges flight energy.
    """

    hyper: GanHyper
    energy: envmod.EnergyParams
    latency: envmod.LatencyParams
    uavs: list
    locals: list
    global_models: GlobalModels
    val_features: np.ndarray
    val_noise: np.ndarray
    seed: int = 0
    workers: int = 1
    quorum: float = 1.0  # fraction of selected uploads to wait for; 1.0 waits for all

    @classmethod
    def create(cls, hyper, energy, latency, uavs, val_features, seed=0, workers=1,
               quorum=1.0, max_val=2048):
        init = GanModels.create(hyper, seed)
        rng = np.random.default_rng([seed, 7])
        val = np.asarray(val_features, dtype=float)
        if len(val) > max_val:
            val = val[np.sort(rng.choice(len(val), max_val, replace=False))]
        noise = sample_noise(rng, max(len(val), 1), hyper.latent_dim)
        glob = GlobalModels(init.generator.params.copy(), init.discriminator.params.copy(), 0)
        return cls(hyper, energy, latency, uavs, [init.copy() for _ in uavs], glob, val, noise,
                   seed, workers, quorum)

    def global_gan(self):
        return self.locals[0].with_params(self.global_models.generator,
                                          self.global_models.discriminator,
                                          self.global_models.version)

    def validation_losses(self, models=None):
        """(disc BCE, generator loss) of ``models`` on the held-out normal slice."""
        models = models or self.global_gan()
        if len(self.val_features) == 0:
            return float("nan"), float("nan")
        return disc_loss(models, self.val_features, self.val_noise), gen_loss(models, self.val_noise)

    def _train_jobs(self, jobs, episode):
        def work(job):
            u, models, shard, rounds = job
            return local_train(models, shard, self.hyper, [self.seed, episode, u, 11], rounds=rounds)

        if self.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(work, jobs))
        return [work(j) for j in jobs]

    def run_episode(self, indicator, shards, episode):
        """One federated round over the UAVs flagged in ``indicator``.

        ``shards[u]`` holds UAV ``u``'s training features.  A selected UAV
        whose battery cannot cover the rounds plus the upload trains what it
        can afford, submits nothing and is reported as dropped.
        """
        k = self.hyper.K
        e = self.energy
        self.locals, selected = broadcast(self.global_models, indicator, self.locals)
        rlog = RoundLog(episode, tuple(selected))

        jobs, plan = [], {}
        for u, sel in enumerate(selected):
            if not sel:
                continue
            if len(shards[u]) == 0:
                log.info("episode %d: UAV %d selected with an empty shard; skipped", episode, u)
                continue
            affordable = int(min(k, self.uavs[u].energy // e.e_local_round))
            can_upload = self.uavs[u].energy - affordable * e.e_local_round >= e.e_upload
            plan[u] = (affordable, affordable == k and can_upload)
            jobs.append((u, self.locals[u], shards[u], affordable))

        results = self._train_jobs(jobs, episode)

        # uploads travel over an ordered channel in simulated arrival order
        channel = queue.Queue()
        arrivals = []
        dropped = []
        for (u, _, shard, rounds), (models, losses) in zip(jobs, results):
            self.locals[u] = models
            spent = rounds * e.e_local_round
            self.uavs[u].energy -= spent
            self.uavs[u].spent_train += spent
            rlog.energy_train += spent
            if len(losses):
                rlog.per_uav_losses[u] = (float(losses[:, 0].mean()), float(losses[:, 1].mean()))
            if not plan[u][1]:
                dropped.append(u)
                continue
            self.uavs[u].energy -= e.e_upload
            self.uavs[u].spent_upload += e.e_upload
            rlog.energy_upload += e.e_upload
            t_arrive = rounds * self.latency.local_round_time(u) + envmod.upload_time(
                self.uavs[u].position, self.latency)
            arrivals.append((t_arrive, u, len(shard)))
        arrivals.sort()
        for a in arrivals:
            channel.put(a)

        needed = math.ceil(self.quorum * len(arrivals)) if arrivals else 0
        submissions, last_t = [], 0.0
        while not channel.empty() and len(submissions) < needed:
            t_arrive, u, n = channel.get()
            m = self.locals[u]
            submissions.append(((m.generator.params.copy(), m.discriminator.params.copy()), n))
            last_t = t_arrive

        if submissions:
            self.global_models = aggregate(submissions, self.global_models)
        tail = self.latency.t_agg + self.latency.t_broadcast
        rlog.latency_s = (last_t + tail) if submissions else tail
        rlog.dropped = tuple(dropped)
        if rlog.per_uav_losses:
            vals = np.array(list(rlog.per_uav_losses.values()))
            rlog.disc_loss, rlog.gen_loss = float(vals[:, 0].mean()), float(vals[:, 1].mean())
        rlog.val_loss, rlog.val_gen_loss = self.validation_losses()
        return self.global_models, rlog

    def run_standalone_episode(self, shards, episode):
        """Every UAV trains its own model on its own shard; nothing is exchanged."""
        k = self.hyper.K
        e = self.energy
        jobs = []
        for u in range(len(self.uavs)):
            if len(shards[u]) == 0:
                continue
            rounds = int(min(k, self.uavs[u].energy // e.e_local_round))
            if rounds > 0:
                jobs.append((u, self.locals[u], shards[u], rounds))
        results = self._train_jobs(jobs, episode)
        trained = [False] * len(self.uavs)
        rlog = RoundLog(episode, ())
        finish = []
        for (u, _, _, rounds), (models, losses) in zip(jobs, results):
            self.locals[u] = models
            trained[u] = True
            spent = rounds * e.e_local_round
            self.uavs[u].energy -= spent
            self.uavs[u].spent_train += spent
            rlog.energy_train += spent
            rlog.per_uav_losses[u] = (float(losses[:, 0].mean()), float(losses[:, 1].mean()))
            finish.append(rounds * self.latency.local_round_time(u))
        rlog.selection = tuple(trained)
        rlog.latency_s = max(finish) if finish else 0.0
        if rlog.per_uav_losses:
            vals = np.array(list(rlog.per_uav_losses.values()))
            rlog.disc_loss, rlog.gen_loss = float(vals[:, 0].mean()), float(vals[:, 1].mean())
        per_uav = [self.validation_losses(self.locals[u]) for u in range(len(self.uavs)) if trained[u]]
        if per_uav:
            rlog.val_loss = float(np.mean([p[0] for p in per_uav]))
            rlog.val_gen_loss = float(np.mean([p[1] for p in per_uav]))
        return rlog


def all_eligible_indicator(fed):
    return envmod.eligible(fed.uavs, fed.energy, fed.hyper.K)


def run_fl_all(fed, shards_for_episode, episodes, start=0):
    """Plain FL baseline: every energy-eligible UAV joins every round."""
    logs = []
    for ep in range(start, start + episodes):
        _, rlog = fed.run_episode(all_eligible_indicator(fed), shards_for_episode(ep), ep)
        logs.append(rlog)
    return logs


def run_standalone(fed, shards_for_episode, episodes, start=0):
    """Standalone baseline: isolated per-UAV training, no uploads."""
    return [fed.run_standalone_episode(shards_for_episode(ep), ep)
            for ep in range(start, start + episodes)]
