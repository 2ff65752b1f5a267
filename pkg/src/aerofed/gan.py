"""Local GAN training and GAN-based anomaly scoring.

The generator maps latent noise to a 4-feature sample; the discriminator
maps a sample to the probability that it is real.  Training uses the usual
binary cross-entropy for the discriminator and the non-saturating loss for
the generator.  All losses are evaluated from the discriminator's logit so
that ``log D`` and ``log(1 - D)`` stay finite.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError
from .nn import (
    AdamState,
    MlpSpec,
    Net,
    forward_trace,
    load_params,
    mlp_backward,
    mlp_forward,
    save_params,
    spec_from_dict,
    spec_to_dict,
)

log = logging.getLogger(__name__)

LN2 = float(np.log(2.0))


@dataclass
class GanHyper:
    latent_dim: int = 8
    hidden: tuple = (32, 32)
    batch_size: int = 64
    N: int = 1  # discriminator steps per generator step
    K: int = 30  # local rounds per upload
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    clip_norm: float = 10.0
    n_features: int = 4

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError(f"gan.N must be >= 1, got {self.N}")
        if self.K < 0:
            raise ConfigError(f"gan.K must be >= 0, got {self.K}")
        if self.batch_size < 1 or self.latent_dim < 1:
            raise ConfigError("gan.batch_size and gan.latent_dim must be positive")


@dataclass
class ScorerConfig:
    weight_g: float = 0.5
    z_search_steps: int = 50
    z_search_lr: float = 0.1
    threshold: float = float("nan")
    quantile: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.weight_g <= 1.0:
            raise ConfigError(f"scorer weight_g must lie in [0, 1], got {self.weight_g}")
        if self.z_search_steps < 0:
            raise ConfigError("z_search_steps must be non-negative")


@dataclass
class GanModels:
    generator: Net
    discriminator: Net
    version: int = 0

    @classmethod
    def create(cls, hyper, seed):
        g_spec = MlpSpec.build(hyper.latent_dim, hyper.hidden, hyper.n_features, "tanh", "linear")
        d_spec = MlpSpec.build(hyper.n_features, hyper.hidden, 1, "tanh", "sigmoid")
        return cls(
            Net.create(g_spec, [seed, 0], lr=hyper.lr_g),
            Net.create(d_spec, [seed, 1], lr=hyper.lr_d),
        )

    @property
    def latent_dim(self):
        return self.generator.spec.n_in

    def copy(self):
        return GanModels(self.generator.copy(), self.discriminator.copy(), self.version)

    def with_params(self, g_params, d_params, version=None):
        """Copy with new parameters; optimizer moments are kept."""
        out = self.copy()
        out.generator.params = np.array(g_params, dtype=float)
        out.discriminator.params = np.array(d_params, dtype=float)
        if version is not None:
            out.version = version
        return out


def sample_noise(rng, n, latent_dim):
    return rng.standard_normal((n, latent_dim))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _disc_logits(models, x):
    d = models.discriminator
    zs, acts = forward_trace(d.spec, d.params, x)
    return zs[-1][:, 0], (zs, acts)


def disc_loss(models, real, z):
    """-mean[log D(real) + log(1 - D(G(z)))]."""
    fake = models.generator(z)
    lr, _ = _disc_logits(models, real)
    lf, _ = _disc_logits(models, fake)
    return float(_softplus(-lr).mean() + _softplus(lf).mean())


def gen_loss(models, z):
    """Non-saturating generator loss -mean[log D(G(z))]."""
    lf, _ = _disc_logits(models, models.generator(z))
    return float(_softplus(-lf).mean())


def _disc_grad(models, real, fake):
    d = models.discriminator
    lr, tr = _disc_logits(models, real)
    lf, tf = _disc_logits(models, fake)
    loss = float(_softplus(-lr).mean() + _softplus(lf).mean())
    # dL/dD; the sigmoid derivative is applied inside mlp_backward
    Dr, Df = tr[1][-1], tf[1][-1]
    up_r = -1.0 / (len(real) * np.maximum(Dr, 1e-300))
    up_f = 1.0 / (len(fake) * np.maximum(1.0 - Df, 1e-300))
    g_r, _ = mlp_backward(d.spec, d.params, real, up_r, trace=tr)
    g_f, _ = mlp_backward(d.spec, d.params, fake, up_f, trace=tf)
    return loss, g_r + g_f


def disc_step(models, real_batch, seed, clip_norm=10.0):
    """One Adam step on the discriminator; the generator is left alone.

    Returns ``(new_models, loss_before_step)``.
    """
    real = np.asarray(real_batch, dtype=float)
    if len(real) == 0:
        log.warning("disc_step called with an empty batch; skipping")
        return models, float("nan")
    rng = np.random.default_rng(seed)
    z = sample_noise(rng, len(real), models.latent_dim)
    fake = models.generator(z)
    loss, grad = _disc_grad(models, real, fake)
    out = GanModels(models.generator, models.discriminator.copy(), models.version)
    out.discriminator.apply_grad(grad, clip_norm)
    return out, loss


def _gen_grad(models, z):
    g, d = models.generator, models.discriminator
    gt = forward_trace(g.spec, g.params, z)
    fake = gt[1][-1]
    lf, dt = _disc_logits(models, fake)
    loss = float(_softplus(-lf).mean())
    Df = dt[1][-1]
    up = -1.0 / (len(z) * np.maximum(Df, 1e-300))
    _, dx = mlp_backward(d.spec, d.params, fake, up, trace=dt)
    grad, _ = mlp_backward(g.spec, g.params, z, dx, trace=gt)
    return loss, grad


def gen_step(models, seed, batch_size=64, clip_norm=10.0):
    """One Adam step on the generator; the discriminator is left alone."""
    rng = np.random.default_rng(seed)
    z = sample_noise(rng, batch_size, models.latent_dim)
    loss, grad = _gen_grad(models, z)
    out = GanModels(models.generator.copy(), models.discriminator, models.version)
    out.generator.apply_grad(grad, clip_norm)
    return out, loss


def local_train(models, shard, hyper, seed, rounds=None):
    """Run ``K`` local rounds of N discriminator steps plus one generator step.

    Returns ``(new_models, losses)`` where ``losses`` has one
    ``(disc_loss, gen_loss)`` row per round; the disc entry is the mean of
    the round's N steps.
    """
    rounds = hyper.K if rounds is None else rounds
    shard = np.asarray(shard, dtype=float)
    if len(shard) == 0:
        log.warning("local_train on an empty shard; models unchanged")
        return models, np.zeros((0, 2))
    if rounds == 0:
        return models, np.zeros((0, 2))
    rng = np.random.default_rng(seed)
    # own the optimizer state for the duration of training
    models = models.copy()
    losses = np.zeros((rounds, 2))
    for r in range(rounds):
        d_sum = 0.0
        for _ in range(hyper.N):
            real = shard[rng.integers(0, len(shard), hyper.batch_size)]
            z = sample_noise(rng, hyper.batch_size, models.latent_dim)
            loss, grad = _disc_grad(models, real, models.generator(z))
            models.discriminator.apply_grad(grad, hyper.clip_norm)
            d_sum += loss
        z = sample_noise(rng, hyper.batch_size, models.latent_dim)
        g_loss, grad = _gen_grad(models, z)
        models.generator.apply_grad(grad, hyper.clip_norm)
        losses[r] = d_sum / hyper.N, g_loss
    return models, losses


# -- scoring --------------------------------------------------------------

def reconstruction_error(x, models, steps=50, lr=0.1):
    """Latent search: min over descent iterates of mean |G(z) - x|, z0 = 0."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = models.generator
    z = np.zeros((len(x), models.latent_dim))
    best = np.full(len(x), np.inf)
    for it in range(steps + 1):
        trace = forward_trace(g.spec, g.params, z)
        diff = trace[1][-1] - x
        best = np.minimum(best, np.abs(diff).mean(axis=1))
        if it == steps:
            break
        _, dz = mlp_backward(g.spec, g.params, z, np.sign(diff) / x.shape[1], trace=trace)
        z = z - lr * dz
    return best


def disc_term(x, models):
    """-log D(x) per sample."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    logits, _ = _disc_logits(models, x)
    return _softplus(-logits)


def anomaly_score(x, models, cfg):
    """Weighted sum of reconstruction error and discriminator loss.

    Accepts a single 4-vector (returns a float) or a batch (returns an array).
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise NumericError("non-finite input to anomaly_score", index=bad)
    lam = cfg.weight_g
    score = np.zeros(len(np.atleast_2d(arr)))
    if lam > 0:
        score = score + lam * reconstruction_error(arr, models, cfg.z_search_steps, cfg.z_search_lr)
    if lam < 1:
        score = score + (1 - lam) * disc_term(arr, models)
    return float(score[0]) if arr.ndim == 1 else score


def calibrate_threshold(scores, q=0.95):
    """Nearest-rank empirical quantile."""
    scores = np.sort(np.asarray(scores, dtype=float).ravel())
    if scores.size == 0:
        raise ConfigError("cannot calibrate a threshold on an empty score set")
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"quantile must lie in (0, 1], got {q}")
    rank = int(np.ceil(q * scores.size))
    return float(scores[max(rank, 1) - 1])


def classify(score, threshold):
    """1 (anomalous) when strictly above the threshold."""
    return (np.asarray(score) > threshold).astype(int)


# -- checkpoints ----------------------------------------------------------

def save_gan(directory, models, scorer=None, name="gan"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_params(directory / f"{name}_generator.bin", models.generator.params)
    save_params(directory / f"{name}_discriminator.bin", models.discriminator.params)
    sidecar = {
        "generator": spec_to_dict(models.generator.spec),
        "discriminator": spec_to_dict(models.discriminator.spec),
        "version": models.version,
        "scorer": asdict(scorer) if scorer is not None else None,
    }
    (directory / f"{name}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_gan(directory, name="gan"):
    directory = Path(directory)
    side_path = directory / f"{name}.json"
    if not side_path.exists():
        raise FileNotFoundError(f"no checkpoint sidecar at {side_path}")
    side = json.loads(side_path.read_text())
    nets = []
    for part in ("generator", "discriminator"):
        spec = spec_from_dict(side[part])
        params = load_params(directory / f"{name}_{part}.bin")
        nets.append(Net(spec, params, AdamState.zeros(params.size)))
    scorer = ScorerConfig(**side["scorer"]) if side.get("scorer") else None
    return GanModels(nets[0], nets[1], side.get("version", 0)), scorer
