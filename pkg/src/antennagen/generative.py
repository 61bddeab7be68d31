"""Discriminator/generator training and candidate sampling.

The discriminator is a binary classifier over [0, 1]-normalized parameter
vectors.  The generator maps uniform noise to the same normalized space and
is trained against the *frozen* discriminator by minimizing
mean log(1 - D(G(z))) over fresh noise minibatches (a nonsaturating
-log D(G(z)) form is available as a config switch).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .geometry import ParameterRanges, ConnectionMap, DEFAULT_CONNECTIONS, check_geometry

NOISE_DIM_DEFAULT = 20

GENERATOR_HIDDEN = (128, 256, 512)  # second and third carry batchnorm


@dataclass
class SplitDataset:
    """Stratified train/test partition of normalized inputs and binary labels."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    test_fraction: float = 0.2


def split_dataset(X, y, test_fraction=0.2, seed=0) -> SplitDataset:
    """Stratified split; both classes keep their proportions."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    train_idx = np.sort(np.asarray(train_idx, dtype=int))
    test_idx = np.sort(np.asarray(test_idx, dtype=int))
    return SplitDataset(
        X_train=X[train_idx], y_train=y[train_idx],
        X_test=X[test_idx], y_test=y[test_idx],
        test_fraction=test_fraction,
    )


def discriminator_specs(widths=(64, 128, 256), in_width=20):
    h1, h2, h3 = widths
    return [
        nn.LayerSpec(in_width, h1, activation="relu"),
        nn.LayerSpec(h1, h2, activation="relu"),
        nn.LayerSpec(h2, h3, activation="relu"),
        nn.LayerSpec(h3, 1, activation="sigmoid"),
    ]


def generator_specs(noise_dim=NOISE_DIM_DEFAULT, out_width=20):
    h1, h2, h3 = GENERATOR_HIDDEN
    return [
        nn.LayerSpec(noise_dim, h1, activation="leaky_relu", bias=False),
        nn.LayerSpec(h1, h2, activation="leaky_relu", bias=False, batchnorm=True),
        nn.LayerSpec(h2, h3, activation="leaky_relu", bias=False, batchnorm=True),
        nn.LayerSpec(h3, out_width, activation="sigmoid", bias=False),
    ]


@dataclass
class Discriminator:
    """Probabilistic validity classifier plus its input normalization."""

    model: nn.MlpModel
    ranges: ParameterRanges

    def score_unit(self, U) -> np.ndarray:
        """P(valid) for inputs already normalized to [0, 1]^20."""
        return nn.forward(self.model, np.atleast_2d(U), train=False).ravel()

    def score(self, params) -> np.ndarray:
        return self.score_unit(self.ranges.to_unit(np.atleast_2d(params)))

    def hard_label(self, params) -> np.ndarray:
        return (self.score(params) >= 0.5).astype(int)


@dataclass
class Generator:
    """Noise-to-parameters network; outputs live in (0, 1)^20 before scaling."""

    model: nn.MlpModel
    ranges: ParameterRanges
    noise_dim: int = NOISE_DIM_DEFAULT
    saturated: bool = False

    def sample_unit(self, k, rng) -> tuple:
        z = rng.uniform(-1.0, 1.0, size=(k, self.noise_dim))
        return z, nn.forward(self.model, z, train=False)

    def sample_params(self, k, rng) -> tuple:
        z, u = self.sample_unit(k, rng)
        return z, self.ranges.from_unit(u)


def train_discriminator(data: SplitDataset, widths, cfg: nn.TrainConfig,
                        ranges: ParameterRanges):
    """BCE-train the classifier; returns the model and held-out accuracy."""
    y_train = np.asarray(data.y_train, dtype=float)
    if len(np.unique(y_train)) < 2:
        raise ValueError("discriminator training needs both classes")
    model = nn.init_model(discriminator_specs(widths, in_width=data.X_train.shape[1]),
                          seed=cfg.seed)
    opt = nn.make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(y_train)
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads, _ = nn.grad(model, data.X_train[idx], "bce", y_train[idx])
            opt.step(model, grads)
    disc = Discriminator(model=model, ranges=ranges)
    if len(data.y_test):
        pred = (disc.score_unit(data.X_test) >= 0.5).astype(float)
        accuracy = float(np.mean(pred == data.y_test))
    else:
        accuracy = float("nan")
    return disc, accuracy


def train_generator(disc: Discriminator, cfg: nn.TrainConfig,
                    noise_dim=NOISE_DIM_DEFAULT, stop_threshold=0.95,
                    probe_size=500, check_every=25, nonsaturating=False) -> Generator:
    """Train G against the frozen discriminator.

    Stops at cfg.max_epochs (one fresh-noise minibatch each) or as soon as
    the mean discriminator score of an eval-mode probe reaches
    ``stop_threshold``.  The discriminator is never modified.
    """
    model = nn.init_model(generator_specs(noise_dim), seed=cfg.seed)
    opt = nn.make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    gen = Generator(model=model, ranges=disc.ranges, noise_dim=noise_dim)
    low_score_streak = 0
    for it in range(cfg.max_epochs):
        z = rng.uniform(-1.0, 1.0, size=(cfg.batch_size, noise_dim))
        gen_cache = []
        u = nn.forward(model, z, train=True, cache=gen_cache)
        disc_cache = []
        p = nn.forward(disc.model, u, train=False, cache=disc_cache)
        loss, dp = nn.generator_loss(p, nonsaturating=nonsaturating)
        if not np.isfinite(loss):
            raise nn.TrainingDiverged("generator loss diverged")
        _, du = nn.backward(disc.model, disc_cache, dp)
        grads, _ = nn.backward(model, gen_cache, du)
        opt.step(model, grads)
        if float(p.mean()) < 1e-6:
            low_score_streak += 1
            if low_score_streak >= 50:
                gen.saturated = True  # discriminator pinned at 0: gradient starved
        else:
            low_score_streak = 0
        if (it + 1) % check_every == 0:
            _, probe_u = gen.sample_unit(probe_size, np.random.default_rng(cfg.seed + 2))
            if float(disc.score_unit(probe_u).mean()) >= stop_threshold:
                break
    return gen


def sample_candidates(gen: Generator, k, ranges: ParameterRanges, seed,
                      conn: ConnectionMap = DEFAULT_CONNECTIONS,
                      max_draw_factor=10, dedupe_tol=1e-6, disc=None):
    """Draw geometry-checker-passing, deduplicated candidates.

    Redraws until ``k`` survivors or the draw budget (max_draw_factor * k)
    is spent; returns (records, shortfall).  Each record carries the raw
    params, the noise that produced them and the discriminator score when
    a discriminator is supplied.
    """
    if k < 1:
        raise ValueError("need k >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    accepted_params = []
    records = []
    draws = 0
    budget = max_draw_factor * k
    while len(records) < k and draws < budget:
        batch = min(k, budget - draws)
        z, params = gen.sample_params(batch, rng)
        scores = disc.score(params) if disc is not None else np.full(batch, np.nan)
        draws += batch
        for row in range(batch):
            p = params[row]
            if not check_geometry(p, conn).ok:
                continue
            width_tol = dedupe_tol * np.maximum(np.abs(p), 1.0)
            if any(np.all(np.abs(p - q) <= width_tol) for q in accepted_params):
                continue
            accepted_params.append(p)
            records.append({
                "params": p,
                "noise": z[row],
                "disc_score": float(scores[row]),
            })
            if len(records) >= k:
                break
    return records, len(records) < k


def candidates_to_jsonl(records) -> str:
    lines = []
    for rec in records:
        lines.append(json.dumps({
            "params": np.asarray(rec["params"]).tolist(),
            "noise": np.asarray(rec["noise"]).tolist(),
            "disc_score": rec["disc_score"],
        }))
    return "\n".join(lines) + ("\n" if lines else "")
