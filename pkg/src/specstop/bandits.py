"""Bandit meta-policies over a finite arm set.

Four policies: UCB1, variance-aware UCB (UCB-Tuned), Gaussian-conjugate
Thompson sampling for continuous rewards, and Beta-Bernoulli Thompson
sampling for binary rewards.  All expose select / update / snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BanditSnapshot:
    """Read-only view of per-arm values (mean or posterior mean) and pulls."""

    values: tuple[float, ...]
    counts: tuple[int, ...]


class _BanditBase:
    def __init__(self, n_arms: int):
        if n_arms < 1:
            raise ValueError("bandit needs at least one arm")
        self.n_arms = n_arms
        self.counts = np.zeros(n_arms, dtype=np.int64)
        self.total = 0

    def _check_update(self, arm: int, reward: float) -> None:
        if not 0 <= arm < self.n_arms:
            raise ValueError(f"unknown arm {arm}")
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward {reward!r} outside [0, 1]")

    def select(self, rng: np.random.Generator | None = None) -> int:
        raise NotImplementedError

    def update(self, arm: int, reward: float) -> None:
        raise NotImplementedError

    def snapshot(self) -> BanditSnapshot:
        raise NotImplementedError


class UCB1(_BanditBase):
    """Empirical mean plus a sqrt(2 ln t / N) exploration bonus.

    Every arm is pulled once (lowest index first) before the index applies.
    The log argument is completed updates + 1, so it is positive from the
    first post-initialization selection onward.
    """

    def __init__(self, n_arms: int):
        super().__init__(n_arms)
        self.means = np.zeros(n_arms)
        self.m2 = np.zeros(n_arms)  # Welford sum of squared deviations

    def select(self, rng: np.random.Generator | None = None) -> int:
        unpulled = np.nonzero(self.counts == 0)[0]
        if unpulled.size:
            return int(unpulled[0])
        return int(np.argmax(self.means + self._bonus(self.total + 1)))

    def _bonus(self, t: int) -> np.ndarray:
        return np.sqrt(2.0 * math.log(t) / self.counts)

    def update(self, arm: int, reward: float) -> None:
        self._check_update(arm, reward)
        self.counts[arm] += 1
        self.total += 1
        n = self.counts[arm]
        delta = reward - self.means[arm]
        self.means[arm] += delta / n
        self.m2[arm] += delta * (reward - self.means[arm])

    def variances(self) -> np.ndarray:
        """Population variance of the observed rewards per arm."""
        out = np.zeros(self.n_arms)
        pulled = self.counts > 0
        out[pulled] = self.m2[pulled] / self.counts[pulled]
        return out

    def snapshot(self) -> BanditSnapshot:
        return BanditSnapshot(
            values=tuple(float(m) for m in self.means),
            counts=tuple(int(c) for c in self.counts),
        )


class UCBTuned(UCB1):
    """UCB with the bonus scaled by min(1/4, variance estimate)."""

    def _bonus(self, t: int) -> np.ndarray:
        log_t = math.log(t)
        v = self.variances() + np.sqrt(2.0 * log_t / self.counts)
        return np.sqrt((log_t / self.counts) * np.minimum(0.25, v))


class GaussianThompson(_BanditBase):
    """Conjugate-normal posterior sampling with a known noise variance."""

    def __init__(
        self,
        n_arms: int,
        prior_mean: float = 0.5,
        prior_var: float = 1.0,
        noise_var: float = 0.1,
    ):
        super().__init__(n_arms)
        if prior_var <= 0.0 or noise_var <= 0.0:
            raise ValueError("prior and noise variances must be positive")
        self.noise_var = noise_var
        self.post_mean = np.full(n_arms, float(prior_mean))
        self.post_var = np.full(n_arms, float(prior_var))

    def select(self, rng: np.random.Generator | None = None) -> int:
        if rng is None:
            raise ValueError("Thompson sampling needs an rng")
        draws = self.post_mean + rng.standard_normal(self.n_arms) * np.sqrt(self.post_var)
        return int(np.argmax(draws))

    def update(self, arm: int, reward: float) -> None:
        self._check_update(arm, reward)
        precision = 1.0 / self.post_var[arm] + 1.0 / self.noise_var
        mean = (self.post_mean[arm] / self.post_var[arm] + reward / self.noise_var) / precision
        self.post_var[arm] = 1.0 / precision
        self.post_mean[arm] = mean
        self.counts[arm] += 1
        self.total += 1

    def snapshot(self) -> BanditSnapshot:
        return BanditSnapshot(
            values=tuple(float(m) for m in self.post_mean),
            counts=tuple(int(c) for c in self.counts),
        )


class BetaBernoulliThompson(_BanditBase):
    """Beta(1,1)-prior posterior sampling for binary rewards."""

    def __init__(self, n_arms: int, prior_alpha: float = 1.0, prior_beta: float = 1.0):
        super().__init__(n_arms)
        if prior_alpha <= 0.0 or prior_beta <= 0.0:
            raise ValueError("Beta prior parameters must be positive")
        self.alpha = np.full(n_arms, float(prior_alpha))
        self.beta = np.full(n_arms, float(prior_beta))

    def select(self, rng: np.random.Generator | None = None) -> int:
        if rng is None:
            raise ValueError("Thompson sampling needs an rng")
        return int(np.argmax(rng.beta(self.alpha, self.beta)))

    def update(self, arm: int, reward: float) -> None:
        self._check_update(arm, reward)
        if reward not in (0.0, 1.0):
            raise ValueError(f"Beta-Bernoulli rewards must be 0 or 1, got {reward!r}")
        self.alpha[arm] += reward
        self.beta[arm] += 1.0 - reward
        self.counts[arm] += 1
        self.total += 1

    def snapshot(self) -> BanditSnapshot:
        means = self.alpha / (self.alpha + self.beta)
        return BanditSnapshot(
            values=tuple(float(m) for m in means),
            counts=tuple(int(c) for c in self.counts),
        )


BANDIT_KINDS = {
    "ucb1": UCB1,
    "ucb-tuned": UCBTuned,
    "ts-gaussian": GaussianThompson,
    "ts-beta": BetaBernoulliThompson,
}


def make_bandit(kind: str, n_arms: int, **params) -> _BanditBase:
    try:
        cls = BANDIT_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown bandit kind {kind!r}; known: {sorted(BANDIT_KINDS)}")
    return cls(n_arms, **params)
