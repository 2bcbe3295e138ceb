"""Token probability distributions and per-step draft records.

A distribution comes in one of two layouts: a dense vector over the whole
vocabulary, or a sparse top-k list plus a tail mass spread uniformly over
every remaining token.  Entropy is measured in nats everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TokenId = int

MASS_TOL = 1e-9


class InvalidDistribution(ValueError):
    """Probability mass or support constraints are violated."""


class VocabTooSmall(ValueError):
    """The operation needs a larger vocabulary than the distribution has."""


@dataclass(frozen=True)
class ProbDist:
    """Probability vector over ``vocab_size`` tokens.

    Dense layout: ``ids is None`` and ``probs`` has length ``vocab_size``.
    Sparse layout: ``ids``/``probs`` list explicit entries and ``tail_mass``
    is spread uniformly over the ``vocab_size - len(ids)`` remaining tokens.
    Arrays are treated as immutable after construction.
    """

    vocab_size: int
    probs: np.ndarray
    ids: np.ndarray | None = None
    tail_mass: float = 0.0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise InvalidDistribution("vocab_size must be >= 1")
        if np.any(self.probs < 0.0) or self.tail_mass < 0.0:
            raise InvalidDistribution("probabilities must be >= 0")
        if self.ids is None:
            if len(self.probs) != self.vocab_size:
                raise InvalidDistribution("dense layout needs one probability per token")
            total = float(np.sum(self.probs))
        else:
            if len(self.ids) != len(self.probs):
                raise InvalidDistribution("ids and probs must have equal length")
            if len(self.ids) > 0:
                if int(self.ids.min()) < 0 or int(self.ids.max()) >= self.vocab_size:
                    raise InvalidDistribution("token id out of range")
                if len(np.unique(self.ids)) != len(self.ids):
                    raise InvalidDistribution("sparse entries must have distinct token ids")
            if self.tail_mass > MASS_TOL and len(self.ids) >= self.vocab_size:
                raise InvalidDistribution("tail mass with no residual tokens")
            total = float(np.sum(self.probs)) + self.tail_mass
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidDistribution(f"total mass {total!r} not within {MASS_TOL} of 1")

    @classmethod
    def dense(cls, probs) -> "ProbDist":
        vec = np.asarray(probs, dtype=np.float64)
        return cls(vocab_size=len(vec), probs=vec)

    @classmethod
    def sparse(cls, vocab_size: int, entries, tail_mass: float = 0.0) -> "ProbDist":
        """Build from an iterable of ``(token_id, probability)`` pairs."""
        pairs = list(entries)
        ids = np.asarray([tid for tid, _ in pairs], dtype=np.int64)
        probs = np.asarray([p for _, p in pairs], dtype=np.float64)
        return cls(vocab_size=vocab_size, probs=probs, ids=ids, tail_mass=float(tail_mass))

    @property
    def n_tail(self) -> int:
        return 0 if self.ids is None else self.vocab_size - len(self.ids)

    def tail_per_token(self) -> float:
        n = self.n_tail
        return self.tail_mass / n if n > 0 else 0.0

    def to_dense(self) -> np.ndarray:
        if self.ids is None:
            return np.array(self.probs, dtype=np.float64)
        vec = np.full(self.vocab_size, self.tail_per_token(), dtype=np.float64)
        vec[self.ids] = self.probs
        return vec

    def top1(self) -> tuple[TokenId, float]:
        """Largest-probability entry; ties break toward the smaller token id."""
        if self.ids is None:
            best = int(np.argmax(self.probs))  # argmax returns the first (lowest id) maximum
            return best, float(self.probs[best])
        cands = self._sparse_candidates()
        cands.sort(key=lambda e: (-e[1], e[0]))
        return cands[0]

    def top2(self) -> tuple[TokenId, float, TokenId, float]:
        """Two largest-probability entries, ties toward smaller token ids."""
        if self.vocab_size < 2:
            raise VocabTooSmall("top2 needs vocab_size >= 2")
        if self.ids is None:
            order = np.argsort(-self.probs, kind="stable")
            i, j = int(order[0]), int(order[1])
            return i, float(self.probs[i]), j, float(self.probs[j])
        cands = self._sparse_candidates()
        cands.sort(key=lambda e: (-e[1], e[0]))
        if len(cands) == 1:
            # single explicit entry holding all mass, zero-probability runner-up
            second = 0 if cands[0][0] != 0 else 1
            return cands[0][0], cands[0][1], second, 0.0
        (i, p1), (j, p2) = cands[0], cands[1]
        return i, p1, j, p2

    def _sparse_candidates(self) -> list[tuple[int, float]]:
        # Explicit entries plus one representative tail token.  All tail tokens
        # share the same probability, so only the smallest missing id can ever
        # win a tie.
        cands = [(int(t), float(p)) for t, p in zip(self.ids, self.probs)]
        if self.n_tail > 0:
            present = set(int(t) for t in self.ids)
            missing = 0
            while missing in present:
                missing += 1
            cands.append((missing, self.tail_per_token()))
        return cands


def entropy(dist: ProbDist) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0.

    For the sparse layout the uniform tail contributes in closed form:
    ``-tail_mass * ln(tail_mass / n_tail)``.
    """
    probs = dist.probs
    mask = probs > 0.0
    h = -float(np.dot(probs[mask], np.log(probs[mask]))) if mask.any() else 0.0
    if dist.ids is not None and dist.tail_mass > 0.0 and dist.n_tail > 0:
        h -= dist.tail_mass * math.log(dist.tail_mass / dist.n_tail)
    return max(h, 0.0)


@dataclass(frozen=True)
class DraftStep:
    """One drafted position: its distribution, greedy token, cached entropy."""

    position: int  # 1-based within the session
    dist: ProbDist
    token: TokenId
    entropy: float

    @classmethod
    def from_dist(cls, position: int, dist: ProbDist) -> "DraftStep":
        token, _ = dist.top1()
        return cls(position=position, dist=dist, token=token, entropy=entropy(dist))

    @property
    def sqrt_entropy(self) -> float:
        return math.sqrt(self.entropy)
