"""Simulated draft/target model pairs.

Three flavors, all greedy (temperature-0) on both sides:

* ``SyntheticPair``: a seeded generative process whose draft/target agreement
  follows a configurable per-position schedule, with draft entropy tied to
  agreement so confidence/entropy heuristics carry real signal.
* ``ScriptedPair``: a pair whose per-position stopping signals (sqrt-entropy,
  top probability, margin) are dictated exactly by a profile function; used
  to build suites where a chosen rule is optimal by construction.
* ``ReplayPair``: replays distributions recorded along a real target greedy
  path from a newline-delimited trace file.

Every pair is a pure function of (seed, context): token and distribution
draws are keyed by a hash of the full context, so runs are bit-reproducible
and pairs can be rebuilt freely.
"""

from __future__ import annotations

import json
import math
from array import array
from dataclasses import dataclass, field
from hashlib import blake2b
from typing import Callable, Sequence

import numpy as np

from .dists import ProbDist, TokenId

TRACE_MASS_TOL = 1e-6

_MASK64 = (1 << 64) - 1

# lane salts for deriving independent draws from one context digest
_LANE_TARGET = 0x9E3779B97F4A7C15
_LANE_AGREE = 0xC2B2AE3D27D4EB4F
_LANE_DECOY = 0x165667B19E3779F9
_LANE_NOISE_A = 0xD6E8FEB86659FD93
_LANE_NOISE_B = 0xA5A5A5A5A5A5A5A5
_LANE_PROFILE = 0x27220A95FE4D5FFB


class InvalidConfig(ValueError):
    """Model-pair configuration violates its invariants."""


class MalformedTrace(ValueError):
    """Trace records violate the schema (step gaps, mass, bad fields)."""


class UnknownPrompt(ValueError):
    """Context does not start with any known prompt of this pair."""


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _uniform(x: int) -> float:
    # top 53 bits -> [0, 1)
    return (x >> 11) * (1.0 / 9007199254740992.0)


def _gauss(h: int, lane_a: int, lane_b: int) -> float:
    u1 = _uniform(_splitmix64(h ^ lane_a))
    u2 = _uniform(_splitmix64(h ^ lane_b))
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class Prompt:
    id: str
    tag: str
    tokens: tuple[TokenId, ...]


class ModelPair:
    """Behavioral interface shared by all simulated pairs."""

    vocab_size: int
    eos_token_id: TokenId | None = None

    def prompts(self) -> list[Prompt]:
        raise NotImplementedError

    def draft_next(self, context: Sequence[TokenId]) -> ProbDist:
        raise NotImplementedError

    def target_greedy(self, context: Sequence[TokenId]) -> TokenId:
        raise NotImplementedError

    def remaining(self, context: Sequence[TokenId]) -> int | None:
        """Target-path tokens still available after this context, or None if
        the process is unbounded."""
        return None


class _HashedPair(ModelPair):
    """Common machinery: a keyed 64-bit digest of the full context."""

    def __init__(self, vocab_size: int, seed: int):
        if vocab_size < 2:
            raise InvalidConfig("vocab_size must be >= 2")
        self.vocab_size = vocab_size
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    def _digest(self, context: Sequence[TokenId]) -> int:
        data = array("q", context).tobytes()
        return int.from_bytes(blake2b(data, digest_size=8, key=self._key).digest(), "little")

    def _path_token(self, h: int) -> TokenId:
        return _splitmix64(h ^ _LANE_TARGET) % self.vocab_size

    def _decoy(self, h: int, target: TokenId) -> TokenId:
        off = 1 + _splitmix64(h ^ _LANE_DECOY) % (self.vocab_size - 1)
        return (target + off) % self.vocab_size

    def target_greedy(self, context: Sequence[TokenId]) -> TokenId:
        return self._path_token(self._digest(context))

    def _make_prompts(self, count: int, length: int, tag: str, prefix: str) -> list[Prompt]:
        out = []
        for i in range(count):
            toks = []
            h = self._digest([-(i + 1)])  # negative sentinel keys the prompt stream
            for _ in range(length):
                h = _splitmix64(h)
                toks.append(h % self.vocab_size)
            out.append(Prompt(id=f"{prefix}-{i}", tag=tag, tokens=tuple(toks)))
        return out


@dataclass(frozen=True)
class SyntheticPairConfig:
    """Knobs for the synthetic generative process.

    Per-position agreement is ``clamp(base_agreement + position_gain*t +
    noise, 0.01, 0.99)`` with Gaussian noise of scale ``noise_scale`` and
    ``t`` counting tokens past the prompt.  The draft distribution puts
    ``top_prob_base + top_prob_gain*a`` on its argmax and spreads the rest
    geometrically over the next ``spread_size`` ids (uniform tail beyond),
    so higher agreement means lower entropy.  The code-like regime decays
    faster (sharper distributions) than the prose-like one.
    """

    vocab_size: int = 512
    base_agreement: float = 0.7
    position_gain: float = 0.0
    regime: str = "prose-like"  # "code-like" | "prose-like"
    noise_scale: float = 0.05
    seed: int = 0
    prompt_count: int = 16
    tokens_per_prompt: int = 12
    tag: str | None = None
    top_prob_base: float = 0.3
    top_prob_gain: float = 0.69
    spread_size: int = 15
    spread_decay: float | None = None  # default by regime: code 0.3, prose 0.75

    def __post_init__(self):
        if self.vocab_size < 2:
            raise InvalidConfig("vocab_size must be >= 2")
        if not 0.0 < self.base_agreement < 1.0:
            raise InvalidConfig("base_agreement must lie in (0, 1)")
        if self.noise_scale < 0.0:
            raise InvalidConfig("noise_scale must be >= 0")
        if self.prompt_count < 1 or self.tokens_per_prompt < 1:
            raise InvalidConfig("prompt_count and tokens_per_prompt must be >= 1")
        if self.regime not in ("code-like", "prose-like"):
            raise InvalidConfig(f"unknown regime {self.regime!r}")
        if self.spread_size < 1:
            raise InvalidConfig("spread_size must be >= 1")
        if not 0.0 < self.top_prob_base + self.top_prob_gain < 1.0:
            raise InvalidConfig("top_prob_base + top_prob_gain must lie in (0, 1)")
        decay = self.decay
        if not 0.0 < decay < 1.0:
            raise InvalidConfig("spread_decay must lie in (0, 1)")

    @property
    def decay(self) -> float:
        if self.spread_decay is not None:
            return self.spread_decay
        return 0.3 if self.regime == "code-like" else 0.75

    @property
    def effective_tag(self) -> str:
        return self.tag if self.tag is not None else self.regime


class SyntheticPair(_HashedPair):
    def __init__(self, config: SyntheticPairConfig):
        super().__init__(config.vocab_size, config.seed)
        self.config = config
        s = min(config.spread_size, config.vocab_size - 1)
        r = config.decay
        w = (1.0 - r) * r ** np.arange(s)
        if config.vocab_size - 1 > s:
            tail_frac = r**s
        else:
            w = w / w.sum()
            tail_frac = 0.0
        self._spread = w
        self._tail_frac = tail_frac
        self._offsets = np.arange(s + 1, dtype=np.int64)

    def prompts(self) -> list[Prompt]:
        c = self.config
        return self._make_prompts(c.prompt_count, c.tokens_per_prompt, c.effective_tag, "synthetic")

    def agreement_at(self, context: Sequence[TokenId]) -> float:
        """Realized per-step agreement probability for this context."""
        c = self.config
        t = max(0, len(context) - c.tokens_per_prompt)
        a = c.base_agreement + c.position_gain * t
        if c.noise_scale > 0.0:
            a += c.noise_scale * _gauss(self._digest(context), _LANE_NOISE_A, _LANE_NOISE_B)
        return min(0.99, max(0.01, a))

    def draft_next(self, context: Sequence[TokenId]) -> ProbDist:
        c = self.config
        h = self._digest(context)
        target = self._path_token(h)
        a = self.agreement_at(context)
        agree = _uniform(_splitmix64(h ^ _LANE_AGREE)) < a
        top = target if agree else self._decoy(h, target)
        p_top = c.top_prob_base + c.top_prob_gain * a
        probs = np.empty(len(self._spread) + 1)
        probs[0] = p_top
        probs[1:] = (1.0 - p_top) * self._spread
        ids = (top + self._offsets) % self.vocab_size
        return ProbDist(
            vocab_size=self.vocab_size,
            probs=probs,
            ids=ids,
            tail_mass=(1.0 - p_top) * self._tail_frac,
        )


def synth_pair(config: SyntheticPairConfig) -> SyntheticPair:
    return SyntheticPair(config)


@dataclass(frozen=True)
class StepProfile:
    """Exact stopping signals for one drafted position."""

    agree: bool
    sqrt_entropy: float
    top_prob: float
    margin: float  # top_prob minus the runner-up probability


class ScriptedPair(_HashedPair):
    """Pair whose stopping signals follow ``profile(position, u)`` exactly.

    ``u`` is an i.i.d. uniform draw keyed by the context, so profiles may be
    deterministic in position, stochastic, or both.  The emitted distribution
    has exactly the requested top probability, margin, and entropy (a third
    explicit entry is solved so the total entropy matches)."""

    def __init__(
        self,
        vocab_size: int,
        profile: Callable[[int, float], StepProfile],
        prompt_count: int = 8,
        tokens_per_prompt: int = 8,
        seed: int = 0,
        tag: str = "scripted",
    ):
        super().__init__(vocab_size, seed)
        if vocab_size < 4:
            raise InvalidConfig("scripted pairs need vocab_size >= 4")
        self.profile = profile
        self.prompt_count = prompt_count
        self.tokens_per_prompt = tokens_per_prompt
        self.tag = tag
        self._dist_cache: dict[tuple[float, float, float], tuple[np.ndarray, float]] = {}

    def prompts(self) -> list[Prompt]:
        return self._make_prompts(self.prompt_count, self.tokens_per_prompt, self.tag, "scripted")

    def draft_next(self, context: Sequence[TokenId]) -> ProbDist:
        h = self._digest(context)
        target = self._path_token(h)
        t = max(0, len(context) - self.tokens_per_prompt)
        u = _uniform(_splitmix64(h ^ _LANE_PROFILE))
        prof = self.profile(t, u)
        top = target if prof.agree else self._decoy(h, target)
        probs, tail = self._entries_for(prof)
        ids = (top + np.arange(len(probs), dtype=np.int64)) % self.vocab_size
        return ProbDist(vocab_size=self.vocab_size, probs=probs, ids=ids, tail_mass=tail)

    def _entries_for(self, prof: StepProfile) -> tuple[np.ndarray, float]:
        key = (prof.top_prob, prof.margin, prof.sqrt_entropy)
        hit = self._dist_cache.get(key)
        if hit is None:
            hit = _solve_profile_entries(
                prof.top_prob, prof.margin, prof.sqrt_entropy**2, self.vocab_size
            )
            self._dist_cache[key] = hit
        return hit


def _solve_profile_entries(
    p1: float, margin: float, h_target: float, vocab: int
) -> tuple[np.ndarray, float]:
    """Entries [p1, p2, p3] plus a uniform tail hitting the entropy target.

    p2 = p1 - margin; p3 is solved by bisection on the interval where
    entropy is strictly decreasing in p3.  Raises InvalidConfig when the
    target is outside the reachable range, reporting that range.
    """
    if not 0.0 < p1 < 1.0 or not 0.0 < margin <= p1:
        raise InvalidConfig(f"need 0 < margin <= top_prob < 1, got {p1}, {margin}")
    p2 = p1 - margin
    if p2 <= 0.0 or p1 + p2 > 1.0 + 1e-12:
        raise InvalidConfig(f"runner-up probability {p2!r} infeasible")
    rest = 1.0 - p1 - p2
    n_tail = vocab - 3
    base = -(p1 * math.log(p1) + p2 * math.log(p2))

    if rest <= 1e-12:
        if abs(base - h_target) > 1e-6:
            raise InvalidConfig(f"no residual mass: entropy fixed at {base:.6f}")
        return np.array([p1, p2]), 0.0

    def h_of(p3: float) -> float:
        h = base - p3 * math.log(p3)
        left = rest - p3
        if left > 1e-300:
            h -= left * math.log(left / n_tail)
        return h

    lo = rest / (n_tail + 1)
    hi = min(p2, rest)
    h_max, h_min = h_of(lo), h_of(hi)
    if not h_min - 1e-9 <= h_target <= h_max + 1e-9:
        raise InvalidConfig(
            f"entropy target {h_target:.6f} outside reachable [{h_min:.6f}, {h_max:.6f}] "
            f"for top_prob={p1}, margin={margin}, vocab={vocab}"
        )
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if h_of(mid) > h_target:
            lo = mid
        else:
            hi = mid
    p3 = 0.5 * (lo + hi)
    return np.array([p1, p2, p3]), rest - p3


@dataclass(frozen=True)
class TraceRecord:
    """One recorded step along a prompt's target greedy path."""

    prompt_id: str
    step: int
    draft_topk: tuple[tuple[TokenId, float], ...]
    tail_mass: float
    target_token: TokenId


def write_trace(path, records) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "prompt_id": rec.prompt_id,
                        "step": rec.step,
                        "draft_topk": [[int(t), float(p)] for t, p in rec.draft_topk],
                        "tail_mass": float(rec.tail_mass),
                        "target_token": int(rec.target_token),
                    }
                )
            )
            fh.write("\n")
            n += 1
    return n


def read_trace(path) -> list[TraceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"line {lineno}: not valid JSON ({exc})")
            try:
                records.append(
                    TraceRecord(
                        prompt_id=str(obj["prompt_id"]),
                        step=int(obj["step"]),
                        draft_topk=tuple((int(t), float(p)) for t, p in obj["draft_topk"]),
                        tail_mass=float(obj["tail_mass"]),
                        target_token=int(obj["target_token"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedTrace(f"line {lineno}: bad record ({exc})")
    return records


def group_trace(records, vocab_size: int | None = None):
    """Group records by prompt and validate the schema invariants.

    Returns (ordered {prompt_id: [records]}, vocab_size), inferring the
    vocabulary as max token id + 1 when not given.
    """
    groups: dict[str, list[TraceRecord]] = {}
    max_id = 1
    for rec in records:
        groups.setdefault(rec.prompt_id, []).append(rec)
        ids = [t for t, _ in rec.draft_topk]
        if len(set(ids)) != len(ids):
            raise MalformedTrace(f"{rec.prompt_id} step {rec.step}: duplicate top-k ids")
        if any(t < 0 for t in ids) or rec.target_token < 0:
            raise MalformedTrace(f"{rec.prompt_id} step {rec.step}: negative token id")
        if any(p < 0.0 for _, p in rec.draft_topk) or rec.tail_mass < 0.0:
            raise MalformedTrace(f"{rec.prompt_id} step {rec.step}: negative probability")
        total = sum(p for _, p in rec.draft_topk) + rec.tail_mass
        if abs(total - 1.0) > TRACE_MASS_TOL:
            raise MalformedTrace(
                f"{rec.prompt_id} step {rec.step}: mass {total!r} violates {TRACE_MASS_TOL}"
            )
        max_id = max(max_id, rec.target_token, *(ids or [0]))
    if not groups:
        raise MalformedTrace("trace contains no records")
    for pid, recs in groups.items():
        for i, rec in enumerate(recs):
            if rec.step != i:
                raise MalformedTrace(f"{pid}: steps not contiguous from 0 (saw {rec.step} at {i})")
    if vocab_size is None:
        vocab_size = max_id + 1
    elif max_id >= vocab_size:
        raise MalformedTrace(f"token id {max_id} outside vocab_size {vocab_size}")
    return groups, max(vocab_size, 2)


class ReplayPair(ModelPair):
    """Replays recorded draft distributions along each prompt's target path.

    The trace stores no prompt tokens, so prompts are placeholder contexts
    (the prompt index encoded base-vocab at fixed width).  After a drafted
    token diverges from the recorded path, later draft calls reuse the
    recorded distribution at the same absolute position; such tokens are
    guaranteed rejected under prefix matching, so only stopping signals are
    approximated.  The end of a recorded path behaves as end-of-sequence.
    """

    def __init__(self, records, vocab_size: int | None = None):
        groups, vocab = group_trace(records, vocab_size)
        self.vocab_size = vocab
        self._order = list(groups)
        self._index = {pid: i for i, pid in enumerate(self._order)}
        width = 1
        while vocab**width < len(self._order):
            width += 1
        self._width = width
        self._dists: list[list[ProbDist]] = []
        self._targets: list[list[TokenId]] = []
        for pid in self._order:
            dists, targets = [], []
            for rec in groups[pid]:
                total = sum(p for _, p in rec.draft_topk) + rec.tail_mass
                entries = [(t, p / total) for t, p in rec.draft_topk]
                dists.append(ProbDist.sparse(vocab, entries, tail_mass=rec.tail_mass / total))
                targets.append(rec.target_token)
            self._dists.append(dists)
            self._targets.append(targets)

    def _placeholder(self, index: int) -> tuple[TokenId, ...]:
        digits = []
        for _ in range(self._width):
            digits.append(index % self.vocab_size)
            index //= self.vocab_size
        return tuple(digits)

    def prompts(self) -> list[Prompt]:
        out = []
        for i, pid in enumerate(self._order):
            tag = pid.split(":", 1)[0] if ":" in pid else "trace"
            out.append(Prompt(id=pid, tag=tag, tokens=self._placeholder(i)))
        return out

    def path_length(self, prompt_id: str) -> int:
        return len(self._targets[self._index[prompt_id]])

    def _resolve(self, context: Sequence[TokenId]) -> tuple[int, int]:
        if len(context) < self._width:
            raise UnknownPrompt("context shorter than the prompt placeholder")
        index = 0
        for k in range(self._width - 1, -1, -1):
            index = index * self.vocab_size + context[k]
        if not 0 <= index < len(self._order):
            raise UnknownPrompt(f"context does not start with a known prompt (decoded {index})")
        return index, len(context) - self._width

    def draft_next(self, context: Sequence[TokenId]) -> ProbDist:
        idx, pos = self._resolve(context)
        dists = self._dists[idx]
        if pos >= len(dists):
            raise ValueError(f"drafting past the end of the recorded path (step {pos})")
        return dists[pos]

    def target_greedy(self, context: Sequence[TokenId]) -> TokenId:
        idx, pos = self._resolve(context)
        targets = self._targets[idx]
        if pos >= len(targets):
            raise ValueError(f"target queried past the end of the recorded path (step {pos})")
        return targets[pos]

    def remaining(self, context: Sequence[TokenId]) -> int | None:
        idx, pos = self._resolve(context)
        return max(0, len(self._targets[idx]) - pos)


def replay_pair(records, vocab_size: int | None = None) -> ReplayPair:
    return ReplayPair(records, vocab_size=vocab_size)


def dump_trace(pair: ModelPair, path, max_steps: int, topk: int = 16) -> int:
    """Record each prompt's target path and on-path draft distributions.

    Dense distributions are truncated to the top ``topk`` entries with the
    remainder lumped into the uniform tail (a documented approximation);
    sparse distributions are stored exactly.
    """
    records = []
    for prompt in pair.prompts():
        pid = prompt.id if ":" in prompt.id else f"{prompt.tag}:{prompt.id}"
        context = list(prompt.tokens)
        steps = max_steps
        left = pair.remaining(context)
        if left is not None:
            steps = min(steps, left)
        for step in range(steps):
            dist = pair.draft_next(context)
            if dist.ids is None:
                order = np.argsort(-dist.probs, kind="stable")[:topk]
                entries = [(int(t), float(dist.probs[t])) for t in order]
                tail = 1.0 - sum(p for _, p in entries)
            else:
                entries = [(int(t), float(p)) for t, p in zip(dist.ids, dist.probs)]
                tail = float(dist.tail_mass)
            target = pair.target_greedy(context)
            records.append(
                TraceRecord(
                    prompt_id=pid,
                    step=step,
                    draft_topk=tuple(entries),
                    tail_mass=max(0.0, tail),
                    target_token=target,
                )
            )
            context.append(target)
    return write_trace(path, records)
