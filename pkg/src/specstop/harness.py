"""Seeded experiment orchestration and machine-readable result emission.

An experiment compares controllers against a shared fixed-length baseline
(six drafted tokens per session) on a prompt suite, once per seed.  Child
random streams are derived from the experiment seed by label hashing, so
adding a controller never perturbs another controller's randomness:

    model stream   <- (seed, "model", group tag, model seed)
    policy stream  <- (seed, "policy", controller name)

Outputs per run: a delimited results table with per-seed rows and
mean +/- std summary lines, a JSON manifest echoing the full config, one
newline-delimited arm-value series per bandit controller, and per-position
entropy profiles of accepted tokens.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .arms import AdaEDLState, ArmConfig, ArmKind
from .bandits import BANDIT_KINDS
from .controller import Controller, ControllerConfig, MODES
from .metrics import CostModel, RewardConfig, entropy_profile, summarize
from .models import InvalidConfig, MalformedTrace, ReplayPair, SyntheticPairConfig, read_trace, replay_pair, synth_pair

BASELINE_NAME = "static-6"


class ConfigError(ValueError):
    """Experiment configuration is structurally invalid."""


def derive_seed(root: int, *labels) -> int:
    """Stable 64-bit child seed for (root, labels)."""
    h = hashlib.sha256(str(int(root)).encode())
    for lab in labels:
        h.update(b"\x1f")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest()[:8], "big")


def rng_for(root: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))


@dataclass(frozen=True)
class SuiteGroup:
    """One tagged block of synthetic prompts; overrides patch the model."""

    tag: str
    prompt_count: int = 16
    tokens_per_prompt: int = 12
    max_new_tokens: int = 64
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict  # {"kind": "synthetic", ...} or {"kind": "trace", "path": ...}
    controllers: tuple[ControllerConfig, ...]
    suite: tuple[SuiteGroup, ...] = ()
    reward: RewardConfig = field(default_factory=RewardConfig)
    cost: CostModel = field(default_factory=CostModel)
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "results"
    max_new_tokens: int = 64  # cap for trace-driven prompts


@dataclass(frozen=True)
class ResultRow:
    controller: str
    seed: int
    tag: str
    m: float
    accept_rate: float
    speedup: float


@dataclass(frozen=True)
class ExperimentResult:
    rows: tuple[ResultRow, ...]
    files: tuple[str, ...]
    out_dir: str


def _parse_arm(obj) -> ArmConfig:
    try:
        kind = ArmKind(obj["kind"])
    except (KeyError, ValueError):
        raise ConfigError(f"arm needs a valid kind, got {obj!r}")
    return ArmConfig(kind=kind, threshold=obj.get("threshold"))


def _parse_controller(obj, default_reward: RewardConfig) -> ControllerConfig:
    if "name" not in obj or "mode" not in obj:
        raise ConfigError(f"controller needs name and mode: {obj!r}")
    if obj["mode"] not in MODES:
        raise ConfigError(f"unknown controller mode {obj['mode']!r}; known: {MODES}")
    bandit = obj.get("bandit")
    if bandit is not None and bandit not in BANDIT_KINDS:
        raise ConfigError(f"unknown bandit {bandit!r}; known: {sorted(BANDIT_KINDS)}")
    reward = default_reward
    if "reward" in obj:
        reward = RewardConfig(**obj["reward"])
    arms = None
    if "arms" in obj:
        arms = tuple(_parse_arm(a) for a in obj["arms"])
    adaedl = AdaEDLState(**obj["adaedl"]) if "adaedl" in obj else AdaEDLState()
    try:
        return ControllerConfig(
            name=str(obj["name"]),
            mode=obj["mode"],
            gamma_max=obj.get("gamma_max"),
            bandit=bandit,
            arms=arms,
            reward=reward,
            reset_per_prompt=bool(obj.get("reset_per_prompt", False)),
            adaedl_init=adaedl,
            bandit_params=obj.get("bandit_params"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"controller {obj.get('name')!r}: {exc}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return config_from_dict(raw, base_dir=Path(path).parent)


def config_from_dict(raw: dict, base_dir=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    model = raw.get("model")
    if not isinstance(model, dict) or model.get("kind") not in ("synthetic", "trace"):
        raise ConfigError('model.kind must be "synthetic" or "trace"')
    if model["kind"] == "trace":
        p = Path(model.get("path", ""))
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        if not p.is_file():
            raise ConfigError(f"trace file not found: {p}")
        model = dict(model, path=str(p))

    try:
        reward = RewardConfig(**raw.get("reward", {}))
        cost = CostModel(**raw.get("cost", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))

    controllers = tuple(
        _parse_controller(obj, reward) for obj in raw.get("controllers", [])
    )
    if not controllers:
        raise ConfigError("at least one controller is required")
    names = [c.name for c in controllers]
    if len(set(names)) != len(names) or BASELINE_NAME in names:
        raise ConfigError(
            f"controller names must be unique and must not shadow {BASELINE_NAME!r}"
        )

    suite = tuple(
        SuiteGroup(
            tag=str(g["tag"]),
            prompt_count=int(g.get("prompt_count", 16)),
            tokens_per_prompt=int(g.get("tokens_per_prompt", 12)),
            max_new_tokens=int(g.get("max_new_tokens", 64)),
            overrides={
                k: v
                for k, v in g.items()
                if k not in ("tag", "prompt_count", "tokens_per_prompt", "max_new_tokens")
            },
        )
        for g in raw.get("suite", [])
    )
    if model["kind"] == "synthetic" and not suite:
        raise ConfigError("synthetic experiments need at least one suite group")

    seeds = tuple(int(s) for s in raw.get("seeds", []))
    if not seeds:
        raise ConfigError("at least one seed is required")

    config = ExperimentConfig(
        model=model,
        controllers=controllers,
        suite=suite,
        reward=reward,
        cost=cost,
        seeds=seeds,
        out_dir=str(raw.get("out_dir", "results")),
        max_new_tokens=int(raw.get("max_new_tokens", 64)),
    )
    _validate_runnable(config)
    return config


def _validate_runnable(config: ExperimentConfig) -> None:
    """Cheap construction checks so `validate` fails before any run does."""
    if config.model["kind"] == "synthetic":
        for group in config.suite:
            _synthetic_config(config, group, seed=0)
            if group.max_new_tokens < 1:
                raise ConfigError(f"suite group {group.tag!r}: max_new_tokens must be >= 1")
    if config.max_new_tokens < 1:
        raise ConfigError("max_new_tokens must be >= 1")


def _synthetic_config(config: ExperimentConfig, group: SuiteGroup, seed: int) -> SyntheticPairConfig:
    params = {k: v for k, v in config.model.items() if k not in ("kind", "seed")}
    params.update(group.overrides)
    params.update(
        prompt_count=group.prompt_count,
        tokens_per_prompt=group.tokens_per_prompt,
        tag=group.tag,
        seed=derive_seed(seed, "model", group.tag, config.model.get("seed", 0)),
    )
    try:
        return SyntheticPairConfig(**params)
    except (TypeError, InvalidConfig) as exc:
        raise ConfigError(f"suite group {group.tag!r}: {exc}")


def _run_one(config: ExperimentConfig, ctrl: ControllerConfig, seed: int, trace_pair):
    """Run one controller over the whole suite; returns per-tag session stats
    and the controller's arm-value log."""
    controller = Controller(ctrl, rng=rng_for(seed, "policy", ctrl.name))
    by_tag: dict[str, list] = {}
    if config.model["kind"] == "synthetic":
        for group in config.suite:
            pair = synth_pair(_synthetic_config(config, group, seed))
            for prompt in pair.prompts():
                res = controller.generate(pair, prompt.tokens, group.max_new_tokens, tag=group.tag)
                by_tag.setdefault(group.tag, []).extend(res.stats)
    else:
        for prompt in trace_pair.prompts():
            res = controller.generate(
                trace_pair, prompt.tokens, config.max_new_tokens, tag=prompt.tag
            )
            by_tag.setdefault(prompt.tag, []).extend(res.stats)
    return by_tag, controller.arm_log


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", name)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every (controller, seed) against the shared per-seed baseline and
    write all result artifacts.  Deterministic per (config, seed)."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_pair: ReplayPair | None = None
    if config.model["kind"] == "trace":
        trace_pair = replay_pair(
            read_trace(config.model["path"]), vocab_size=config.model.get("vocab_size")
        )

    baseline_cfg = ControllerConfig(name=BASELINE_NAME, mode="static", gamma_max=6)
    rows: list[ResultRow] = []
    files: list[str] = []

    for seed in config.seeds:
        base_by_tag, _ = _run_one(config, baseline_cfg, seed, trace_pair)
        base_all = [s for stats in base_by_tag.values() for s in stats]
        for tag in base_by_tag:
            rm = summarize(base_by_tag[tag], base_by_tag[tag], config.cost)
            rows.append(ResultRow(BASELINE_NAME, seed, tag, rm.m, rm.accept_rate, rm.speedup))
        files.append(_write_profile(out_dir, BASELINE_NAME, seed, base_all))

        for ctrl in config.controllers:
            by_tag, arm_log = _run_one(config, ctrl, seed, trace_pair)
            for tag in by_tag:
                if tag not in base_by_tag:
                    raise ConfigError(f"tag {tag!r} missing from the baseline run")
                rm = summarize(by_tag[tag], base_by_tag[tag], config.cost)
                rows.append(ResultRow(ctrl.name, seed, tag, rm.m, rm.accept_rate, rm.speedup))
            all_stats = [s for stats in by_tag.values() for s in stats]
            files.append(_write_profile(out_dir, ctrl.name, seed, all_stats))
            if arm_log:
                files.append(_write_arm_values(out_dir, ctrl.name, seed, arm_log))

    files.extend(emit_results(rows, out_dir, manifest=_manifest(config)))
    return ExperimentResult(rows=tuple(rows), files=tuple(files), out_dir=str(out_dir))


def _write_profile(out_dir: Path, name: str, seed: int, stats) -> str:
    path = out_dir / f"entropy_profile_{_slug(name)}_{seed}.csv"
    profile = entropy_profile(stats)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "position", "count", "mean_sqrt_entropy", "std_sqrt_entropy"])
        for tag in profile:
            for stat in profile[tag]:
                writer.writerow(
                    [tag, stat.position, stat.count, f"{stat.mean:.6f}", f"{stat.std:.6f}"]
                )
    return str(path)


def _write_arm_values(out_dir: Path, name: str, seed: int, arm_log) -> str:
    path = out_dir / f"armvalues_{_slug(name)}_{seed}.ndjson"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in arm_log:
            fh.write(
                json.dumps(
                    {
                        "session": rec.session,
                        "position": rec.position,
                        "values": list(rec.snapshot.values),
                        "counts": list(rec.snapshot.counts),
                    }
                )
            )
            fh.write("\n")
    return str(path)


def _manifest(config: ExperimentConfig) -> dict:
    return {
        "package": "specstop",
        "version": __version__,
        "seeds": list(config.seeds),
        "config": config_to_dict(config),
    }


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "model": dict(config.model),
        "controllers": [
            {
                "name": c.name,
                "mode": c.mode,
                "gamma_max": c.resolved_gamma(),
                "bandit": c.bandit,
                "arms": [
                    {"kind": a.kind.value, "threshold": a.threshold}
                    for a in c.resolved_arms()
                ],
                "reward": {"kind": c.reward.kind, "alpha": c.reward.alpha},
                "reset_per_prompt": c.reset_per_prompt,
            }
            for c in config.controllers
        ],
        "suite": [
            {
                "tag": g.tag,
                "prompt_count": g.prompt_count,
                "tokens_per_prompt": g.tokens_per_prompt,
                "max_new_tokens": g.max_new_tokens,
                **g.overrides,
            }
            for g in config.suite
        ],
        "reward": {"kind": config.reward.kind, "alpha": config.reward.alpha},
        "cost": {"c_draft": config.cost.c_draft, "c_target": config.cost.c_target},
        "seeds": list(config.seeds),
        "out_dir": config.out_dir,
        "max_new_tokens": config.max_new_tokens,
    }


def emit_results(rows, out_dir, manifest: dict) -> list[str]:
    """Write the results table (with mean +/- std summary lines) and the run
    manifest; returns the written paths."""
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "results.csv"
    with open(table, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["controller", "seed", "tag", "m", "accept_rate", "speedup"])
        for r in rows:
            writer.writerow(
                [r.controller, r.seed, r.tag, f"{r.m:.6f}", f"{r.accept_rate:.6f}", f"{r.speedup:.6f}"]
            )
        seen: list[tuple[str, str]] = []
        for r in rows:
            if (r.controller, r.tag) not in seen:
                seen.append((r.controller, r.tag))
        for controller, tag in seen:
            group = [r for r in rows if r.controller == controller and r.tag == tag]
            writer.writerow(
                [controller, "summary", tag]
                + [
                    _mean_std([getattr(r, k) for r in group])
                    for k in ("m", "accept_rate", "speedup")
                ]
            )
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [str(table), str(manifest_path)]


def _mean_std(values) -> str:
    arr = np.asarray(values, dtype=np.float64)
    return f"{arr.mean():.6f}±{arr.std():.6f}"
