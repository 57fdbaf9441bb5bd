"""Label-free hyperparameter search: TPE sampler, median pruner, trial driver.

All values are higher-is-better. The sampler models good/bad trial
densities per parameter with Parzen windows and proposes the candidate
maximizing their ratio; the pruner stops a running trial whose latest
intermediate value falls strictly below the median of completed trials at
the same epoch.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np

DENSITY_FLOOR = 1e-12


class SearchError(ValueError):
    pass


class TrialPruned(Exception):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # categorical | log_uniform | uniform | int_range
    values: tuple = ()
    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.values:
                raise SearchError(f"{self.name}: categorical needs values")
        elif self.kind in ("log_uniform", "uniform", "int_range"):
            if not self.lo < self.hi:
                raise SearchError(f"{self.name}: requires lo < hi")
            if self.kind == "log_uniform" and self.lo <= 0:
                raise SearchError(f"{self.name}: log_uniform requires lo > 0")
        else:
            raise SearchError(f"{self.name}: unknown kind {self.kind!r}")

    def transform(self, x: float) -> float:
        return math.log(x) if self.kind == "log_uniform" else float(x)

    def untransform(self, x: float):
        if self.kind == "log_uniform":
            return math.exp(x)
        if self.kind == "int_range":
            return int(round(min(max(x, self.lo), self.hi)))
        return float(x)

    @property
    def bounds_t(self):
        return self.transform(self.lo), self.transform(self.hi)


@dataclass(frozen=True)
class HyperparamSpace:
    parameters: tuple

    def __post_init__(self):
        names = [p.name for p in self.parameters]
        if not names:
            raise SearchError("empty space")
        if len(set(names)) != len(names):
            raise SearchError("duplicate parameter names")

    @classmethod
    def from_json(cls, doc) -> "HyperparamSpace":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        params = []
        for spec in doc["parameters"]:
            params.append(
                Param(
                    name=spec["name"],
                    kind=spec["kind"],
                    values=tuple(spec.get("values", ())),
                    lo=float(spec.get("lo", 0.0)),
                    hi=float(spec.get("hi", 0.0)),
                )
            )
        return cls(parameters=tuple(params))


@dataclass
class Trial:
    trial_id: int
    assignment: dict
    intermediate_values: list = field(default_factory=list)  # (epoch, value)
    state: str = "running"
    final_value: float | None = None

    def report(self, epoch: int, value: float):
        if self.intermediate_values and epoch <= self.intermediate_values[-1][0]:
            raise SearchError("epochs must be strictly increasing")
        self.intermediate_values.append((int(epoch), float(value)))

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "assignment": self.assignment,
            "intermediate_values": self.intermediate_values,
            "state": self.state,
            "final_value": self.final_value,
        }

    @classmethod
    def from_json(cls, doc) -> "Trial":
        return cls(
            trial_id=doc["trial_id"],
            assignment=doc["assignment"],
            intermediate_values=[tuple(v) for v in doc["intermediate_values"]],
            state=doc["state"],
            final_value=doc["final_value"],
        )


@dataclass
class SamplerState:
    seed: int = 0
    n_startup: int = 10
    gamma: float = 0.25
    n_candidates: int = 24
    trials: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise SearchError("gamma must lie in (0, 1)")
        self._rng = np.random.default_rng(self.seed)

    def observed(self):
        """Finished trials with an effective objective value.

        Pruned trials contribute their last intermediate value; failed
        trials count as worst-possible.
        """
        out = []
        for t in self.trials:
            if t.state == "complete":
                out.append((t, t.final_value))
            elif t.state == "pruned" and t.intermediate_values:
                out.append((t, t.intermediate_values[-1][1]))
            elif t.state == "failed":
                out.append((t, -math.inf))
        return out


def _sample_uniform(rng, p: Param):
    if p.kind == "categorical":
        return p.values[rng.integers(len(p.values))]
    lo, hi = p.bounds_t
    return p.untransform(rng.uniform(lo, hi))


def _parzen_logpdf(x, obs, bandwidth, lo, hi):
    """Log density of the Parzen mixture at x.

    Kernels are truncated to [lo, hi] and renormalized, else probability
    mass leaking past the bounds makes the edges look artificially sparse.
    A domain-wide prior kernel is mixed in so the density never vanishes
    and the good/bad ratio stays bounded.
    """
    mu = np.asarray(list(obs) + [(lo + hi) / 2.0])
    bw = np.full(mu.shape, bandwidth)
    bw[-1] = hi - lo  # prior kernel
    z = (x - mu) / bw
    mass = _normal_cdf((hi - mu) / bw) - _normal_cdf((lo - mu) / bw)
    mass = np.maximum(mass, 1e-12)
    dens = np.mean(np.exp(-0.5 * z * z) / (bw * math.sqrt(2 * math.pi) * mass))
    return math.log(max(dens, DENSITY_FLOOR))


def _normal_cdf(z):
    from scipy.special import ndtr

    return ndtr(z)


def _bandwidth(obs, lo, hi, n_obs):
    # group range over sqrt(group size), so kernels sharpen as the good
    # trials concentrate; floored at span/sqrt(total observations) to keep
    # early groups from collapsing onto a lucky cluster
    span = hi - lo
    group_range = (max(obs) - min(obs)) if len(obs) > 1 else span
    floor = span / math.sqrt(max(n_obs, 1))
    return max(group_range, floor) / math.sqrt(max(len(obs), 1))


def _truncated_normal(rng, mu, bandwidth, lo, hi):
    for _ in range(64):
        x = mu + bandwidth * rng.standard_normal()
        if lo <= x <= hi:
            return float(x)
    return float(np.clip(mu, lo, hi))


def suggest(state: SamplerState, space: HyperparamSpace) -> dict:
    rng = state._rng
    observed = state.observed()
    if len(observed) < state.n_startup:
        return {p.name: _sample_uniform(rng, p) for p in space.parameters}

    observed.sort(key=lambda tv: (-(tv[1] if math.isfinite(tv[1]) else -1e300), tv[0].trial_id))
    n_good = math.ceil(state.gamma * len(observed))
    good = [t.assignment for t, _ in observed[:n_good]]
    bad = [t.assignment for t, _ in observed[n_good:]]

    best_score, best = -math.inf, None
    for _ in range(state.n_candidates):
        candidate = {}
        score = 0.0
        for p in space.parameters:
            if p.kind == "categorical":
                counts_g = np.array(
                    [sum(1 for a in good if a[p.name] == v) for v in p.values], float
                )
                counts_b = np.array(
                    [sum(1 for a in bad if a[p.name] == v) for v in p.values], float
                )
                pg = (counts_g + 1.0) / (counts_g.sum() + len(p.values))
                pb = (counts_b + 1.0) / (counts_b.sum() + len(p.values))
                idx = rng.choice(len(p.values), p=pg)
                candidate[p.name] = p.values[idx]
                score += math.log(max(pg[idx], DENSITY_FLOOR)) - math.log(
                    max(pb[idx], DENSITY_FLOOR)
                )
            else:
                lo, hi = p.bounds_t
                obs_g = [p.transform(a[p.name]) for a in good]
                obs_b = [p.transform(a[p.name]) for a in bad]
                # bandwidth shrinks with the full observation count; the
                # 0.6 factor trades exploration for late-run precision and
                # the prior kernel keeps the ratio from pinning to a cluster
                span = hi - lo
                n_obs = len(obs_g) + len(obs_b)
                bw_g = 0.6 * span / math.sqrt(max(n_obs, 1))
                bw_b = bw_g
                pick = rng.integers(len(obs_g) + 1)
                if pick == len(obs_g):  # prior kernel
                    x = _truncated_normal(rng, (lo + hi) / 2.0, hi - lo, lo, hi)
                else:
                    x = _truncated_normal(rng, obs_g[pick], bw_g, lo, hi)
                candidate[p.name] = p.untransform(x)
                score += _parzen_logpdf(x, obs_g, bw_g, lo, hi) - _parzen_logpdf(
                    x, obs_b, bw_b, lo, hi
                )
        if score > best_score:
            best_score, best = score, candidate
    return best


def should_prune(
    trial: Trial,
    history,
    n_warmup_epochs: int = 2,
    n_min_trials: int = 5,
) -> bool:
    if not trial.intermediate_values:
        return False
    epoch, value = trial.intermediate_values[-1]
    if epoch <= n_warmup_epochs:
        return False
    completed = [t for t in history if t.state == "complete"]
    if len(completed) < n_min_trials:
        return False
    peers = [
        v for t in completed for (e, v) in t.intermediate_values if e == epoch
    ]
    if not peers:
        return False
    return value < float(np.median(peers))


def run_search(
    space: HyperparamSpace,
    objective,
    n_trials: int = 50,
    seed: int = 0,
    history_path=None,
    n_startup: int = 10,
    gamma: float = 0.25,
    n_candidates: int = 24,
    n_warmup_epochs: int = 2,
    n_min_trials: int = 5,
):
    """Sequential suggest/run/prune loop.

    `objective(assignment, report)` returns the final (higher-is-better)
    value; it calls `report(epoch, value)` after each epoch, which raises
    TrialPruned when the median rule fires. Returns (best_trial, trials).
    """
    state = SamplerState(
        seed=seed, n_startup=n_startup, gamma=gamma, n_candidates=n_candidates
    )
    if history_path and os.path.exists(history_path):
        with open(history_path) as fh:
            for line in fh:
                if line.strip():
                    state.trials.append(Trial.from_json(json.loads(line)))

    def persist(trial):
        if history_path:
            with open(history_path, "a") as fh:
                fh.write(json.dumps(trial.to_json(), sort_keys=True) + "\n")

    start_id = len(state.trials)
    for trial_id in range(start_id, n_trials):
        assignment = suggest(state, space)
        trial = Trial(trial_id=trial_id, assignment=assignment)

        def report(epoch, value, _trial=trial):
            _trial.report(epoch, value)
            if should_prune(_trial, state.trials, n_warmup_epochs, n_min_trials):
                raise TrialPruned()

        try:
            final = objective(assignment, report)
            trial.state = "complete"
            trial.final_value = float(final)
        except TrialPruned:
            trial.state = "pruned"
        except Exception:
            trial.state = "failed"
        state.trials.append(trial)
        persist(trial)

    completed = [t for t in state.trials if t.state == "complete"]
    if not completed:
        raise SearchError("no completed trials")
    best = max(completed, key=lambda t: (t.final_value, -t.trial_id))
    return best, state.trials


def command_objective(command, metric: str = "acm", seed: int = 17):
    """Objective running an external trainer per the trial protocol.

    The command is launched with every hyperparameter appended as
    `--hp name=value`; the child prints `EPOCH <int> SCORE <float>` lines
    and finally `BUNDLE <path>`; the configured metric on that bundle is
    the trial's final value. Nonzero exit status fails the trial.
    """
    from .bundle_io import read_bundle
    from .metrics import compute_all

    base = shlex.split(command) if isinstance(command, str) else list(command)

    def objective(assignment, report):
        cmd = list(base)
        for name in sorted(assignment):
            cmd += ["--hp", f"{name}={assignment[name]}"]
        proc = subprocess.Popen(
            cmd, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True
        )
        bundle_path = None
        try:
            for line in proc.stdout:
                parts = line.split()
                if len(parts) == 4 and parts[0] == "EPOCH" and parts[2] == "SCORE":
                    report(int(parts[1]), float(parts[3]))
                elif len(parts) == 2 and parts[0] == "BUNDLE":
                    bundle_path = parts[1]
        except TrialPruned:
            proc.terminate()
            proc.wait()
            raise
        if proc.wait() != 0:
            raise SearchError("trainer exited with nonzero status")
        if bundle_path is None:
            raise SearchError("trainer produced no BUNDLE line")
        scores, errors = compute_all(read_bundle(bundle_path), seed=seed, metrics=[metric])
        if errors:
            raise SearchError(f"metric failed: {errors}")
        return scores[0].value

    return objective


def synthetic_objective(
    family: str,
    scenario=None,
    metric: str = "acm",
    seed: int = 17,
    n_epochs: int = 10,
    probe_steps: int = 200,
):
    """In-process objective over the synthetic sweep parameter.

    The metric is evaluated once at the trial's sweep position; epoch
    reports ramp linearly to that value so pruning sees non-crossing
    curves.
    """
    from .metrics import compute_all
    from .synth_bench import default_scenario, sweep_model_bundle

    scenario = scenario or default_scenario(family, seed=seed)

    def objective(assignment, report):
        t = float(assignment["trade_off"])
        bundle = sweep_model_bundle(scenario, family, t, index=0, base_seed=seed)
        scores, errors = compute_all(
            bundle, seed=seed, metrics=[metric], probe_steps=probe_steps
        )
        if errors:
            raise SearchError(f"metric failed: {errors}")
        final = scores[0].value
        for epoch in range(1, n_epochs + 1):
            report(epoch, final * epoch / n_epochs)
        return final

    return objective


def synthetic_space() -> HyperparamSpace:
    return HyperparamSpace(
        parameters=(Param(name="trade_off", kind="uniform", lo=0.0, hi=1.0),)
    )


def oracle_accuracy_of_assignment(family, assignment, scenario=None, seed: int = 17):
    from .synth_bench import default_scenario, sweep_model_bundle

    scenario = scenario or default_scenario(family, seed=seed)
    bundle = sweep_model_bundle(
        scenario, family, float(assignment["trade_off"]), index=0, base_seed=seed
    )
    return bundle.true_target_accuracy
