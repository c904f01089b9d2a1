"""Critical branching random walk on Z^d, started far from the origin.

Each individual lives one generation. At generation t every particle first
records whether it sits on the target, is pruned if it is hopelessly far
away, and then is replaced by k ~ offspring law children, each taking an
independent walk step from the parent's site.

Randomness is counter-based: every draw is a hash of (seed, trial, clone
path, generation, index within generation, draw kind), so a trial's outcome
does not depend on how trials are scheduled across workers.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numba as nb
import numpy as np
from scipy.stats import binomtest

from .kernel import ConfigurationError

MASK64 = (1 << 64) - 1
CHUNK = 2048
# default t_max = T_MAX_FACTOR * |start|^2; at 8 the truncated share of hits exceeds 10% for small |start|
T_MAX_FACTOR = 32

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GEN = np.uint64(0xD1B54A32D192ED03)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)

EXTINCT, TRUNCATED, ENTERED = 0, 1, 2

# counters layout shared by the kernels
_VISITS, _FIRST_HIT, _PROGENY, _PRUNED, _LABELMASK, _FINALPOP, _GENMAX = range(7)
N_COUNTERS = 7


@nb.njit(inline="always")
def _mix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


@nb.njit(inline="always")
def _uniform(x):
    return (x >> _S11) * (1.0 / 9007199254740992.0)


def splitmix64(x: int) -> int:
    """Python reference of the mixing function used inside the kernels."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_key(seed: int, trial_index: int) -> int:
    return splitmix64(splitmix64(seed & MASK64) ^ (trial_index & MASK64))


def clone_key(parent: int, level: int, clone: int) -> int:
    """Key of a splitting clone; clone 0 keeps the parent's stream."""
    if clone == 0:
        return parent
    return splitmix64(parent ^ splitmix64((level << 32) + clone))


# ----------------------------------------------------------------- kernel

@nb.njit(inline="always")
def _record(r2, lab, t, target_r2, counters):
    if r2 <= target_r2:
        counters[_VISITS] += 1
        if counters[_FIRST_HIT] < 0:
            counters[_FIRST_HIT] = t
        if lab >= 0:
            counters[_LABELMASK] |= np.int64(1) << min(lab, 62)


@nb.njit(nogil=True, cache=True)
def _grow(arr, keep, cap):
    out = np.empty((cap,) + arr.shape[1:], dtype=arr.dtype)
    out[:keep] = arr[:keep]
    return out


@nb.njit(nogil=True, cache=True)
def _advance(pos, r2, labels, nxt, nr2, nlab, n, t, key, d, t_max, slack2, stop_r2, target_r2,
             hold, off_kind, cdf, counters):
    """Run generations from t until extinction, t_max, or a particle inside stop_r2.

    (pos, r2, labels) hold generation t, already recorded; (nxt, nr2, nlab)
    are scratch buffers.  Returns the status, the possibly regrown buffers
    and (n, t); on ENTERED the state can be passed straight back in.
    """
    two_d = np.uint64(2 * d)
    hmask = np.int64(1) if hold else np.int64(0)
    while True:
        if n == 0:
            counters[_FINALPOP] = 0
            return EXTINCT, pos, r2, labels, nxt, nr2, nlab, n, t
        if t >= t_max:
            counters[_FINALPOP] = n
            return TRUNCATED, pos, r2, labels, nxt, nr2, nlab, n, t
        if n > counters[_GENMAX]:
            counters[_GENMAX] = n
        budget = slack2 * (t_max - t)
        gkey = _mix(key ^ (np.uint64(t) * _GEN))
        j = 0
        entered = False
        for i in range(n):
            if r2[i] > budget:
                counters[_PRUNED] += 1
                continue
            x = _mix(gkey ^ (np.uint64(i) << np.uint64(2)))
            if off_kind == 1:
                k = 0
                while x & np.uint64(1):
                    k += 1
                    x = x >> np.uint64(1)
            else:
                u = _uniform(x)
                k = 0
                while k < cdf.shape[0] - 1 and cdf[k] <= u:
                    k += 1
            if j + k > nxt.shape[0]:
                cap = max(2 * nxt.shape[0], j + k)
                nxt = _grow(nxt, j, cap)
                nr2 = _grow(nr2, j, cap)
                nlab = _grow(nlab, j, cap)
            for c in range(k):
                for a in range(d):
                    nxt[j, a] = pos[i, a]
                y = _mix(gkey ^ ((np.uint64(j) << np.uint64(2)) | np.uint64(1)))
                # branch-free lazy/simple step
                move = 1 - (hmask & np.int64(y & np.uint64(1)))
                dirn = (y >> np.uint64(1)) % two_d
                axis = np.int64(dirn >> np.uint64(1))
                delta = move * (2 * np.int64(dirn & np.uint64(1)) - 1)
                old = nxt[j, axis]
                nxt[j, axis] = old + delta
                rr = r2[i] + 2 * old * delta + move
                nr2[j] = rr
                lab = c if t == 0 else labels[i]
                nlab[j] = lab
                _record(rr, lab, t + 1, target_r2, counters)
                if rr <= stop_r2:
                    entered = True
                j += 1
        counters[_PROGENY] += j
        pos, nxt = nxt, pos
        r2, nr2 = nr2, r2
        labels, nlab = nlab, labels
        n = j
        t += 1
        if entered and n > 0 and t < t_max:
            return ENTERED, pos, r2, labels, nxt, nr2, nlab, n, t


@nb.njit(nogil=True, cache=True)
def _root_state(start, target_r2, counters):
    d = start.shape[0]
    pos = np.empty((64, d), dtype=np.int64)
    r2 = np.zeros(64, dtype=np.int64)
    labels = np.full(64, -1, dtype=np.int64)
    s = 0
    for a in range(d):
        pos[0, a] = start[a]
        s += start[a] * start[a]
    r2[0] = s
    labels[0] = -1
    counters[:] = 0
    counters[_FIRST_HIT] = -1
    _record(s, -1, 0, target_r2, counters)
    return pos, r2, labels


@nb.njit(nogil=True, cache=True)
def _run_chunk(keys, start, t_max, slack2, target_r2, hold, off_kind, cdf, out):
    d = start.shape[0]
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    pos, r2, labels = _root_state(start, target_r2, counters)
    nxt, nr2, nlab = np.empty_like(pos), np.empty_like(r2), np.empty_like(labels)
    s = r2[0]
    for r in range(keys.shape[0]):
        # reuse buffers across trials; only the root slot needs resetting
        counters[:] = 0
        counters[_FIRST_HIT] = -1
        for a in range(d):
            pos[0, a] = start[a]
        r2[0] = s
        labels[0] = -1
        _record(s, -1, 0, target_r2, counters)
        status, pos, r2, labels, nxt, nr2, nlab, n, t = _advance(
            pos, r2, labels, nxt, nr2, nlab, 1, 0, keys[r], d, t_max, slack2, -1,
            target_r2, hold, off_kind, cdf, counters)
        out[r, 0] = status
        out[r, 1] = counters[_VISITS]
        out[r, 2] = counters[_FIRST_HIT]
        out[r, 3] = counters[_PROGENY] + 1
        out[r, 4] = counters[_PRUNED]
        # number of root-child subtrees that reached the target
        mask = counters[_LABELMASK]
        cnt = 0
        while mask:
            cnt += mask & 1
            mask >>= 1
        out[r, 5] = cnt
        out[r, 6] = counters[_FINALPOP]
        out[r, 7] = t


# ----------------------------------------------------------------- config

@dataclass(frozen=True)
class OffspringLaw:
    kind: str = "binary"
    probs: tuple = ()

    def __post_init__(self):
        if self.kind == "binary":
            object.__setattr__(self, "probs", (0.5, 0.0, 0.5))
        elif self.kind == "geometric":
            object.__setattr__(self, "probs", ())
        elif self.kind == "custom":
            p = np.asarray(self.probs, dtype=float)
            if p.ndim != 1 or p.size < 2 or np.any(p < 0):
                raise ConfigurationError("custom offspring law needs a nonnegative probability vector")
            if abs(p.sum() - 1.0) > 1e-15:
                raise ConfigurationError("offspring probabilities must sum to 1")
            if abs(p @ np.arange(p.size) - 1.0) > 1e-12:
                raise ConfigurationError("offspring law must be critical (mean 1)")
            object.__setattr__(self, "probs", tuple(float(v) for v in p))
        else:
            raise ConfigurationError(f"unknown offspring law {self.kind!r}")

    @property
    def mean(self) -> float:
        if self.kind == "geometric":
            return 1.0
        p = np.asarray(self.probs)
        return float(p @ np.arange(p.size))

    @property
    def variance(self) -> float:
        if self.kind == "geometric":
            return 2.0
        p = np.asarray(self.probs)
        k = np.arange(p.size)
        return float(p @ k**2 - (p @ k) ** 2)

    @property
    def max_offspring(self) -> float:
        return math.inf if self.kind == "geometric" else len(self.probs) - 1

    def pgf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "geometric":
            return 1.0 / (2.0 - s)
        return np.polyval(np.asarray(self.probs)[::-1], s)

    def _kernel_args(self):
        if self.kind == "geometric":
            return 1, np.ones(1)
        return 0, np.cumsum(self.probs)


def exact_survival(law: OffspringLaw, n: int) -> float:
    """P(Z_n > 0) by iterating the generating function."""
    q = 0.0
    for _ in range(n):
        q = float(law.pgf(q))
    return 1.0 - q


@dataclass(frozen=True)
class TrialConfig:
    d: int
    start: tuple
    t_max: int | None = None
    walk: str = "lazy"
    offspring: OffspringLaw = field(default_factory=OffspringLaw)
    prune_slack: float = 4.0
    target_radius: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or not 1 <= self.d <= 8:
            raise ConfigurationError("lattice dimension must be in 1..8")
        start = tuple(int(v) for v in self.start)
        if len(start) != self.d:
            raise ConfigurationError("start site must have d coordinates")
        object.__setattr__(self, "start", start)
        if self.t_max is None:
            object.__setattr__(self, "t_max", max(T_MAX_FACTOR * self.start_norm2, 64))
        if self.t_max < 4 * self.start_norm2:
            raise ConfigurationError("t_max must be at least 4|start|^2")
        if not self.prune_slack >= 3:
            raise ConfigurationError("prune_slack must be >= 3 (use inf to disable pruning)")
        if self.walk not in ("lazy", "simple"):
            raise ConfigurationError("walk must be 'lazy' or 'simple'")
        if self.target_radius < 0:
            raise ConfigurationError("target radius must be nonnegative")

    @classmethod
    def axis_start(cls, d: int, distance: int, **kw) -> "TrialConfig":
        return cls(d, (int(distance),) + (0,) * (d - 1), **kw)

    @property
    def start_norm2(self) -> int:
        return sum(v * v for v in self.start)

    @property
    def start_distance(self) -> float:
        return math.sqrt(self.start_norm2)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["start"] = list(self.start)
        out["offspring"] = {"kind": self.offspring.kind, "probs": list(self.offspring.probs)}
        return out

    def to_text(self) -> str:
        """Flat key = value form."""
        o = self.offspring
        lines = [f"d = {self.d}", f"start = {','.join(map(str, self.start))}", f"t_max = {self.t_max}",
                 f"walk = {self.walk}", f"offspring = {o.kind}", f"prune_slack = {self.prune_slack!r}",
                 f"target_radius = {self.target_radius!r}"]
        if o.kind == "custom":
            lines.append(f"offspring_probs = {','.join(repr(p) for p in o.probs)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrialConfig":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"malformed config line {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        return cls.from_mapping(kv)

    @classmethod
    def from_mapping(cls, kv) -> "TrialConfig":
        known = {"d", "start", "t_max", "walk", "offspring", "offspring_probs", "prune_slack", "target_radius"}
        unknown = set(kv) - known
        if unknown:
            raise ConfigurationError(f"unknown simulate keys {sorted(unknown)}")
        try:
            d = int(kv["d"])
            start = tuple(int(s) for s in str(kv["start"]).split(","))
            if len(start) == 1 and d > 1:
                start = start + (0,) * (d - 1)
            probs = tuple(float(s) for s in kv["offspring_probs"].split(",")) if "offspring_probs" in kv else ()
            return cls(d=d, start=start,
                       t_max=int(kv["t_max"]) if kv.get("t_max") not in (None, "", "None") else None,
                       walk=kv.get("walk", "lazy"),
                       offspring=OffspringLaw(kv.get("offspring", "binary"), probs),
                       prune_slack=float(kv.get("prune_slack", 4.0)),
                       target_radius=float(kv.get("target_radius", 0.0)))
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"invalid simulate config: {exc}") from exc

    def _kernel_args(self):
        kind, cdf = self.offspring._kernel_args()
        slack2 = math.inf if math.isinf(self.prune_slack) else self.prune_slack**2
        return (np.asarray(self.start, dtype=np.int64), int(self.t_max), float(slack2),
                int(math.floor(self.target_radius**2 + 1e-9)), self.walk == "lazy", kind, cdf)


# ---------------------------------------------------------------- outcomes

OUTCOME_FIELDS = ("hit", "visits", "distinct_visitors", "first_hit_generation", "total_progeny",
                  "truncated", "pruned_mass", "hitting_subtrees", "final_population", "last_generation")


@dataclass(frozen=True)
class TrialOutcome:
    hit: bool
    visits: int
    distinct_visitors: int  # equals visits: every individual lives one generation
    first_hit_generation: int  # -1 if no hit
    total_progeny: int
    truncated: bool
    pruned_mass: int
    hitting_subtrees: int = 0
    final_population: int = 0
    last_generation: int = 0

    @property
    def flagged(self) -> bool:
        return self.truncated or self.pruned_mass > 0


def _rows_to_columns(raw: np.ndarray) -> dict:
    visits = raw[:, 1].copy()
    return {"hit": visits > 0, "visits": visits, "distinct_visitors": visits.copy(),
            "first_hit_generation": raw[:, 2].copy(), "total_progeny": raw[:, 3].copy(),
            "truncated": raw[:, 0] == TRUNCATED, "pruned_mass": raw[:, 4].copy(),
            "hitting_subtrees": raw[:, 5].copy(), "final_population": raw[:, 6].copy(),
            "last_generation": raw[:, 7].copy()}


def default_workers() -> int:
    return max(1, int(os.environ.get("SBMOCC_WORKERS", "1")))


def _simulate_indices(config: TrialConfig, seed: int, indices: np.ndarray, workers: int | None = None) -> np.ndarray:
    """Raw outcome rows for the given trial indices; row order follows ``indices``."""
    args = config._kernel_args()
    keys = np.array([trial_key(seed, int(i)) for i in indices], dtype=np.uint64)
    out = np.zeros((len(indices), 8), dtype=np.int64)
    bounds = [(a, min(a + CHUNK, len(indices))) for a in range(0, len(indices), CHUNK)]

    def work(b):
        a, e = b
        _run_chunk(keys[a:e], *args, out[a:e])

    workers = workers or default_workers()
    if workers == 1 or len(bounds) <= 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, bounds))
    return out


def run_trial(config: TrialConfig, seed: int, trial_index: int) -> TrialOutcome:
    raw = _simulate_indices(config, seed, np.array([trial_index]), workers=1)
    cols = _rows_to_columns(raw)
    return TrialOutcome(**{k: (bool(v[0]) if v.dtype == bool else int(v[0])) for k, v in cols.items()})


@dataclass
class BatchResult:
    config: TrialConfig
    seed: int
    n_trials: int
    columns: dict  # field -> array over trials (index order)

    def outcome(self, i: int) -> TrialOutcome:
        return TrialOutcome(**{k: (bool(v[i]) if v.dtype == bool else int(v[i])) for k, v in self.columns.items()})

    def summary(self) -> dict:
        c = self.columns
        n = self.n_trials
        hits = int(c["hit"].sum())
        ci = binomtest(hits, n).proportion_ci(0.95, method="wilson") if n else None
        flagged_hits = int((c["hit"] & ((c["truncated"]) | (c["pruned_mass"] > 0))).sum())
        clean = c["hit"] & ~c["truncated"]
        return {"n_trials": n, "seed": self.seed, "hits": hits, "hit_rate": hits / n,
                "hit_rate_ci": [ci.low, ci.high],
                "truncated_rate": float(c["truncated"].mean()),
                "truncated_hits": int((c["hit"] & c["truncated"]).sum()),
                "flagged_hits": flagged_hits,
                "pruned_trials": int((c["pruned_mass"] > 0).sum()),
                "pruned_mass_total": int(c["pruned_mass"].sum()),
                "mean_final_population": float(c["final_population"].mean()),
                "conditioned_mean_visits": float(c["visits"][clean].mean()) if clean.any() else None,
                "conditioned_sample_size": int(clean.sum())}

    def conditioned_visits(self) -> np.ndarray:
        c = self.columns
        return c["visits"][c["hit"] & ~c["truncated"]]

    def to_csv(self, path, only_hits: bool = True) -> None:
        c = self.columns
        idx = np.flatnonzero(c["hit"]) if only_hits else np.arange(self.n_trials)
        _write_rows(path, ["trial"] + list(OUTCOME_FIELDS), [idx] + [c[k][idx].astype(np.int64) for k in OUTCOME_FIELDS])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"config": self.config.to_dict(), **self.summary()}, fh, indent=2)


def _write_rows(path, header, cols):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(str(int(v)) if not isinstance(v, (float, np.floating)) else repr(float(v)) for v in row) + "\n")


def run_batch(config: TrialConfig, n_trials: int, seed: int, workers: int | None = None) -> BatchResult:
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    raw = _simulate_indices(config, seed, np.arange(n_trials), workers)
    return BatchResult(config, seed, n_trials, _rows_to_columns(raw))


# ------------------------------------------------------------- conditioning

@dataclass(frozen=True)
class SplittingSchedule:
    """Level radii rho_1 > ... > rho_k below |start|; the last level is the target itself."""

    levels: tuple
    clones_per_level: int = 2

    def __post_init__(self):
        lv = tuple(float(r) for r in self.levels)
        if not lv or any(b >= a for a, b in zip(lv, lv[1:])) or lv[-1] != 0.0:
            raise ConfigurationError("levels must be strictly decreasing and end at 0 (the target)")
        if int(self.clones_per_level) != self.clones_per_level or self.clones_per_level < 1:
            raise ConfigurationError("clones_per_level must be a positive integer")
        object.__setattr__(self, "levels", lv)

    @classmethod
    def geometric(cls, start_distance: float, n_levels: int, clones: int = 2) -> "SplittingSchedule":
        """Radii start/2, start/4, ... (n_levels - 1 of them) then the target."""
        radii = [start_distance / 2**j for j in range(1, n_levels)]
        radii = [r for r in radii if r >= 1.0]
        return cls(tuple(radii) + (0.0,), clones)


@dataclass
class ConditionedSample:
    visits: np.ndarray
    weights: np.ndarray
    trials_used: int
    complete: bool
    hit_probability: float
    truncated_hits: int
    method: str
    first_hit_generation: np.ndarray = None
    roots: np.ndarray = None  # root trial of each sample point (clones share a root)

    @property
    def n_effective(self) -> float:
        w = self.weights
        return float(w.sum() ** 2 / (w @ w)) if w.size else 0.0

    def mean(self) -> float:
        return float(self.weights @ self.visits / self.weights.sum())

    def standard_error(self) -> float:
        """Delta-method standard error of the weighted (ratio) mean, grouped by root trial."""
        w = self.weights
        if w.size < 2:
            return math.nan
        mu = self.mean()
        roots = self.roots if self.roots is not None else np.arange(w.size)
        _, grp = np.unique(roots, return_inverse=True)
        resid = np.bincount(grp, weights=w * (self.visits - mu))
        g = resid.size
        if g < 2:
            return math.nan
        return float(math.sqrt(np.sum(resid**2) * g / (g - 1)) / w.sum())

    def to_csv(self, path) -> None:
        _write_rows(path, ["visits", "weight"], [self.visits.astype(np.int64), self.weights.astype(float)])

    def summary(self) -> dict:
        return {"method": self.method, "n": int(self.visits.size), "n_effective": self.n_effective,
                "mean_visits": self.mean() if self.visits.size else None,
                "mean_visits_se": self.standard_error() if self.visits.size else None,
                "trials_used": self.trials_used, "complete": self.complete,
                "hit_probability": self.hit_probability, "truncated_hits": self.truncated_hits}


def conditioned_sample(config: TrialConfig, target_hits: int, budget: int, seed: int,
                       schedule: SplittingSchedule | None = None, workers: int | None = None) -> ConditionedSample:
    """Visit counts conditioned on hitting the target.

    ``budget`` caps the number of root trials.  Without a schedule this is
    plain rejection; with one, multilevel splitting produces weights.
    ``target_hits`` counts effective samples.  Truncated hits are excluded
    from the sample and reported in ``truncated_hits``.
    """
    if target_hits < 100:
        raise ConfigurationError("target_hits must be at least 100")
    if schedule is None:
        return _rejection(config, target_hits, budget, seed, workers)
    return _splitting(config, target_hits, budget, seed, schedule)


def _rejection(config, target_hits, budget, seed, workers):
    visits, gens, roots = [], [], []
    done, n_hits, trunc_hits, all_hits = 0, 0, 0, 0
    block = CHUNK * max(1, workers or default_workers()) * 4
    while done < budget and n_hits < target_hits:
        idx = np.arange(done, min(done + block, budget))
        c = _rows_to_columns(_simulate_indices(config, seed, idx, workers))
        ok = c["hit"] & ~c["truncated"]
        pos = np.flatnonzero(ok)
        need = target_hits - n_hits
        if pos.size >= need:
            # stop exactly at the trial that completes the sample
            last = pos[need - 1]
            sl = slice(0, last + 1)
            idx, c, ok = idx[sl], {k: v[sl] for k, v in c.items()}, ok[sl]
        visits.append(c["visits"][ok])
        gens.append(c["first_hit_generation"][ok])
        roots.append(idx[ok])
        n_hits += int(ok.sum())
        all_hits += int(c["hit"].sum())
        trunc_hits += int((c["hit"] & c["truncated"]).sum())
        done += idx.size
    v = np.concatenate(visits) if visits else np.zeros(0, np.int64)
    return ConditionedSample(v.astype(float), np.ones(v.size), done, n_hits >= target_hits,
                             all_hits / max(done, 1), trunc_hits, "rejection",
                             np.concatenate(gens) if gens else np.zeros(0, np.int64),
                             np.concatenate(roots) if roots else np.zeros(0, np.int64))


def _splitting(config, target_hits, budget, seed, schedule):
    start, t_max, slack2, target_r2, hold, kind, cdf = config._kernel_args()
    d = config.d
    radii2 = [int(math.floor(r * r + 1e-9)) if r > 0 else target_r2 for r in schedule.levels]
    c = schedule.clones_per_level
    visits, weights, gens = [], [], []
    root_done, trunc_hits, hit_mass = 0, 0, 0.0
    roots = []
    neff = 0.0
    sw = sw2 = 0.0
    while root_done < budget and neff < target_hits:
        root = root_done
        root_done += 1
        counters = np.zeros(N_COUNTERS, dtype=np.int64)
        pos, r2, labels = _root_state(start, target_r2, counters)
        level = 0
        while level < len(radii2) and r2[0] <= radii2[level]:
            level += 1
        stack = [(pos, r2, labels, 1, 0, level, trial_key(seed, root), 1.0, counters)]
        while stack:
            pos, r2, labels, n, t, level, key, w, counters = stack.pop()
            stop = radii2[level] if level < len(radii2) else -1
            status, pos, r2, labels, _, _, _, n, t = _advance(
                pos, r2, labels, np.empty_like(pos), np.empty_like(r2), np.empty_like(labels), n, t,
                np.uint64(key), d, t_max, slack2, stop, target_r2, hold, kind, cdf, counters)
            if status == ENTERED:
                r2min = int(r2[:n].min())
                new_level = level
                while new_level < len(radii2) and r2min <= radii2[new_level]:
                    new_level += 1
                # no point splitting once the target itself has been reached
                clones = c if new_level < len(radii2) else 1
                # pushed in reverse so clone 0 runs first
                for k in reversed(range(clones)):
                    stack.append((pos[:n].copy(), r2[:n].copy(), labels[:n].copy(), n, t, new_level,
                                  clone_key(key, new_level, k), w / clones, counters.copy()))
                continue
            if counters[_VISITS] > 0:
                if status == TRUNCATED:
                    trunc_hits += 1
                    continue
                visits.append(counters[_VISITS])
                weights.append(w)
                gens.append(counters[_FIRST_HIT])
                roots.append(root)
                hit_mass += w
                sw += w
                sw2 += w * w
        if sw2 > 0:
            neff = sw * sw / sw2
    wa = np.asarray(weights, dtype=float)
    neff = wa.sum() ** 2 / (wa @ wa) if wa.size else 0.0
    return ConditionedSample(np.asarray(visits, dtype=float), wa, root_done, neff >= target_hits,
                             hit_mass / max(root_done, 1), trunc_hits, "splitting",
                             np.asarray(gens, dtype=np.int64), np.asarray(roots, dtype=np.int64))


# ------------------------------------------------------------- Poisson probe

@dataclass(frozen=True)
class ProbeResult:
    estimate: float
    ci: tuple
    n_single: int
    n_hit: int
    n_trials: int
    hit_rate: float

    @property
    def standard_error(self) -> float:
        p, n = self.estimate, max(self.n_hit, 1)
        return math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def poisson_decomposition_probe(config: TrialConfig, n_trials: int, seed: int, workers: int | None = None) -> ProbeResult:
    """Fraction of hitting trials in which exactly one root-child subtree reaches the target."""
    if config.offspring.max_offspring < 2:
        raise ConfigurationError("offspring law must allow at least two children")
    batch = run_batch(config, n_trials, seed, workers)
    m = batch.columns["hitting_subtrees"]
    hit = m >= 1
    n_hit = int(hit.sum())
    n_single = int((m == 1).sum())
    if n_hit == 0:
        return ProbeResult(math.nan, (0.0, 1.0), 0, 0, n_trials, 0.0)
    ci = binomtest(n_single, n_hit).proportion_ci(0.95, method="wilson")
    return ProbeResult(n_single / n_hit, (ci.low, ci.high), n_single, n_hit, n_trials, n_hit / n_trials)


def with_overrides(config: TrialConfig, **kw) -> TrialConfig:
    return replace(config, **kw)
