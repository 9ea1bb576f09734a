"""Anchored no-regret learners: hedge, fictitious play, piKL-hedge, DiL-piKL.

A single running average Q of hindsight rewards is shared across all types;
the per-type state is only the running average of that type's iterates.  With
a singleton type set the distributional learner reduces exactly to piKL-hedge,
with lambda = 0 to hedge, and with a zero temperature on top of lambda = 0 to
fictitious play.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .games import NormalFormGame, make_anchor, uniform_policy

INF = math.inf


@dataclass(frozen=True)
class TypeDistribution:
    """Finite support of regularization strengths with belief weights."""

    lambdas: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        lams = tuple(float(l) for l in self.lambdas)
        w = tuple(float(x) for x in self.weights)
        if len(lams) != len(w) or not lams:
            raise ValueError("support and weights must be non-empty and equal length")
        if any(l < 0 for l in lams):
            raise ValueError("lambda values must be >= 0 (inf allowed)")
        if list(lams) != sorted(set(lams)):
            raise ValueError("lambda values must be distinct and sorted ascending")
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "weights", w)

    @classmethod
    def singleton(cls, lam: float) -> "TypeDistribution":
        return cls((lam,), (1.0,))

    @classmethod
    def uniform(cls, lambdas) -> "TypeDistribution":
        lams = tuple(sorted(float(l) for l in lambdas))
        return cls(lams, tuple(1.0 / len(lams) for _ in lams))

    def sample(self, rng: np.random.Generator) -> float:
        if len(self.lambdas) == 1:
            return self.lambdas[0]
        i = rng.choice(len(self.lambdas), p=self.weights)
        return self.lambdas[i]


@dataclass(frozen=True)
class TemperatureSchedule:
    """Temperature kappa_t for the hedge part of the update.

    Modes:
      constant_eta : kappa_t = 1/(eta * t)
      inverse_sqrt : kappa_t = 1/sqrt(t)
      adaptive_std : kappa_t = max(num/den * S_t/sqrt(t), kappa_floor), where
                     S_t is the sample std of realized utilities so far
    """

    mode: str = "constant_eta"
    eta: float | None = None
    scale_num: float = 3.0
    scale_den: float = 10.0
    kappa_floor: float = 0.0

    def __post_init__(self):
        if self.mode not in ("constant_eta", "inverse_sqrt", "adaptive_std"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "constant_eta" and (self.eta is None or self.eta <= 0):
            raise ValueError("constant_eta requires eta > 0 (inf allowed for kappa == 0)")
        if self.kappa_floor < 0:
            raise ValueError("kappa_floor must be >= 0")

    @classmethod
    def adaptive(cls, kappa_floor: float = 1e-6) -> "TemperatureSchedule":
        return cls(mode="adaptive_std", kappa_floor=kappa_floor)

    def kappa(self, t: int, utility_stats: "UtilityStats | None" = None) -> float:
        """kappa_t for iteration index t >= 1."""
        if t < 1:
            raise ValueError("t must be >= 1")
        if self.mode == "constant_eta":
            k = 1.0 / (self.eta * t)
        elif self.mode == "inverse_sqrt":
            k = 1.0 / math.sqrt(t)
        else:
            if utility_stats is None or utility_stats.count < 2:
                return self.kappa_floor
            k = self.scale_num * utility_stats.std() / (self.scale_den * math.sqrt(t))
        return max(k, self.kappa_floor)

    def kappa_initial(self) -> float:
        """kappa_0 used by the very first iterate, where the schedules are
        undefined; chosen as the natural continuation of each mode."""
        if self.mode == "constant_eta":
            return max(1.0 / self.eta, self.kappa_floor)
        if self.mode == "inverse_sqrt":
            return max(1.0, self.kappa_floor)
        return self.kappa_floor


def kappa_next(schedule: TemperatureSchedule, t: int,
               utility_stats: "UtilityStats | None" = None) -> float:
    return schedule.kappa(t, utility_stats)


@dataclass
class UtilityStats:
    """Welford accumulator for realized utilities (feeds adaptive_std)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def std(self) -> float:
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1))


def policy_for_type(q: np.ndarray, anchor: np.ndarray, lam: float, kappa: float,
                    argmax_fallback: bool = True) -> np.ndarray:
    """The anchored-hedge iterate: proportional to
    exp{(Q(a) + lam*log tau(a)) / (kappa + lam)}.

    lam = inf returns the anchor exactly; kappa = lam = 0 is the
    fictitious-play step (uniform over argmax Q) when the fallback is enabled.
    """
    if kappa < 0 or lam < 0:
        raise ValueError("kappa and lambda must be >= 0")
    if lam == INF:
        return np.array(anchor, dtype=float)
    if kappa + lam == 0.0:
        if not argmax_fallback:
            raise ValueError("kappa == 0 and lambda == 0 with argmax fallback disabled")
        best = np.isclose(q, q.max(), rtol=0.0, atol=1e-12)
        return best / best.sum()
    z = q if lam == 0.0 else q + lam * np.log(anchor)
    z = z / (kappa + lam)
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


@dataclass
class Learner:
    """Per-player learner state for one self-play run."""

    player: int
    n_actions: int
    anchor: np.ndarray
    types: TypeDistribution
    schedule: TemperatureSchedule
    uniform_first_iterate: bool = False

    t: int = 0
    q: np.ndarray = field(init=False)
    utility_stats: UtilityStats = field(default_factory=UtilityStats)
    last_kappa: float = field(init=False)
    _avg_sums: dict = field(init=False)
    _avg_counts: int = 0

    def __post_init__(self):
        if self.n_actions < 1:
            raise ValueError("need at least one action")
        self.anchor = make_anchor(self.anchor)
        if self.anchor.shape != (self.n_actions,):
            raise ValueError("anchor dimension does not match action count")
        self.q = np.zeros(self.n_actions)
        self.last_kappa = self.schedule.kappa_initial()
        self._avg_sums = {lam: np.zeros(self.n_actions) for lam in self.types.lambdas}

    def current_kappa(self) -> float:
        """kappa_{t-1}, the temperature used to form the iteration-(t+1) policy."""
        if self.t == 0:
            return self.schedule.kappa_initial()
        return self.schedule.kappa(self.t, self.utility_stats)

    def policy(self, lam: float, kappa: float | None = None) -> np.ndarray:
        if kappa is None:
            kappa = self.current_kappa()
        if self.t == 0 and self.uniform_first_iterate:
            return uniform_policy(self.n_actions)
        return policy_for_type(self.q, self.anchor, lam, kappa)

    def act_policy(self, lam_act: float) -> np.ndarray:
        """Policy actually played, which may use a lambda outside the
        population support."""
        return self.policy(lam_act)

    def observe(self, utility_vector: np.ndarray, realized_utility: float,
                iteration: int | None = None) -> None:
        """Fold iteration-t utilities into the running averages.

        `utility_vector[a]` is the utility of own action a against the
        opponents' realized (or expected) play this iteration.
        """
        if iteration is not None and iteration != self.t + 1:
            raise ValueError(f"observe() expected iteration {self.t + 1}, got {iteration}")
        u = np.asarray(utility_vector, dtype=float)
        if u.shape != (self.n_actions,):
            raise ValueError("utility vector has wrong length")
        self.t += 1
        self.q += (u - self.q) / self.t
        self.utility_stats.add(float(realized_utility))

    def accumulate_averages(self, policies_by_type: dict) -> None:
        for lam, pol in policies_by_type.items():
            self._avg_sums[lam] += pol
        self._avg_counts += 1

    def average_policy(self, lam: float) -> np.ndarray:
        if self._avg_counts == 0:
            raise ValueError("no iterations completed")
        return self._avg_sums[lam] / self._avg_counts

    def mixture_policy(self, kappa: float | None = None) -> np.ndarray:
        """Belief-weighted mixture of the current per-type policies."""
        if kappa is None:
            kappa = self.current_kappa()
        mix = np.zeros(self.n_actions)
        for lam, w in zip(self.types.lambdas, self.types.weights):
            mix += w * self.policy(lam, kappa)
        return mix

    def average_mixture_policy(self) -> np.ndarray:
        mix = np.zeros(self.n_actions)
        for lam, w in zip(self.types.lambdas, self.types.weights):
            mix += w * self.average_policy(lam)
        return mix


def init_learner(player: int, actions: int, anchor, types: TypeDistribution,
                 schedule: TemperatureSchedule,
                 uniform_first_iterate: bool = False) -> Learner:
    return Learner(player=player, n_actions=actions, anchor=np.asarray(anchor, float),
                   types=types, schedule=schedule,
                   uniform_first_iterate=uniform_first_iterate)


class Trace:
    """Append-only per-iteration record of a self-play run."""

    def __init__(self, n_players: int, type_supports: list[tuple[float, ...]],
                 metadata: dict | None = None):
        self.n_players = n_players
        self.type_supports = [tuple(s) for s in type_supports]
        self.metadata = dict(metadata or {})
        self.kappas: list[list[float]] = []
        self.sampled_lambdas: list[list[float | None]] = []
        self.actions: list[list[int | None]] = []
        self.realized: list[list[float]] = []
        self._u_vectors: list[list[np.ndarray]] = []
        self._policies: list[list[dict]] = []

    def __len__(self) -> int:
        return len(self.kappas)

    def append(self, kappas, sampled_lambdas, actions, realized, u_vectors,
               policies_by_type) -> None:
        self.kappas.append(list(kappas))
        self.sampled_lambdas.append(list(sampled_lambdas))
        self.actions.append(list(actions))
        self.realized.append(list(realized))
        self._u_vectors.append(list(u_vectors))
        self._policies.append(list(policies_by_type))

    def utility_matrix(self, player: int) -> np.ndarray:
        return np.stack([row[player] for row in self._u_vectors])

    def policy_matrix(self, player: int, lam: float) -> np.ndarray:
        return np.stack([row[player][lam] for row in self._policies])

    def kappa_series(self, player: int) -> np.ndarray:
        return np.array([row[player] for row in self.kappas])

    def records(self):
        """Iterate export-shaped dict records (1-based t)."""
        for t in range(len(self)):
            yield {
                "t": t + 1,
                "kappa": self.kappas[t],
                "per_player": [
                    {
                        "sampled_lambda": self.sampled_lambdas[t][i],
                        "action": self.actions[t][i],
                        "policy_by_type": {
                            repr(lam): self._policies[t][i][lam].tolist()
                            for lam in self.type_supports[i]
                        },
                        "action_utilities": self._u_vectors[t][i].tolist(),
                    }
                    for i in range(self.n_players)
                ],
                "utilities": self.realized[t],
            }

    @classmethod
    def from_records(cls, records, type_supports, metadata=None) -> "Trace":
        records = list(records)
        if not records:
            raise ValueError("empty record stream")
        n_players = len(records[0]["per_player"])
        trace = cls(n_players, type_supports, metadata)
        for rec in records:
            per = rec["per_player"]
            trace.append(
                kappas=rec["kappa"],
                sampled_lambdas=[p["sampled_lambda"] for p in per],
                actions=[p["action"] for p in per],
                realized=rec["utilities"],
                u_vectors=[np.array(p["action_utilities"]) for p in per],
                policies_by_type=[
                    {lam: np.array(p["policy_by_type"][repr(lam)])
                     for lam in trace.type_supports[i]}
                    for i, p in enumerate(per)
                ],
            )
        return trace

    def replay_q(self, player: int, upto: int | None = None) -> np.ndarray:
        """Recomputation oracle: Q from the stored utility vectors."""
        u = self.utility_matrix(player)
        if upto is not None:
            u = u[:upto]
        return u.mean(axis=0)


def _check_learners(learners, game: NormalFormGame) -> None:
    if len(learners) != game.player_count:
        raise ValueError("one learner per player required")
    ts = {ln.t for ln in learners}
    if len(ts) != 1:
        raise ValueError("learners are out of step")
    for i, ln in enumerate(learners):
        if ln.n_actions != game.action_counts[i]:
            raise ValueError(f"learner {i} action count does not match game")


def step_sampled(learners, game: NormalFormGame, rng: np.random.Generator,
                 trace: Trace | None = None):
    """One iteration of sampled-feedback self-play.  Every player samples a
    type, plays from that type's policy, and updates Q from realized
    opponent actions.  Per-type averages are updated for all types."""
    _check_learners(learners, game)
    kappas, policies, lams, actions = [], [], [], []
    for ln in learners:
        kappa = ln.current_kappa()
        by_type = {lam: ln.policy(lam, kappa) for lam in ln.types.lambdas}
        lam = ln.types.sample(rng)
        a = int(rng.choice(ln.n_actions, p=by_type[lam]))
        kappas.append(kappa)
        policies.append(by_type)
        lams.append(lam)
        actions.append(a)
    u_vectors, realized = [], []
    for i, ln in enumerate(learners):
        u = game.payoffs[i]
        idx = tuple(actions[:i]) + (slice(None),) + tuple(actions[i + 1:])
        u_vec = np.array(u[idx], dtype=float)
        u_vectors.append(u_vec)
        realized.append(float(u_vec[actions[i]]))
    iteration = learners[0].t + 1
    for i, ln in enumerate(learners):
        ln.accumulate_averages(policies[i])
        ln.observe(u_vectors[i], realized[i], iteration)
    if trace is not None:
        trace.append(kappas, lams, actions, realized, u_vectors, policies)
    return tuple(actions)


def step_expected(learners, game: NormalFormGame, trace: Trace | None = None):
    """Deterministic full-feedback iteration: Q is updated with expected
    utilities against the belief-weighted mixture of the opponents' per-type
    policies; no actions are sampled."""
    _check_learners(learners, game)
    kappas, policies, mixtures = [], [], []
    for ln in learners:
        kappa = ln.current_kappa()
        by_type = {lam: ln.policy(lam, kappa) for lam in ln.types.lambdas}
        mix = np.zeros(ln.n_actions)
        for lam, w in zip(ln.types.lambdas, ln.types.weights):
            mix += w * by_type[lam]
        kappas.append(kappa)
        policies.append(by_type)
        mixtures.append(mix)
    u_vectors, realized = [], []
    for i, ln in enumerate(learners):
        u_vec = game.utility_vector(i, mixtures)
        u_vectors.append(u_vec)
        realized.append(float(u_vec @ mixtures[i]))
    iteration = learners[0].t + 1
    for i, ln in enumerate(learners):
        ln.accumulate_averages(policies[i])
        ln.observe(u_vectors[i], realized[i], iteration)
    if trace is not None:
        trace.append(kappas, [None] * len(learners), [None] * len(learners),
                     realized, u_vectors, policies)


def run_selfplay(game: NormalFormGame, learners, iterations: int,
                 mode: str = "sampled", rng: np.random.Generator | None = None,
                 record: bool = True) -> Trace | None:
    """Drive `iterations` steps of self-play, optionally recording a trace."""
    if mode not in ("sampled", "expected"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sampled" and rng is None:
        raise ValueError("sampled mode requires an rng")
    trace = None
    if record:
        trace = Trace(
            game.player_count,
            [ln.types.lambdas for ln in learners],
            metadata={
                "mode": mode,
                "uniform_first_iterate": [ln.uniform_first_iterate for ln in learners],
            },
        )
    for _ in range(iterations):
        if mode == "sampled":
            step_sampled(learners, game, rng, trace)
        else:
            step_expected(learners, game, trace)
    return trace
