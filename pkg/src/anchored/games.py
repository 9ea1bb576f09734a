"""Normal-form and small tabular Markov game representations plus scoring utilities.

Games are immutable after construction and all generators are deterministic in
their seed, so serialized output is reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

ANCHOR_FLOOR = 1e-12

#: Sentinel id of the absorbing terminal state of a Markov game.
TERMINAL = -1


def make_anchor(probs, floor: float = ANCHOR_FLOOR) -> np.ndarray:
    """Clamp-and-renormalize a probability vector so every entry is >= floor.

    Anchors feed log() downstream, so zero entries are never allowed through.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("anchor must be a non-empty 1-D probability vector")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise ValueError("anchor entries must be finite and nonnegative")
    s = p.sum()
    if s <= 0:
        raise ValueError("anchor must have positive mass")
    p = np.maximum(p / s, floor)
    p = p / p.sum()
    p.setflags(write=False)
    return p


def uniform_policy(n: int) -> np.ndarray:
    p = np.full(n, 1.0 / n)
    p.setflags(write=False)
    return p


@dataclass(frozen=True)
class NormalFormGame:
    """An n-player game given by one payoff tensor per player.

    ``payoffs[i]`` has shape ``action_counts`` and holds player i's utility for
    every joint action.  ``payoff_bound`` is the intended bound U on payoff
    magnitudes; it is stored explicitly rather than inferred so that
    regret-bound evaluation uses the constant the experimenter means.
    """

    action_counts: tuple[int, ...]
    payoffs: tuple[np.ndarray, ...]
    payoff_bound: float
    zero_sum: bool = False

    def __post_init__(self):
        if len(self.action_counts) < 2:
            raise ValueError("need at least 2 players")
        if any(n < 1 for n in self.action_counts):
            raise ValueError("every player needs at least one action")
        if len(self.payoffs) != len(self.action_counts):
            raise ValueError("one payoff tensor per player required")
        tensors = []
        for u in self.payoffs:
            u = np.asarray(u, dtype=float)
            if u.shape != self.action_counts:
                raise ValueError(
                    f"payoff tensor shape {u.shape} != action counts {self.action_counts}"
                )
            u.setflags(write=False)
            tensors.append(u)
        object.__setattr__(self, "payoffs", tuple(tensors))
        if self.payoff_bound < 0:
            raise ValueError("payoff_bound must be >= 0")
        for u in self.payoffs:
            if np.max(np.abs(u)) > self.payoff_bound + 1e-12:
                raise ValueError("payoff magnitude exceeds payoff_bound")
        if self.zero_sum:
            if self.player_count != 2:
                raise ValueError("zero_sum flag requires 2 players")
            if np.max(np.abs(self.payoffs[0] + self.payoffs[1])) > 1e-12:
                raise ValueError("payoffs do not sum to zero")

    @property
    def player_count(self) -> int:
        return len(self.action_counts)

    def utility_vector(self, player: int, opponent_policies) -> np.ndarray:
        """Expected utility of each of `player`'s actions against the other
        players' (independent) policies."""
        u = self.payoffs[player]
        # Contract opponent axes highest-first so lower axis indices stay valid.
        for j in sorted(range(self.player_count), reverse=True):
            if j == player:
                continue
            pol = np.asarray(opponent_policies[j], dtype=float)
            if pol.shape != (self.action_counts[j],):
                raise ValueError(f"policy for player {j} has wrong length")
            u = np.tensordot(u, pol, axes=(j, 0))
        return np.atleast_1d(u)

    def pure_utilities(self, joint_action: tuple[int, ...]) -> np.ndarray:
        return np.array([u[joint_action] for u in self.payoffs])

    def to_dict(self) -> dict:
        return {
            "players": self.player_count,
            "action_counts": list(self.action_counts),
            "payoffs": [u.tolist() for u in self.payoffs],
            "payoff_bound": self.payoff_bound,
            "zero_sum": self.zero_sum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalFormGame":
        return cls(
            action_counts=tuple(d["action_counts"]),
            payoffs=tuple(np.array(u) for u in d["payoffs"]),
            payoff_bound=float(d["payoff_bound"]),
            zero_sum=bool(d.get("zero_sum", False)),
        )


def expected_utility(game: NormalFormGame, profile, player: int) -> float:
    """Expected utility for `player` when every player (including `player`)
    follows their policy in `profile`."""
    if len(profile) != game.player_count:
        raise ValueError("profile needs one policy per player")
    u = game.payoffs[player]
    for j in reversed(range(game.player_count)):
        pol = np.asarray(profile[j], dtype=float)
        if pol.shape != (game.action_counts[j],):
            raise ValueError(f"policy for player {j} has wrong length")
        u = np.tensordot(u, pol, axes=(j, 0))
    return float(u)


def sos_score(counts) -> np.ndarray:
    """Sum-of-squares score shares: score_i = C_i^2 / sum_j C_j^2."""
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    sq = c * c
    total = sq.sum()
    if total <= 0:
        raise ValueError("counts must not be all zero")
    return sq / total


def _matching_pennies() -> NormalFormGame:
    a = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return NormalFormGame((2, 2), (a, -a), payoff_bound=1.0, zero_sum=True)


def _rock_paper_scissors() -> NormalFormGame:
    a = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
    return NormalFormGame((3, 3), (a, -a), payoff_bound=1.0, zero_sum=True)


def make_builtin_game(name: str, params: dict | None = None) -> NormalFormGame:
    """Construct a named test game.  Random variants are deterministic in
    (name, params, seed)."""
    params = dict(params or {})
    if name == "matching_pennies":
        return _matching_pennies()
    if name == "rock_paper_scissors":
        return _rock_paper_scissors()
    if name in ("random_zero_sum", "random_general_sum"):
        if "seed" not in params:
            raise ValueError(f"{name} requires a seed")
        seed = int(params["seed"])
        bound = float(params.get("payoff_bound", 1.0))
        if name == "random_zero_sum":
            shape = tuple(int(x) for x in params.get("actions", (3, 3)))
            if len(shape) != 2 or any(n < 1 for n in shape):
                raise ValueError("random_zero_sum needs two positive action counts")
            rng = np.random.default_rng(seed)
            a = rng.uniform(-bound, bound, size=shape)
            return NormalFormGame(shape, (a, -a), payoff_bound=bound, zero_sum=True)
        shape = tuple(int(x) for x in params.get("actions", (2, 2)))
        if len(shape) < 2 or any(n < 1 for n in shape):
            raise ValueError("random_general_sum needs >= 2 positive action counts")
        rng = np.random.default_rng(seed)
        payoffs = tuple(rng.uniform(-bound, bound, size=shape) for _ in shape)
        return NormalFormGame(shape, payoffs, payoff_bound=bound)
    raise ValueError(f"unknown builtin game: {name!r}")


@dataclass(frozen=True)
class TabularMarkovGame:
    """Finite simultaneous-move stochastic game over a layered state space.

    States are 0..state_count-1 plus the absorbing TERMINAL sentinel; the
    terminal state has zero reward.  ``transitions[s][joint_action]`` is a
    tuple of (successor, probability) pairs; ``rewards[s][joint_action]`` is a
    per-player reward vector.  All episodes reach TERMINAL within `horizon`
    steps by construction.
    """

    player_count: int
    state_count: int
    action_counts: tuple[tuple[int, ...], ...]  # [state][player]
    transitions: dict
    rewards: dict
    gamma: float
    horizon: int
    initial_state: int = 0
    zero_sum: bool = False
    payoff_bound: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for s in range(self.state_count):
            for a in self.joint_actions(s):
                dist = self.transitions[s][a]
                total = sum(p for _, p in dist)
                if abs(total - 1.0) > 1e-12:
                    raise ValueError(f"transition at state {s}, action {a} sums to {total}")
                if any(p < 0 for _, p in dist):
                    raise ValueError("negative transition probability")
                r = self.rewards[s][a]
                if len(r) != self.player_count:
                    raise ValueError("reward vector has wrong length")
                if self.zero_sum and abs(r[0] + r[1]) > 1e-12:
                    raise ValueError("rewards not zero-sum")

    def joint_actions(self, s: int):
        return product(*(range(n) for n in self.action_counts[s]))

    def reward(self, s: int, joint_action) -> np.ndarray:
        return np.asarray(self.rewards[s][tuple(joint_action)], dtype=float)

    def successors(self, s: int, joint_action):
        return self.transitions[s][tuple(joint_action)]

    def max_return(self) -> float:
        """Analytic bound on the magnitude of any state value."""
        if self.gamma >= 1.0:
            return self.payoff_bound * self.horizon
        return self.payoff_bound * (1 - self.gamma ** self.horizon) / (1 - self.gamma)

    def to_dict(self) -> dict:
        return {
            "players": self.player_count,
            "states": self.state_count,
            "action_counts": [list(row) for row in self.action_counts],
            "transitions": [
                {str(list(a)): [[s2, p] for s2, p in self.transitions[s][a]]
                 for a in self.joint_actions(s)}
                for s in range(self.state_count)
            ],
            "rewards": [
                {str(list(a)): list(map(float, self.rewards[s][a]))
                 for a in self.joint_actions(s)}
                for s in range(self.state_count)
            ],
            "gamma": self.gamma,
            "horizon": self.horizon,
            "initial_state": self.initial_state,
            "zero_sum": self.zero_sum,
            "payoff_bound": self.payoff_bound,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMarkovGame":
        def parse_key(k):
            return tuple(int(x) for x in k.strip("[]").split(","))

        transitions = {
            s: {parse_key(k): tuple((int(s2), float(p)) for s2, p in v)
                for k, v in row.items()}
            for s, row in enumerate(d["transitions"])
        }
        rewards = {
            s: {parse_key(k): np.array(v, dtype=float) for k, v in row.items()}
            for s, row in enumerate(d["rewards"])
        }
        return cls(
            player_count=int(d["players"]),
            state_count=int(d["states"]),
            action_counts=tuple(tuple(row) for row in d["action_counts"]),
            transitions=transitions,
            rewards=rewards,
            gamma=float(d["gamma"]),
            horizon=int(d["horizon"]),
            initial_state=int(d.get("initial_state", 0)),
            zero_sum=bool(d.get("zero_sum", False)),
            payoff_bound=float(d.get("payoff_bound", 1.0)),
        )


def make_repeated_markov(stage: NormalFormGame, horizon: int,
                         discount: float) -> TabularMarkovGame:
    """Play `stage` for `horizon` rounds; state s is the round index."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n = stage.player_count
    transitions = {}
    rewards = {}
    for s in range(horizon):
        nxt = s + 1 if s + 1 < horizon else TERMINAL
        transitions[s] = {}
        rewards[s] = {}
        for a in product(*(range(k) for k in stage.action_counts)):
            transitions[s][a] = ((nxt, 1.0),)
            rewards[s][a] = stage.pure_utilities(a)
    return TabularMarkovGame(
        player_count=n,
        state_count=horizon,
        action_counts=tuple(stage.action_counts for _ in range(horizon)),
        transitions=transitions,
        rewards=rewards,
        gamma=discount,
        horizon=horizon,
        zero_sum=stage.zero_sum,
        payoff_bound=stage.payoff_bound,
    )


def markov_layers(state_count: int, horizon: int) -> list[list[int]]:
    """Assign states to depth layers: state 0 alone at depth 0, the rest
    spread round-robin over depths 1..horizon-1 (all at depth 0's successors
    if horizon == 1 is impossible with extra states)."""
    if state_count < 1:
        raise ValueError("need at least one state")
    if horizon == 1 and state_count > 1:
        raise ValueError("horizon 1 admits a single reachable state")
    layers = [[] for _ in range(min(horizon, state_count))]
    layers[0] = [0]
    for j, s in enumerate(range(1, state_count)):
        layers[1 + j % (len(layers) - 1)].append(s)
    return [layer for layer in layers if layer]


def make_random_markov(seed: int, state_count: int, player_count: int,
                       actions_per_player: int, horizon: int, gamma: float,
                       zero_sum: bool = False,
                       payoff_bound: float = 1.0) -> TabularMarkovGame:
    """Random layered Markov game: transitions only flow to the next layer,
    so every episode terminates in at most `horizon` steps and backward
    induction is exact."""
    if min(state_count, player_count, actions_per_player, horizon) < 1:
        raise ValueError("all sizes must be >= 1")
    if zero_sum and player_count != 2:
        raise ValueError("zero-sum fixtures require 2 players")
    rng = np.random.default_rng(seed)
    layers = markov_layers(state_count, horizon)
    acts = tuple(actions_per_player for _ in range(player_count))
    transitions = {}
    rewards = {}
    for li, layer in enumerate(layers):
        nxt = layers[li + 1] if li + 1 < len(layers) else None
        for s in layer:
            transitions[s] = {}
            rewards[s] = {}
            for a in product(*(range(actions_per_player) for _ in range(player_count))):
                if nxt is None:
                    transitions[s][a] = ((TERMINAL, 1.0),)
                else:
                    w = rng.uniform(0.05, 1.0, size=len(nxt))
                    w = w / w.sum()
                    transitions[s][a] = tuple(zip(nxt, w.tolist()))
                if zero_sum:
                    r = rng.uniform(-payoff_bound, payoff_bound)
                    rewards[s][a] = np.array([r, -r])
                else:
                    rewards[s][a] = rng.uniform(-payoff_bound, payoff_bound,
                                                size=player_count)
    return TabularMarkovGame(
        player_count=player_count,
        state_count=state_count,
        action_counts=tuple(acts for _ in range(state_count)),
        transitions=transitions,
        rewards=rewards,
        gamma=gamma,
        horizon=horizon,
        zero_sum=zero_sum,
        payoff_bound=payoff_bound,
    )
