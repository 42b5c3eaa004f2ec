"""Point-based value iteration for the per-query models, exact Bayesian belief
updates, and a brute-force finite-horizon oracle used as a correctness
reference.

The manipulation component is fully observable, so the value function is kept
per manipulation state as a set of alpha vectors over the hidden component.
Backups are exact Bellman backups at a finite belief set; the belief set is
seeded with the uniform belief and closed under one-step successors (all
(action, observation) pairs), capped per state. Alpha sets always retain the
report vectors, so the policy's value can never drop below the best immediate
report wherever reporting is legal.

Initial alpha vectors are values of executable plans, and every backup maps
lower bounds to lower bounds, so the computed value never exceeds the optimal
value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import ModelError
from .pomdp import ActionSpec, ManipState, ObservationSym, PomdpModel

_NONTERM = [ManipState.X0, ManipState.X1, ManipState.X2, ManipState.X3, ManipState.X4]


@dataclass
class Belief:
    """Mixed-observability belief: known manipulation state plus a probability
    vector over the hidden attribute assignments."""

    manip: ManipState
    hidden: np.ndarray

    def __post_init__(self) -> None:
        self.hidden = np.asarray(self.hidden, dtype=float)
        if np.any(self.hidden < -1e-12) or abs(float(self.hidden.sum()) - 1.0) > 1e-9:
            raise ModelError(f"belief is not a distribution: {self.hidden}")


def uniform_belief(model: PomdpModel, manip: ManipState = ManipState.X0) -> Belief:
    return Belief(manip, np.full(model.n_hidden, 1.0 / model.n_hidden))


@dataclass(frozen=True)
class AlphaVector:
    action_index: int
    values: np.ndarray


@dataclass
class Policy:
    """Upper envelope of alpha vectors, one set per manipulation state."""

    actions: tuple[ActionSpec, ...]
    alphas: dict[ManipState, list[AlphaVector]]
    iterations: int = 0
    residual: float = float("inf")

    def value(self, belief: Belief) -> float:
        return max(a.values @ belief.hidden for a in self.alphas[belief.manip])


def belief_update(
    belief: Belief,
    action: ActionSpec,
    observation: ObservationSym,
    x_next: ManipState,
    model: PomdpModel,
) -> Belief:
    """Bayes step: hidden'(y) proportional to O(z | y, a) * hidden(y). The
    hidden dynamics are the identity so there is no prediction step."""
    ai = model.action_index(action)
    zi = model.observation_index(observation)
    posterior = belief.hidden * model.o[ai, :, zi]
    total = float(posterior.sum())
    if total <= 0.0:
        raise ModelError(
            f"observation {observation} has zero probability under action "
            f"{action.name}; the observation model disagrees with the data"
        )
    posterior = posterior / total
    posterior = posterior / posterior.sum()
    return Belief(x_next, posterior)


# -- point-based value iteration -------------------------------------------------


def _expand_beliefs(
    model: PomdpModel, beliefs: dict[ManipState, list[np.ndarray]], cap: int
) -> bool:
    """One closure pass: add every one-step successor belief that is at least
    1e-6 away (L1) from the current set of its manipulation state."""
    added = False
    term = int(ManipState.TERM)
    for x in _NONTERM:
        for b in list(beliefs[x]):
            for ai in model.explore_indices:
                if not model.legal[int(x), ai]:
                    continue
                for zi in range(len(model.observations)):
                    w = model.o[ai, :, zi]
                    pz = float(b @ w)
                    if pz <= 1e-12:
                        continue
                    nb = b * w / pz
                    for xn in range(len(ManipState)):
                        if xn == term or model.t_x[int(x), ai, xn] <= 0.0:
                            continue
                        bucket = beliefs[ManipState(xn)]
                        if len(bucket) >= cap:
                            continue
                        if all(np.abs(nb - old).sum() > 1e-6 for old in bucket):
                            bucket.append(nb)
                            added = True
    return added


def solve(
    model: PomdpModel,
    precision: float = 1e-3,
    max_iter: int = 500,
    belief_points: int = 64,
    seed: int = 0,
) -> Policy:
    """Point-based value iteration; deterministic (the seed is accepted for
    interface stability, but expansion is exhaustive rather than sampled)."""
    del seed
    n_y = model.n_hidden
    report_alphas = {
        x: [
            AlphaVector(ai, model.r[int(x), :, ai].copy())
            for ai in model.report_indices
            if model.legal[int(x), ai]
        ]
        for x in _NONTERM
    }

    beliefs: dict[ManipState, list[np.ndarray]] = {
        x: [np.full(n_y, 1.0 / n_y)] for x in _NONTERM
    }
    for _ in range(8):
        if not _expand_beliefs(model, beliefs, belief_points):
            break

    # Initial lower bounds: report plans where legal, and "advance then report"
    # at x0 (a valid executable plan, hence a lower bound on the optimum).
    alphas: dict[ManipState, list[AlphaVector]] = {}
    for x in _NONTERM:
        if report_alphas[x]:
            alphas[x] = list(report_alphas[x])
        else:
            ai = next(i for i in model.explore_indices if model.legal[int(x), i])
            base = model.r[int(x), :, ai]
            worst_report = model.r[int(ManipState.X1), :, : model.n_reports].min()
            alphas[x] = [AlphaVector(ai, base + model.gamma * worst_report)]

    b_mats = {x: np.stack(beliefs[x]) for x in _NONTERM}
    values = {x: np.array([max(a.values @ b for a in alphas[x]) for b in beliefs[x]])
              for x in _NONTERM}

    iterations = 0
    residual = float("inf")
    for iterations in range(1, max_iter + 1):
        new_alphas: dict[ManipState, list[AlphaVector]] = {}
        new_values: dict[ManipState, np.ndarray] = {}
        stacks = {x: np.stack([a.values for a in alphas[x]]) for x in _NONTERM}
        for x in _NONTERM:
            b_mat = b_mats[x]
            n_b = b_mat.shape[0]
            candidate_alphas: list[np.ndarray] = []
            candidate_q: list[np.ndarray] = []
            candidate_action: list[int] = []
            for ai in range(len(model.actions)):
                if not model.legal[int(x), ai]:
                    continue
                base = model.r[int(x), :, ai]
                if ai < model.n_reports:
                    alpha_rows = np.tile(base, (n_b, 1))
                else:
                    cont = np.zeros((n_b, n_y))
                    for xn in range(len(ManipState)):
                        prob = model.t_x[int(x), ai, xn]
                        if prob <= 0.0 or xn == int(ManipState.TERM):
                            continue
                        g = stacks[ManipState(xn)]
                        for zi in range(len(model.observations)):
                            w = model.o[ai, :, zi]
                            if not w.any():
                                continue
                            m = g * w
                            pick = (b_mat @ m.T).argmax(axis=1)
                            cont += prob * m[pick]
                    alpha_rows = base + model.gamma * cont
                candidate_alphas.append(alpha_rows)
                candidate_q.append((alpha_rows * b_mat).sum(axis=1))
                candidate_action.append(ai)

            q = np.stack(candidate_q)  # (n_actions_legal, n_b)
            best = q.argmax(axis=0)  # first max wins -> lowest action index
            new_values[x] = q[best, np.arange(n_b)]

            chosen: list[AlphaVector] = []
            seen: set[bytes] = set()
            for bi in range(n_b):
                ci = int(best[bi])
                vec = candidate_alphas[ci][bi]
                key = vec.tobytes() + bytes([candidate_action[ci]])
                if key not in seen:
                    seen.add(key)
                    chosen.append(AlphaVector(candidate_action[ci], vec.copy()))
            for rep in report_alphas[x]:
                key = rep.values.tobytes() + bytes([rep.action_index])
                if key not in seen:
                    seen.add(key)
                    chosen.append(rep)
            new_alphas[x] = chosen

        residual = max(
            float(np.abs(new_values[x] - values[x]).max()) for x in _NONTERM
        )
        alphas = new_alphas
        values = new_values
        if residual < precision:
            break

    return Policy(model.actions, alphas, iterations=iterations, residual=residual)


def best_action(policy: Policy, belief: Belief) -> ActionSpec:
    """Highest-value alpha vector at the belief; exact value ties go to the
    lowest action index."""
    candidates = policy.alphas[belief.manip]
    if not candidates:
        raise ModelError(f"policy has no alpha vectors for {belief.manip.token}")
    scores = [float(a.values @ belief.hidden) for a in candidates]
    top = max(scores)
    index = min(
        a.action_index for a, s in zip(candidates, scores) if s == top
    )
    return policy.actions[index]


# -- exact finite-horizon oracle ---------------------------------------------------


def exact_value_oracle(model: PomdpModel, belief: Belief, horizon: int) -> float:
    """Optimal expected discounted reward over a bounded horizon by full
    enumeration of the reachable belief tree.

    Beliefs are keyed canonically by the multiset of (action, observation)
    pairs since the posterior is order-independent, which makes the memo
    exact. Guarded to small instances.
    """
    if horizon > 10:
        raise ModelError("oracle horizon is capped at 10")
    if model.n_hidden > 8:
        raise ModelError("oracle supports at most 8 hidden states")
    if horizon < 0:
        raise ModelError("horizon must be non-negative")

    n_y = model.n_hidden
    n_z = len(model.observations)
    log_like = np.full((len(model.actions), n_y, n_z), -np.inf)
    positive = model.o > 0.0
    log_like[positive] = np.log(model.o[positive])

    b0 = belief.hidden
    memo: dict[tuple, float] = {}
    posterior_cache: dict[tuple, np.ndarray] = {}

    def posterior(counts: tuple) -> np.ndarray:
        cached = posterior_cache.get(counts)
        if cached is not None:
            return cached
        log_post = np.log(np.maximum(b0, 1e-300))
        for (ai, zi), c in counts:
            log_post = log_post + c * log_like[ai, :, zi]
        log_post -= log_post.max()
        post = np.exp(log_post)
        post /= post.sum()
        posterior_cache[counts] = post
        return post

    def value(h: int, x: int, counts: tuple) -> float:
        if h == 0 or x == int(ManipState.TERM):
            return 0.0
        key = (h, x, counts)
        cached = memo.get(key)
        if cached is not None:
            return cached
        b = posterior(counts)
        best = -np.inf
        for ai in range(len(model.actions)):
            if not model.legal[x, ai]:
                continue
            immediate = float(b @ model.r[x, :, ai])
            if ai < model.n_reports:
                q = immediate
            else:
                continuation = 0.0
                for zi in range(n_z):
                    pz = float(b @ model.o[ai, :, zi])
                    if pz <= 1e-14:
                        continue
                    merged: dict[tuple[int, int], int] = {}
                    for pair, c in counts:
                        merged[pair] = merged.get(pair, 0) + c
                    merged[(ai, zi)] = merged.get((ai, zi), 0) + 1
                    new_counts = tuple(sorted(merged.items()))
                    inner = 0.0
                    for xn in range(len(ManipState)):
                        p = model.t_x[x, ai, xn]
                        if p > 0.0:
                            inner += p * value(h - 1, xn, new_counts)
                    continuation += pz * inner
                q = immediate + model.gamma * continuation
            if q > best:
                best = q
        memo[key] = best
        return best

    return value(horizon, int(belief.manip), ())


def simulate_policy_value(
    model: PomdpModel,
    policy: Policy,
    n_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
    initial: Belief | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the policy's expected
    discounted reward, truncated at ``horizon`` actions.

    Rollouts walk the belief MDP directly: observations are sampled from their
    marginal under the current belief and reports score their expected reward
    under the belief, which is an unbiased, lower-variance estimator of the
    state-sampling rollout.
    """
    n_x = len(ManipState)
    returns = np.zeros(n_rollouts)
    for k in range(n_rollouts):
        belief = uniform_belief(model) if initial is None else Belief(
            initial.manip, initial.hidden.copy()
        )
        total = 0.0
        discount = 1.0
        for _ in range(horizon):
            action = best_action(policy, belief)
            ai = model.action_index(action)
            x = int(belief.manip)
            if action.is_report:
                total += discount * float(belief.hidden @ model.r[x, :, ai])
                break
            total += discount * float(belief.hidden @ model.r[x, :, ai])
            x_next = int(rng.choice(n_x, p=model.t_x[x, ai]))
            pz = model.o[ai].T @ belief.hidden
            zi = int(rng.choice(len(pz), p=pz / pz.sum()))
            posterior = belief.hidden * model.o[ai, :, zi]
            posterior /= posterior.sum()
            belief = Belief(ManipState(x_next), posterior)
            discount *= model.gamma
            if x_next == int(ManipState.TERM):
                break
        returns[k] = total
    se = float(returns.std(ddof=1) / np.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return float(returns.mean()), se
