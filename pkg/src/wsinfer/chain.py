"""Chain message passing: transitions, low-rank factors, beliefs and posteriors.

Every per-class chain is reduced to a :class:`ChainProblem` (plain arrays).
The single-chain path runs the compiled kernels in :mod:`wsinfer._kernels`;
:func:`batched_infer` advances many padded chains at once with numpy and
repeats the kernels' arithmetic order so both paths agree to rounding.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import COUNT_KINDS, Kind, build_state_space, make_setting, validate_bag
from .errors import (
    InfeasibleBag,
    InfeasibleWeakLabel,
    NormalizationFailure,
    RankCheckFailed,
    SettingMismatch,
    ShapeMismatch,
    WSError,
)

MODES = ("dense", "lowrank")
_NO_EMISSION = np.zeros((0, 0))


@dataclass(frozen=True, eq=False)
class MessageVector:
    """A normalized message and the log of all normalizers stripped so far."""

    weights: np.ndarray
    log_scale: float


@dataclass(frozen=True, eq=False)
class LowRankFactors:
    U: np.ndarray
    V: np.ndarray
    r: int
    residual: float


@dataclass(frozen=True, eq=False)
class BeliefTable:
    """Per-node beliefs over the state space (K x S) and log P(W = w | X)."""

    nodes: np.ndarray
    loglik: float


@dataclass(frozen=True, eq=False)
class LatentPosterior:
    """``table[k, c]``: P(Y^k = c positive | X, W).

    For exclusive (single-label) settings the table is 1 x C and each row is
    a distribution over classes.  ``loglik`` holds one weak-label
    log-likelihood per class chain.
    """

    table: np.ndarray
    loglik: np.ndarray
    exclusive: bool = False
    bag_id: str = None


@dataclass(frozen=True, eq=False)
class ChainProblem:
    """Arrays describing one chain, in the layout the kernels expect."""

    q: np.ndarray
    next_z: np.ndarray
    init_z: np.ndarray
    terminal: np.ndarray
    emission: np.ndarray

    @property
    def K(self):
        return self.q.shape[0]

    @property
    def W(self):
        return self.q.shape[1]


def _check_mode(mode):
    if mode not in MODES:
        raise SettingMismatch(f"mode must be one of {MODES}, got {mode!r}")
    return mode == "lowrank"


# ---------------------------------------------------------------- building


def category_q(p):
    """Stick-breaking probabilities P(class c | not any earlier class)."""
    p = np.asarray(p, dtype=float)
    p = p / p.sum()
    tail = np.cumsum(p[::-1])[::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        stick = np.where(tail > 0.0, p / tail, 0.0)
    q = np.zeros((p.size, 2))
    q[:, 0] = np.clip(stick, 0.0, 1.0)
    return q


def category_problem(p, candidates, terminal=None):
    """Chain over the C categories of one instance.

    Node c is positive when the label is c.  The update is OR (the label is
    assigned once), the terminal factor requires z = 1, and the emission
    zeroes a positive at any class outside ``candidates``.
    """
    p = np.asarray(p, dtype=float)
    C = p.size
    allowed = np.zeros(C)
    allowed[list(candidates)] = 1.0
    emission = np.ones((C, 4))
    emission[:, 2:] = allowed[:, None]
    term = np.array([0.0, 1.0, 0.0, 1.0]) if terminal is None else np.asarray(terminal, float)
    or_step = np.array([[0, 1], [1, 1]], dtype=np.int64)
    return ChainProblem(category_q(p), or_step, np.array([0, 1], dtype=np.int64), term, emission)


def chain_problem(setting, bag, cls=0, terminal=None):
    """Reduce class ``cls`` of ``bag`` to a :class:`ChainProblem`.

    ``terminal`` overrides the setting's terminal factor (used by the loop).
    """
    if setting.family == "category":
        p = bag.probs[0]
        return category_problem(p, setting.candidates(bag.evidence[0], p.size), terminal)
    if setting.family == "noisy":
        raise SettingMismatch("Noisy bags are fused through the class loop, not a chain")
    K = bag.K
    W = setting.w_cardinality(K)
    q = np.ascontiguousarray(np.broadcast_to(bag.probs[:, cls][:, None], (K, W)))
    if terminal is None:
        terminal = setting.terminal_factor(bag.evidence[cls], K)
    return ChainProblem(q, setting.next_z(K), setting.init_z(), np.asarray(terminal, float), _NO_EMISSION)


def initial_message(setting, probs_row_1, K=1):
    """P(O^1 | x) for a chain of length ``K``."""
    p = float(np.asarray(probs_row_1, dtype=float).ravel()[0])
    W = setting.w_cardinality(K)
    z0 = setting.init_z()
    w = np.zeros(2 * W)
    w[z0[0]] += 1.0 - p
    w[W + z0[1]] += p
    return MessageVector(w, 0.0)


def build_transition(setting, probs_row_k, state_space):
    """Dense T with rows = destination state and columns = source state.

    ``probs_row_k`` is the instance's positive probability, or one value per
    source z.
    """
    W = state_space.w_card
    q = np.asarray(probs_row_k, dtype=float).ravel()
    if q.size not in (1, W):
        raise ShapeMismatch(f"expected 1 or {W} probabilities, got {q.size}")
    q = np.ascontiguousarray(np.broadcast_to(q, (W,))[None, :])
    # count settings have W = K + 1; the others have two z values for any K
    K = W - 1 if setting.kind in COUNT_KINDS else 1
    T = np.zeros((2 * W, 2 * W))
    _kernels.fill_transition(T, q, 0, setting.next_z(K))
    return T


def stacked_identity(W):
    """The fixed right factor V (S x W): V^T = [I I]."""
    return np.vstack([np.eye(W), np.eye(W)])


def factorize(T, state_space, tol=1e-12):
    """Exact factorization T = U V^T with U the y = 0 column block."""
    W = state_space.w_card
    T = np.asarray(T, dtype=float)
    if T.shape != (2 * W, 2 * W):
        raise ShapeMismatch(f"T has shape {T.shape}, expected {(2 * W, 2 * W)}")
    U = T[:, :W].copy()
    V = stacked_identity(W)
    residual = float(np.max(np.abs(T - U @ V.T)))
    if residual > tol:
        raise RankCheckFailed(f"reconstruction residual {residual:.3e} exceeds {tol:.0e}")
    return LowRankFactors(U, V, W, residual)


# ---------------------------------------------------------------- passes


def _messages(rows, norms):
    scale = np.cumsum(np.log(norms))
    return [MessageVector(rows[k].copy(), float(scale[k])) for k in range(rows.shape[0])]


def _forward(prob, lowrank, bag_id=None):
    alpha, norms, status = _kernels.forward(prob.q, prob.next_z, prob.init_z, prob.emission, lowrank)
    if status != _kernels.OK:
        err = InfeasibleWeakLabel if prob.emission.shape[0] else InfeasibleBag
        raise err("forward message collapsed to zero", bag_id=bag_id)
    return alpha, norms


def forward_pass(setting, bag, mode="lowrank", cls=0):
    """Forward messages mu^(1)_k for k = 1..K of class chain ``cls``."""
    lowrank = _check_mode(mode)
    alpha, norms = _forward(chain_problem(setting, bag, cls), lowrank, bag.id)
    return _messages(alpha, norms)


def backward_pass(setting, bag, terminal=None, mode="lowrank", cls=0):
    """Backward messages mu^(2)_k for k = 1..K seeded with ``terminal``.

    Each message's ``log_scale`` accumulates the normalizers from node K down.
    """
    lowrank = _check_mode(mode)
    prob = chain_problem(setting, bag, cls, terminal)
    alpha, _ = _forward(prob, lowrank, bag.id)
    if not float(alpha[-1] @ prob.terminal) > 0.0:
        raise InfeasibleWeakLabel("terminal factor is zero on every reachable state", bag_id=bag.id)
    beta, norms, status = _kernels.backward(prob.q, prob.next_z, prob.terminal, prob.emission, lowrank)
    if status != _kernels.OK:
        raise InfeasibleWeakLabel("backward message collapsed to zero", bag_id=bag.id)
    scale = np.cumsum(np.log(norms[::-1]))[::-1]
    return [MessageVector(beta[k].copy(), float(scale[k])) for k in range(beta.shape[0])]


def beliefs(forward_msgs, backward_msgs):
    """Node beliefs proportional to mu^(1)_k * mu^(2)_k, plus log P(W = w | X)."""
    if len(forward_msgs) != len(backward_msgs):
        raise ShapeMismatch("forward and backward message lists differ in length")
    a = np.array([m.weights for m in forward_msgs])
    b = np.array([m.weights for m in backward_msgs])
    prod = a * b
    sums = prod.sum(axis=1)
    if np.any(~(sums > 0.0)):
        raise NormalizationFailure("belief is zero at some node")
    nodes = prod / sums[:, None]
    # evidence = (scaled alpha_K . scaled beta_K) * both stripped scales
    loglik = forward_msgs[-1].log_scale + backward_msgs[-1].log_scale + float(np.log(sums[-1]))
    return BeliefTable(nodes, loglik)


def latent_posterior(belief_table, state_space):
    """P(Y^k = 1 | x, w): sum of beliefs over the y = 1 block."""
    W = state_space.w_card
    post = belief_table.nodes[:, W:].sum(axis=1)
    return LatentPosterior(post[:, None], np.array([belief_table.loglik]))


# ------------------------------------------------------------------ infer


def run_problem(prob, lowrank, bag_id=None):
    """Run one chain; returns (belief table K x S, posterior K, loglik)."""
    belief, post, loglik, status = _kernels.run(
        prob.q, prob.next_z, prob.init_z, prob.terminal, prob.emission, lowrank
    )
    if status == _kernels.ZERO_FORWARD and prob.emission.shape[0] == 0:
        raise InfeasibleBag("forward message collapsed to zero", bag_id=bag_id)
    if status != _kernels.OK:
        raise InfeasibleWeakLabel("weak label has zero likelihood", bag_id=bag_id)
    return belief, post, loglik


def infer(setting, bag, mode="lowrank", validate=True, T_class=None):
    """Latent posterior of one bag with every class chain run independently.

    Noisy bags need a class-transition matrix and go through the loop engine.
    """
    if setting.family == "noisy":
        from .loop import multilabel_posterior

        return multilabel_posterior(setting, bag, T_class, mode=mode, validate=validate)
    lowrank = _check_mode(mode)
    if validate:
        validate_bag(setting, bag)
    if setting.family == "category":
        _, post, ll = run_problem(chain_problem(setting, bag), lowrank, bag.id)
        return LatentPosterior(post[None, :], np.array([ll]), True, bag.id)
    C = bag.C
    table = np.empty((bag.K, C))
    ll = np.empty(C)
    for c in range(C):
        _, table[:, c], ll[c] = run_problem(chain_problem(setting, bag, c), lowrank, bag.id)
    return LatentPosterior(table, ll, False, bag.id)


def weak_label_likelihood(setting, bag, w=None, mode="lowrank"):
    """log P(W = w | X) per class chain, by forward contraction.

    ``w`` is an evidence tuple replacing the bag's own evidence.
    """
    if w is not None:
        if not isinstance(w, (tuple, list)):
            w = (w,)
        bag = type(bag)(bag.id, bag.probs, tuple(w), bag.features)
    validate_bag(setting, bag)
    lowrank = _check_mode(mode)
    probs = [chain_problem(setting, bag)] if setting.exclusive else [
        chain_problem(setting, bag, c) for c in range(bag.C)
    ]
    out = np.empty(len(probs))
    for i, prob in enumerate(probs):
        alpha, norms, status = _kernels.forward(prob.q, prob.next_z, prob.init_z, prob.emission, lowrank)
        contraction = float(alpha[-1] @ prob.terminal) if status == _kernels.OK else 0.0
        if not contraction > 0.0:
            raise InfeasibleWeakLabel("weak label has probability zero", bag_id=bag.id)
        out[i] = _kernels.log_total(norms) + np.log(contraction)
    return out


# ---------------------------------------------------------------- batched


def _seq_sum(M):
    """Row sums accumulated left to right, as the kernels do."""
    return np.add.accumulate(M, axis=1)[:, -1]


def _log_total(norms):
    acc = np.ones(norms.shape[0])
    out = np.zeros(norms.shape[0])
    for i in range(norms.shape[1]):
        acc *= norms[:, i]
        flush = (acc < 1e-200) | (acc > 1e200)
        out[flush] += np.log(acc[flush])
        acc[flush] = 1.0
    return out + np.log(acc)


def _pad(problems):
    """Stack chains into padded arrays; padding steps and states are inert."""
    N = len(problems)
    Kmax = max(p.K for p in problems)
    Wmax = max(p.W for p in problems)
    S = 2 * Wmax
    lengths = np.array([p.K for p in problems])
    q = np.zeros((N, Kmax, Wmax))
    nz = np.tile(np.arange(Wmax)[None, :, None], (N, 1, 2))
    iz = np.zeros((N, 2), dtype=np.int64)
    term = np.zeros((N, S))
    em = np.ones((N, Kmax, S))
    for n, p in enumerate(problems):
        K, W = p.K, p.W
        q[n, :K, :W] = p.q
        nz[n, :W] = p.next_z
        iz[n] = p.init_z
        term[n, :W] = p.terminal[:W]
        term[n, Wmax : Wmax + W] = p.terminal[W:]
        if p.emission.shape[0]:
            em[n, :K, :W] = p.emission[:, :W]
            em[n, :K, Wmax : Wmax + W] = p.emission[:, W:]
    return q, nz, iz, term, em, lengths


def _step_dense(q_k, nz, S, Wmax):
    N = q_k.shape[0]
    T = np.zeros((N, S, S))
    n = np.arange(N)[:, None]
    z = np.arange(Wmax)[None, :]
    for y in (0, 1):
        cols = y * Wmax + z
        T[n, nz[:, :, 0], cols] = 1.0 - q_k
        T[n, Wmax + nz[:, :, 1], cols] = q_k
    return T


def batched_forward_backward(problems, lowrank=True):
    """Run many chains together.

    Returns (posterior N x Kmax, loglik N, status N, lengths).  Every step
    advances all chains with one vectorized update; chains shorter than the
    longest are carried through identity steps.
    """
    q, nz, iz, term, em, lengths = _pad(problems)
    N, Kmax, Wmax = q.shape
    S = 2 * Wmax
    ar = np.arange(N)
    status = np.zeros(N, dtype=np.int64)
    alpha = np.zeros((N, Kmax, S))
    beta = np.zeros((N, Kmax, S))
    norms = np.ones((N, Kmax))

    def rescale(M, live):
        s = _seq_sum(M)
        ok = s > 0.0
        inv = np.where(ok, 1.0 / np.where(ok, s, 1.0), 0.0)
        M *= inv[:, None]
        return np.where(live & ok, s, 1.0), live & ~ok

    if lowrank:
        # scatter targets in the kernels' order: (z, y') pairs, z ascending
        dest = np.stack([nz[:, :, 0], Wmax + nz[:, :, 1]], axis=2).reshape(N, -1)
        src_n = np.repeat(ar, 2 * Wmax)

    a0 = np.zeros((N, S))
    np.add.at(a0, (ar, iz[:, 0]), 1.0 - q[:, 0, 0])
    np.add.at(a0, (ar, Wmax + iz[:, 1]), q[:, 0, 0])
    a0 *= em[:, 0]
    live = np.ones(N, dtype=bool)
    norms[:, 0], dead = rescale(a0, live)
    status[dead] = _kernels.ZERO_FORWARD
    alpha[:, 0] = a0
    for k in range(1, Kmax):
        real = k < lengths
        prev = alpha[:, k - 1]
        if lowrank:
            v = prev[:, :Wmax] + prev[:, Wmax:]
            vals = np.stack([(1.0 - q[:, k]) * v, q[:, k] * v], axis=2).reshape(N, -1)
            a = np.zeros((N, S))
            np.add.at(a, (src_n, dest.ravel()), vals.ravel())
        else:
            a = np.einsum("nij,nj->ni", _step_dense(q[:, k], nz, S, Wmax), prev)
        a *= em[:, k]
        live = real & (status == 0)
        s, dead = rescale(a, live)
        status[dead] = _kernels.ZERO_FORWARD
        a[~real] = prev[~real]
        alpha[:, k] = a
        norms[:, k] = s

    last = alpha[ar, lengths - 1]
    contraction = _seq_sum(last * term)
    status[(status == 0) & ~(contraction > 0.0)] = _kernels.ZERO_EVIDENCE
    loglik = np.where(status == 0, _log_total(norms) + np.log(np.where(contraction > 0, contraction, 1.0)), -np.inf)

    b = term.copy()
    rescale(b, status == 0)
    beta[:, Kmax - 1] = b
    for k in range(Kmax - 2, -1, -1):
        real = k + 1 < lengths
        nxt = beta[:, k + 1]
        m = nxt * em[:, k + 1]
        if lowrank:
            g0 = np.take_along_axis(m, nz[:, :, 0], axis=1)
            g1 = np.take_along_axis(m, Wmax + nz[:, :, 1], axis=1)
            u = (1.0 - q[:, k + 1]) * g0 + q[:, k + 1] * g1
            bk = np.concatenate([u, u], axis=1)
        else:
            bk = np.einsum("nij,ni->nj", _step_dense(q[:, k + 1], nz, S, Wmax), m)
        _, dead = rescale(bk, real & (status == 0))
        status[dead] = _kernels.ZERO_EVIDENCE
        bk[~real] = nxt[~real]
        beta[:, k] = bk

    bel = alpha * beta
    s = np.add.accumulate(bel, axis=2)[:, :, -1]
    valid = np.arange(Kmax)[None, :] < lengths[:, None]
    zero = valid & ~(s > 0.0)
    status[(status == 0) & zero.any(axis=1)] = _kernels.ZERO_EVIDENCE
    bel *= np.where(s > 0.0, 1.0 / np.where(s > 0.0, s, 1.0), 0.0)[:, :, None]
    post = np.add.accumulate(bel[:, :, Wmax:], axis=2)[:, :, -1]
    return post, loglik, status, lengths


def batched_infer(setting, bags, mode="lowrank", return_exceptions=False, T_class=None):
    """Posteriors for a batch of bags in one fused pass per chain step.

    With ``return_exceptions`` a failing bag yields its (bag-tagged) error in
    place of a posterior; otherwise the first error is raised.
    """
    lowrank = _check_mode(mode)
    if setting.family == "noisy":
        from .loop import multilabel_posterior

        out = []
        for bag in bags:
            try:
                out.append(multilabel_posterior(setting, bag, T_class, mode=mode))
            except WSError as err:
                if not return_exceptions:
                    raise
                out.append(err.with_bag(bag.id))
        return out
    results = [None] * len(bags)
    problems, owners = [], []
    for i, bag in enumerate(bags):
        try:
            validate_bag(setting, bag)
            if setting.family == "category":
                problems.append(chain_problem(setting, bag))
                owners.append((i, 0))
            else:
                for c in range(bag.C):
                    problems.append(chain_problem(setting, bag, c))
                    owners.append((i, c))
        except WSError as err:
            results[i] = err.with_bag(bag.id)
    if problems:
        post, loglik, status, lengths = batched_forward_backward(problems, lowrank)
        tables = {}
        for j, (i, c) in enumerate(owners):
            if results[i] is not None:
                continue
            if status[j] != _kernels.OK:
                bag = bags[i]
                if status[j] == _kernels.ZERO_FORWARD and setting.family != "category":
                    results[i] = InfeasibleBag("forward message collapsed to zero", bag_id=bag.id)
                else:
                    results[i] = InfeasibleWeakLabel("weak label has zero likelihood", bag_id=bag.id)
                tables.pop(i, None)
                continue
            tab = tables.setdefault(i, ([], []))
            tab[0].append(post[j, : lengths[j]])
            tab[1].append(loglik[j])
        for i, (cols, lls) in tables.items():
            if results[i] is not None:
                continue
            if setting.family == "category":
                results[i] = LatentPosterior(cols[0][None, :], np.array(lls), True, bags[i].id)
            else:
                results[i] = LatentPosterior(np.stack(cols, axis=1), np.array(lls), False, bags[i].id)
    if not return_exceptions:
        for r in results:
            if isinstance(r, WSError):
                raise r
    return results


def transition_matrices(setting, bag, cls=0):
    """All K - 1 dense transitions of one class chain (for inspection and tests)."""
    prob = chain_problem(setting, bag, cls)
    S = 2 * prob.W
    out = []
    for k in range(1, prob.K):
        T = np.zeros((S, S))
        _kernels.fill_transition(T, prob.q, k, prob.next_z)
        out.append(T)
    return out


def state_space_for(setting, bag):
    """State space of the chains run for ``bag``."""
    if setting.family == "category":
        return build_state_space(make_setting(Kind.MultiIns), 1)
    return build_state_space(setting, bag.K)
