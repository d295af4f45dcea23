"""Class loops: fusing per-class chain evidence through a class-transition matrix.

Each class chain sends its weak-label node the marginal likelihood of every
weak value.  Loop factors carry ``T_class`` between weak-label nodes, and
each chain's backward pass is seeded with its own evidence factor times the
messages arriving from the other classes.
"""
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .chain import LatentPosterior, category_problem, chain_problem, infer, run_problem, _check_mode
from .core import validate_bag
from .errors import DimensionMismatch, InfeasibleWeakLabel, IoFailure, SettingMismatch


@dataclass(frozen=True, eq=False)
class LoopBeliefs:
    """``messages[k, i]`` is T_class e_k sent to class i; ``fused[i]`` is b_{W_i}."""

    messages: np.ndarray
    cavity: np.ndarray
    fused: np.ndarray


def validate_class_transition(T, sym_tol=1e-12, row_tol=1e-9):
    """Check a class-transition matrix: square, nonnegative, symmetric, stochastic rows."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] == 0:
        raise DimensionMismatch(f"class transition must be square, got shape {T.shape}")
    if not np.all(np.isfinite(T)) or np.any(T < 0.0):
        raise DimensionMismatch("class transition entries must be finite and nonnegative")
    if np.max(np.abs(T - T.T)) > sym_tol:
        raise DimensionMismatch("class transition is not symmetric")
    if np.max(np.abs(T.sum(axis=1) - 1.0)) > row_tol:
        raise DimensionMismatch("class transition rows must sum to 1")
    return T


def load_class_transition(path):
    """Read a JSON array of arrays and validate it."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise IoFailure(f"cannot read {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DimensionMismatch(f"{path} is not valid JSON: {err}") from err
    return validate_class_transition(data)


def class_evidence(final_messages, state_value, n_values):
    """Per-class weak-value likelihoods from the last forward message of each chain.

    ``evidence[c, w]`` sums the final message over states whose weak value
    is ``w``; rows are normalized.
    """
    rows = [getattr(m, "weights", m) for m in final_messages]
    alpha = np.atleast_2d(np.asarray(rows, dtype=float))
    ev = np.zeros((alpha.shape[0], n_values))
    for w in range(n_values):
        ev[:, w] = alpha[:, state_value == w].sum(axis=1)
    total = ev.sum(axis=1, keepdims=True)
    return np.divide(ev, total, out=np.zeros_like(ev), where=total > 0)


def loop_messages(evidence, T_class):
    """One pass of loop messages and the fused weak-label beliefs.

    The message from class k to class i is ``T_class @ evidence[k]``; the
    belief of class i multiplies its own evidence by every incoming message.
    """
    ev = np.atleast_2d(np.asarray(evidence, dtype=float))
    T = np.asarray(T_class, dtype=float)
    C, n = ev.shape
    if T.shape != (n, n):
        raise DimensionMismatch(f"class transition is {T.shape}, weak values need {(n, n)}")
    sent = ev @ T.T
    messages = np.broadcast_to(sent[:, None, :], (C, C, n)).copy()
    cavity = np.ones((C, n))
    for i in range(C):
        for k in range(C):
            if k != i:
                cavity[i] *= sent[k]
        s = cavity[i].sum()
        if s > 0:
            cavity[i] /= s
    fused = ev * cavity
    tot = fused.sum(axis=1, keepdims=True)
    fused = np.divide(fused, tot, out=np.zeros_like(fused), where=tot > 0)
    return LoopBeliefs(messages, cavity, fused)


def noisy_posterior(probs_row, observed, T_class, lowrank=True):
    """Posterior over the true class of one noisily labeled instance.

    The class chain (K = 1, all classes allowed) supplies the evidence over
    true classes; the observed label reaches it through ``T_class[:, observed]``.
    Returns (posterior, loglik).
    """
    p = np.asarray(probs_row, dtype=float)
    T = np.asarray(T_class, dtype=float)
    C = p.size
    if T.shape != (C, C):
        raise DimensionMismatch(f"class transition is {T.shape}, need {(C, C)}")
    _, evidence, _ = run_problem(category_problem(p, range(C)), lowrank)
    fused = evidence * T[:, observed]
    total = fused.sum()
    if not total > 0.0:
        raise InfeasibleWeakLabel("observed label has zero probability")
    return fused / total, float(np.log(total))


def multilabel_posterior(setting, bag, T_class=None, mode="lowrank", validate=True):
    """Latent posterior with classes coupled through ``T_class``.

    ``T_class = None`` runs every chain independently.  Category settings have
    no loop and ignore ``T_class``; Noisy bags require it (falling back to
    ``setting.params["T_class"]``).
    """
    lowrank = _check_mode(mode)
    if validate:
        validate_bag(setting, bag)
    if setting.family == "noisy":
        T = T_class if T_class is not None else setting.params.get("T_class")
        if T is None:
            raise SettingMismatch("Noisy inference needs a class transition matrix", bag_id=bag.id)
        try:
            post, ll = noisy_posterior(bag.probs[0], bag.evidence[0].label, T, lowrank)
        except (DimensionMismatch, InfeasibleWeakLabel) as err:
            raise err.with_bag(bag.id)
        return LatentPosterior(post[None, :], np.array([ll]), True, bag.id)
    if setting.family == "category" or T_class is None:
        return infer(setting, bag, mode=mode, validate=False)
    K, C = bag.K, bag.C
    n = setting.n_values(K)
    T = np.asarray(T_class, dtype=float)
    if T.shape != (n, n):
        raise DimensionMismatch(f"class transition is {T.shape}, weak values need {(n, n)}", bag_id=bag.id)
    value = setting.state_value(K)
    problems, finals, own_ll = [], [], np.empty(C)
    for c in range(C):
        prob = chain_problem(setting, bag, c)
        alpha, norms, status = _kernels.forward(prob.q, prob.next_z, prob.init_z, prob.emission, lowrank)
        contraction = float(alpha[-1] @ prob.terminal)
        if not contraction > 0.0:
            raise InfeasibleWeakLabel("weak label has zero likelihood", bag_id=bag.id)
        own_ll[c] = _kernels.log_total(norms) + np.log(contraction)
        problems.append(prob)
        finals.append(alpha[-1])
    loop = loop_messages(class_evidence(finals, value, n), T)
    table = np.empty((K, C))
    for c, prob in enumerate(problems):
        seed = prob.terminal * loop.cavity[c][value]
        _, table[:, c], _ = run_problem(chain_problem(setting, bag, c, seed), lowrank, bag.id)
    return LatentPosterior(table, own_ll, False, bag.id)
