"""
Synthetic decode sessions.

A session is a list of turns. Each turn carries the new prompt tokens
(``(n, G, d)`` keys and values), one group query block per decode step
(``(steps, G, H, d)``) and the key/value of the token generated at each step
(``(steps, G, d)``). All tensors are float32 so a session round-trips through
a trace file without loss.

Generators
----------
``gaussian``
    i.i.d. standard normal keys, values and queries.
``planted_needles``
    Background as above. ``needle_count`` prompt tokens are planted in
    contiguous clusters of ``cluster_len``; their keys share a per-turn topic
    direction (plus a per-cluster direction), and the turn's queries point
    along the topic while rotating emphasis over half of the clusters each
    step. The needle amplitude is solved so that, at every step, every
    needle's group-summed scaled logit ``sum_h q_h . k / sqrt(d)`` is at
    least ``needle_margin`` above the 99th percentile of the background
    tokens. The last ``question_len`` prompt tokens carry keys drawn like the
    turn's queries, standing in for the question at the end of a prompt.
``shifting_turns``
    Like ``planted_needles`` but every turn gets its own topic and its own
    disjoint needle set, all planted in the first prompt. Tokens that do not
    matter in turn 1 dominate turn 2. Each turn's queries are projected off
    the other turns' needle directions (all directions are made orthonormal
    when they fit in ``d`` dims), so a needle of one turn scores like
    background in the others.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidSpec
from .kv_store import GroupLayout

__all__ = ["WorkloadSpec", "Turn", "Session", "generate_workload", "GENERATORS"]

GENERATORS = ("gaussian", "planted_needles", "shifting_turns")

# query strength along the topic, relative to unit-variance noise per dim
_QUERY_ALIGN = 0.5
# question-token key strength along the topic
_QUESTION_ALIGN = 0.25
# weight of the per-cluster direction inside a needle key
_CLUSTER_WEIGHT = 1.0
# total weight of the emphasized-cluster directions inside a query
_EMPHASIS = 1.0
_AMPLITUDE_SLACK = 1.0 + 1e-4
_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class WorkloadSpec:
    generator: str = "gaussian"
    seq_len: int = 1024
    decode_steps: int = 8
    turns: int = 1
    num_groups: int = 1
    heads_per_group: int = 4
    head_dim: int = 64
    needle_count: int = 64
    needle_margin: float = 5.0
    seed: int = 0
    cluster_len: int = 8
    question_len: int = 32
    followup_len: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidSpec(f"unknown generator {self.generator!r}")
        for name in ("seq_len", "decode_steps", "turns", "num_groups",
                     "heads_per_group", "head_dim", "cluster_len"):
            if int(getattr(self, name)) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if self.question_len < 0 or self.needle_count < 0 or self.followup_len < 0:
            raise InvalidSpec("question_len, needle_count and followup_len must be >= 0")
        if not (math.isfinite(self.needle_margin) and self.needle_margin >= 0):
            raise InvalidSpec("needle_margin must be a finite value >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidSpec("seed must fit in an unsigned 64-bit integer")
        if self.question_len >= self.seq_len:
            raise InvalidSpec("question_len must be shorter than the prompt")
        if self.generator != "gaussian":
            n_turn_sets = self.turns if self.generator == "shifting_turns" else 1
            room = self.seq_len - self.question_len
            if self.needle_count * n_turn_sets > room:
                raise InvalidSpec(
                    f"{self.needle_count * n_turn_sets} needles do not fit in {room} prompt tokens")
            if self.needle_count < 1:
                raise InvalidSpec("needle generators need needle_count >= 1")

    @property
    def layout(self):
        return GroupLayout(self.num_groups, self.heads_per_group, self.head_dim)

    @property
    def followup_tokens(self):
        """Prompt length of every turn after the first."""
        if self.followup_len:
            return self.followup_len
        return max(self.seq_len // 4, self.question_len + 1)

    def to_dict(self):
        return asdict(self)


@dataclass
class Turn:
    prompt_keys: np.ndarray
    prompt_values: np.ndarray
    queries: np.ndarray
    step_keys: np.ndarray
    step_values: np.ndarray

    @property
    def prompt_len(self):
        return self.prompt_keys.shape[0]

    @property
    def decode_steps(self):
        return self.queries.shape[0]


@dataclass
class Session:
    layout: GroupLayout
    turns: list
    # absolute needle positions, needles[turn][group] -> int array (generator only)
    needles: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def decode_steps(self):
        return self.turns[0].decode_steps if self.turns else 0

    def total_tokens(self):
        return sum(t.prompt_len + t.decode_steps for t in self.turns)


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _cluster_starts(rng, n_clusters, length, span, forbidden):
    """Non-overlapping cluster start positions in ``[0, span)`` avoiding ``forbidden``."""
    free = np.ones(span, dtype=bool)
    free[list(forbidden)] = False
    # candidate starts whose whole cluster lands on free positions
    ok = np.lib.stride_tricks.sliding_window_view(free, length).all(axis=1) if span >= length else np.zeros(0, bool)
    starts = []
    cand = np.flatnonzero(ok)
    for _ in range(n_clusters):
        if cand.size == 0:
            raise InvalidSpec("not enough room to place needle clusters")
        s = int(cand[rng.integers(cand.size)])
        starts.append(s)
        lo, hi = s - length + 1, s + length
        cand = cand[(cand < lo) | (cand >= hi)]
    return sorted(starts)


def _needle_layout(rng, spec, span, forbidden):
    sizes = [spec.cluster_len] * (spec.needle_count // spec.cluster_len)
    if spec.needle_count % spec.cluster_len:
        sizes.append(spec.needle_count % spec.cluster_len)
    starts = _cluster_starts(rng, len(sizes), spec.cluster_len, span, forbidden)
    positions, cluster_of = [], []
    for c, (s, size) in enumerate(zip(starts, sizes)):
        positions.extend(range(s, s + size))
        cluster_of.extend([c] * size)
    return np.asarray(positions, dtype=np.int64), np.asarray(cluster_of, dtype=np.int64)


def _topic_queries(rng, steps, H, d, topic, cluster_dirs):
    """Queries along ``topic`` with emphasis rotating over half of the clusters."""
    n_c = cluster_dirs.shape[0]
    n_emph = max(1, n_c // 2)
    needle_dirs = topic[None, :] + _CLUSTER_WEIGHT * cluster_dirs
    q = np.empty((steps, H, d))
    for s in range(steps):
        emph = [(s + j) % n_c for j in range(n_emph)]
        direction = topic + (_EMPHASIS / math.sqrt(n_emph)) * cluster_dirs[emph].sum(axis=0)
        for _ in range(_MAX_REDRAWS):
            q[s] = _QUERY_ALIGN * math.sqrt(d) * direction + rng.standard_normal((H, d))
            # every needle must lean towards the query or no amplitude can plant it
            if (needle_dirs @ q[s].sum(axis=0)).min() > 1e-3:
                break
        else:
            raise InvalidSpec("could not draw queries aligned with every needle; raise head_dim")
    return q


def _orthogonalize(sets, d):
    """Make every topic and cluster direction of every set mutually orthonormal.

    Only done when they all fit in ``d`` dims; otherwise the sets are
    returned unchanged.
    """
    blocks = [np.vstack([topic[None, :], dirs]) for _, _, dirs, topic in sets]
    M = np.vstack(blocks)
    if M.shape[0] > d:
        return sets
    Q, R = np.linalg.qr(M.T)
    Q = Q * np.sign(np.diag(R))[None, :]  # keep each direction on its original side
    out, row = [], 0
    for (pos, cl, dirs, _), blk in zip(sets, blocks):
        n = blk.shape[0]
        B = Q[:, row: row + n].T
        out.append((pos, cl, B[1:], B[0]))
        row += n
    return out


def _foreign_basis(sets, i, d):
    """Orthonormal basis (d, r) of the needle directions of every other set.

    None when the directions are not mutually orthogonal (too many for ``d``),
    in which case the queries are left alone.
    """
    rows = [np.vstack([topic[None, :], dirs]) for j, (_, _, dirs, topic) in enumerate(sets) if j != i]
    if not rows:
        return None
    M = np.vstack(rows)
    if sum(blk.shape[0] for blk in rows) + 1 + sets[i][2].shape[0] > d:
        return None
    return M.T


def _plant(keys, queries, positions, cluster_of, topic, cluster_dirs, margin, background):
    """Scale each needle key so every step clears the background p99 by ``margin``."""
    d = keys.shape[1]
    base = keys[positions].astype(np.float64)
    dirs = topic[None, :] + _CLUSTER_WEIGHT * cluster_dirs[cluster_of]
    qsum = queries.sum(axis=1)  # (steps, d)
    scale = 1.0 / math.sqrt(d)
    bg_logits = (keys[background].astype(np.float64) @ qsum.T) * scale  # (n_bg, steps)
    p99 = np.percentile(bg_logits, 99, axis=0)
    offset = (base @ qsum.T) * scale  # (needles, steps)
    slope = (dirs @ qsum.T) * scale
    if np.any(slope <= 0):
        raise InvalidSpec("a needle direction is not aligned with its queries; try another seed")
    # each needle gets the smallest amplitude that clears every step
    amp = np.maximum((p99[None, :] + margin - offset) / slope, 0.0).max(axis=1) * _AMPLITUDE_SLACK
    keys[positions] = (base + amp[:, None] * dirs).astype(keys.dtype)
    return float(amp.max())


def generate_workload(spec):
    """Build a reproducible :class:`Session` from ``spec`` (same spec, same bytes)."""
    rng = np.random.default_rng(spec.seed)
    G, H, d = spec.num_groups, spec.heads_per_group, spec.head_dim
    S, steps, T = spec.seq_len, spec.decode_steps, spec.turns
    f32 = np.float32

    prompt_lens = [S] + [spec.followup_tokens] * (T - 1)
    turns = []
    for n in prompt_lens:
        # draw in float64, store in float32 so every later computation sees the
        # exact values a trace file will hold
        turns.append(Turn(
            prompt_keys=rng.standard_normal((n, G, d)).astype(f32),
            prompt_values=rng.standard_normal((n, G, d)).astype(f32),
            queries=np.empty((steps, G, H, d), dtype=f32),
            step_keys=rng.standard_normal((steps, G, d)).astype(f32),
            step_values=rng.standard_normal((steps, G, d)).astype(f32),
        ))

    needles = [[np.zeros(0, dtype=np.int64) for _ in range(G)] for _ in range(T)]
    amplitudes = []
    if spec.generator == "gaussian":
        for turn in turns:
            turn.queries[:] = rng.standard_normal((steps, G, H, d))
    else:
        shifting = spec.generator == "shifting_turns"
        for g in range(G):
            taken = set(range(S - spec.question_len, S))
            sets = []
            for _ in range(T if shifting else 1):
                pos, cl = _needle_layout(rng, spec, S, taken)
                taken.update(pos.tolist())
                n_c = int(cl.max()) + 1
                dirs = np.stack([_unit(rng, d) for _ in range(n_c)])
                sets.append((pos, cl, dirs, _unit(rng, d)))
            if shifting:
                sets = _orthogonalize(sets, d)
            others = [_foreign_basis(sets, i, d) for i in range(len(sets))] if shifting else [None]
            background = np.setdiff1d(np.arange(S), np.fromiter(taken, dtype=np.int64))
            first_keys = turns[0].prompt_keys[:, g, :]
            per_set_queries = [[] for _ in sets]
            for tau, turn in enumerate(turns):
                which = tau if shifting else 0
                pos, cl, dirs, topic = sets[which]
                q = _topic_queries(rng, steps, H, d, topic, dirs)
                if others[which] is not None:
                    # another turn's needles look like background to this turn
                    B = others[which]
                    q -= (q @ B) @ B.T
                q = q.astype(f32)
                turn.queries[:, g] = q
                per_set_queries[which].append(q)
                needles[tau][g] = pos.copy()
                ql = min(spec.question_len, turn.prompt_len - 1)
                if ql:
                    qk = _QUESTION_ALIGN * math.sqrt(d) * topic + rng.standard_normal((ql, d))
                    turn.prompt_keys[turn.prompt_len - ql:, g, :] = qk.astype(f32)
            for (pos, cl, dirs, topic), qs in zip(sets, per_set_queries):
                q_all = np.concatenate(qs).astype(np.float64)
                amplitudes.append(_plant(first_keys, q_all, pos, cl, topic, dirs,
                                         spec.needle_margin, background))
    meta = spec.to_dict()
    if amplitudes:
        meta["needle_amplitude_max"] = float(max(amplitudes))
    return Session(layout=spec.layout, turns=turns, needles=needles, meta=meta)
