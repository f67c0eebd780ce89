"""Syndrome-based LDPC reconciliation with sum-product decoding.

Each start rate has its own nested code.  The first ``m(R)`` rows form an
irregular base code; rows beyond that are extension checks, so that after
a decoding failure the parties disclose only the additional syndrome bits
needed to reach the next lower rate.  All constructions are seeded and free
of 4-cycles wherever the row budget allows.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .keyrate import binary_entropy

RATES = (0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9)
# Node-perspective variable degree distribution of the base codes.
VARIABLE_DEGREES = {2: 0.24, 3: 0.50, 6: 0.10, 20: 0.16}
BLOCK_LENGTH = 4096
MAX_ITERATIONS = 100
F_TARGET = 1.25
HASH_BITS = 64
_TINY = 1e-30
_FLOAT = np.float32
_SAT = _FLOAT(1.0 - 2e-7)  # caps check messages near 16 in LLR


@dataclass(frozen=True)
class LDPCCode:
    n: int
    m: int
    var: np.ndarray  # edge -> variable node, edges sorted by check
    chk: np.ndarray  # edge -> check node (non-decreasing)
    levels: tuple = ()  # cumulative row counts usable as nested prefixes

    @property
    def rate(self) -> float:
        return 1.0 - self.m / self.n

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        """H @ bits mod 2 for (n,) or (B, n) bit arrays."""
        b = np.asarray(bits, dtype=np.uint8)
        vals = b[..., self.var]
        starts = _row_starts(self.chk, self.m)
        return (np.add.reduceat(vals, starts, axis=-1) & 1).astype(np.uint8)

    def prefix(self, rows: int) -> "LDPCCode":
        """The code formed by the first ``rows`` checks."""
        if not 0 < rows <= self.m:
            raise ValueError("prefix must keep between 1 and m rows")
        if rows == self.m:
            return self
        e = int(np.searchsorted(self.chk, rows))
        return LDPCCode(self.n, rows, self.var[:e], self.chk[:e],
                        tuple(k for k in self.levels if k <= rows))

    def dense(self) -> np.ndarray:
        h = np.zeros((self.m, self.n), dtype=np.uint8)
        h[self.chk, self.var] = 1
        return h


def _row_starts(chk: np.ndarray, m: int) -> np.ndarray:
    return np.searchsorted(chk, np.arange(m))


def rows_for_rate(n: int, rate: float) -> int:
    return int(round(n * (1.0 - rate)))


def degree_sequence(n: int, degrees: dict = VARIABLE_DEGREES) -> np.ndarray:
    """Per-column degrees realising a node-perspective distribution exactly."""
    ks = sorted(degrees)
    w = np.array([degrees[k] for k in ks], dtype=float)
    counts = np.floor(w / w.sum() * n).astype(int)
    rem = n - counts.sum()
    counts[np.argsort(-(w / w.sum() * n - counts))[:rem]] += 1
    return np.repeat(np.array(ks), counts)


def _pick(rng, cand: np.ndarray, load: np.ndarray) -> int:
    low = cand[load[cand] == load[cand].min()]
    return int(rng.choice(low))


def construct_code(n: int, rate: float, seed: int, degrees: dict | None = None,
                   column_weight: int | None = None) -> LDPCCode:
    """Base code: columns placed greedily onto the least-loaded checks.

    A column never joins two checks that already share a column, which rules
    out 4-cycles; if that leaves no candidate the constraint is dropped for
    that edge.  ``column_weight`` gives a regular code instead.
    """
    m = rows_for_rate(n, rate)
    if not 0 < m < n:
        raise ValueError("rate must leave 0 < m < n checks")
    rng = np.random.default_rng(seed)
    if column_weight is not None:
        degs = np.full(n, int(column_weight))
    else:
        degs = degree_sequence(n, degrees or VARIABLE_DEGREES)
    degs = np.minimum(degs, m)
    adj = np.zeros((m, m), dtype=bool)
    load = np.zeros(m, dtype=np.int64)
    cols = rng.permutation(n)
    cols = cols[np.argsort(-degs[cols], kind="stable")]  # high degree first
    rows_out, cols_out = [], []
    for j in cols:
        chosen: list[int] = []
        free = np.ones(m, dtype=bool)
        for _ in range(degs[j]):
            cand = np.flatnonzero(free)
            if len(cand) == 0:
                cand = np.setdiff1d(np.arange(m), chosen)
            r = _pick(rng, cand, load)
            chosen.append(r)
            free &= ~adj[r]
            free[r] = False
        ch = np.array(chosen)
        adj[np.ix_(ch, ch)] = True
        load[ch] += 1
        rows_out.extend(chosen)
        cols_out.extend([int(j)] * len(chosen))
    return _assemble(n, m, np.array(rows_out), np.array(cols_out), (m,))


def _assemble(n, m, rows, cols, levels) -> LDPCCode:
    order = np.lexsort((cols, rows))
    return LDPCCode(n, m, cols[order].astype(np.int64), rows[order].astype(np.int64), tuple(levels))


def extend_code(base: LDPCCode, rates, seed: int) -> LDPCCode:
    """Append extension checks so the prefixes reach each of ``rates`` in turn.

    Extension rows carry the base code's mean row weight and favour the
    columns of lowest current degree, again avoiding 4-cycles.
    """
    n = base.n
    targets = [rows_for_rate(n, r) for r in rates]
    if any(t <= base.m for t in targets) or targets != sorted(targets):
        raise ValueError("extension rates must be decreasing and below the base rate")
    rng = np.random.default_rng(seed)
    weight = max(2, int(round(len(base.var) / base.m)))
    col_adj = np.zeros((n, n), dtype=bool)
    starts = np.append(_row_starts(base.chk, base.m), len(base.var))
    for r in range(base.m):
        c = base.var[starts[r]: starts[r + 1]]
        col_adj[np.ix_(c, c)] = True
    col_deg = np.bincount(base.var, minlength=n)
    rows, cols = [base.chk], [base.var]
    r = base.m
    for t in targets:
        while r < t:
            chosen: list[int] = []
            free = np.ones(n, dtype=bool)
            for _ in range(weight):
                cand = np.flatnonzero(free)
                if len(cand) == 0:
                    break
                c = _pick(rng, cand, col_deg)
                chosen.append(c)
                free &= ~col_adj[c]
                free[c] = False
            ch = np.array(chosen)
            col_adj[np.ix_(ch, ch)] = True
            col_deg[ch] += 1
            rows.append(np.full(len(ch), r))
            cols.append(ch)
            r += 1
    return _assemble(n, r, np.concatenate(rows), np.concatenate(cols), (base.m, *targets))


@lru_cache(maxsize=None)
def code_for_rate(rate: float, n: int = BLOCK_LENGTH, seed: int = 0) -> LDPCCode:
    """Nested code starting at ``rate`` and extending down to the lowest rate.

    The seed is offset per rate so every code in the family is reproducible.
    """
    if rate not in RATES:
        raise ValueError(f"rate must be one of {RATES}")
    s = seed * 1000 + int(round(rate * 100))
    base = construct_code(n, rate, seed=s)
    lower = [r for r in sorted(RATES, reverse=True) if r < rate]
    return extend_code(base, lower, seed=s + 500) if lower else base


class _Decoder:
    """Vectorized sum-product decoder over a batch of blocks."""

    def __init__(self, code: LDPCCode):
        self.code = code
        self.row_starts = _row_starts(code.chk, code.m)
        self.by_var = np.argsort(code.var, kind="stable")
        self.var_starts = np.searchsorted(code.var[self.by_var], np.arange(code.n))

    def decode(self, target: np.ndarray, prior: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
        """Find error patterns e with H e = target given prior LLRs (B, n).

        Check updates use the tanh rule: the product of tanh(v/2) over a row,
        divided by the edge's own factor, gives the extrinsic message.
        """
        code = self.code
        B = target.shape[0]
        est = (prior < 0).astype(np.uint8)
        done = np.zeros(B, dtype=bool)
        idx = np.arange(B)
        flip = 1.0 - 2.0 * target[:, code.chk].astype(_FLOAT)  # (B, E)
        pri = np.asarray(prior, dtype=_FLOAT)
        v2c = pri[:, code.var]
        tgt = target
        for _ in range(max_iter):
            t = np.tanh(0.5 * v2c)
            t = np.where(np.abs(t) < _TINY, np.copysign(_TINY, t), t)
            prod = np.multiply.reduceat(t, self.row_starts, axis=1)[:, code.chk]
            ext = np.clip(prod / t * flip, -_SAT, _SAT)
            c2v = 2.0 * np.arctanh(ext)
            total = pri + np.add.reduceat(c2v[:, self.by_var], self.var_starts, axis=1)
            hard = (total < 0).astype(np.uint8)
            ok = np.all(code.syndrome(hard) == tgt, axis=1)
            if ok.any():
                est[idx[ok]] = hard[ok]
                done[idx[ok]] = True
                keep = ~ok
                idx, flip, pri, tgt = idx[keep], flip[keep], pri[keep], tgt[keep]
                total, c2v, hard = total[keep], c2v[keep], hard[keep]
                if len(idx) == 0:
                    break
            v2c = total[:, code.var] - c2v
        else:
            est[idx] = hard
        return est, done


@lru_cache(maxsize=None)
def _decoder(rate: float, n: int, seed: int, rows: int) -> _Decoder:
    return _Decoder(code_for_rate(rate, n, seed).prefix(rows))


def verification_hash(bits: np.ndarray, seed: int) -> bytes:
    """64-bit keyed hash of a bit block (BLAKE2b)."""
    key = int(seed).to_bytes(16, "little", signed=False)
    return hashlib.blake2b(np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes(),
                           digest_size=HASH_BITS // 8, key=key).digest()


def choose_rate(qber_estimate: float, f_target: float = F_TARGET, rates=RATES) -> float:
    need = f_target * binary_entropy(min(max(qber_estimate, 0.0), 0.5))
    ok = [r for r in rates if 1.0 - r >= need]
    return max(ok) if ok else min(rates)


@dataclass
class ReconcileResult:
    corrected: np.ndarray  # Bob's corrected bits of verified blocks, concatenated
    alice: np.ndarray  # Alice's bits of verified blocks (for diagnostics)
    leak_ec: int
    verified: np.ndarray  # per-block bool
    rate_used: np.ndarray  # per-block final cumulative rate
    n_blocks: int
    block_length: int
    true_qber: float
    efficiency: float
    leak_per_block: np.ndarray = field(default=None)

    @property
    def n_verified_bits(self) -> int:
        return int(self.verified.sum()) * self.block_length


def ec_reconcile(alice_bits, bob_bits, qber_estimate: float, block_length: int = BLOCK_LENGTH,
                 f_target: float = F_TARGET, max_iter: int = MAX_ITERATIONS, seed: int = 0,
                 batch: int = 64, code_seed: int = 0) -> ReconcileResult:
    """Reconcile Bob's bits to Alice's in blocks, verifying each with a 64-bit hash.

    The starting rate is the largest with (1 - R) >= f_target * h2(qber).  A
    block that fails to decode discloses the extension checks that take its
    code to the next lower rate and is decoded again; after the lowest rate
    it is dropped.
    Verification bits are not counted in ``leak_ec``.  Trailing bits that do
    not fill a block are discarded.
    """
    a = np.asarray(alice_bits, dtype=np.uint8)
    b = np.asarray(bob_bits, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("alice and bob strings differ in length")
    if block_length < 1024:
        raise ValueError("block length must be at least 1024")
    nb = len(a) // block_length
    a = a[: nb * block_length].reshape(nb, block_length)
    b = b[: nb * block_length].reshape(nb, block_length)
    true_q = float(np.mean(a != b)) if nb else 0.0
    q = min(max(qber_estimate, 1e-4), 0.49)
    llr = np.log((1 - q) / q)
    start = choose_rate(qber_estimate, f_target)

    corrected = b.copy()
    leak = np.zeros(nb, dtype=np.int64)
    decoded = np.zeros(nb, dtype=bool)
    rate_used = np.full(nb, np.nan)
    pending = np.arange(nb)
    full = code_for_rate(start, block_length, code_seed)
    disclosed = 0
    for rows in full.levels:
        if len(pending) == 0:
            break
        dec = _decoder(start, block_length, code_seed, rows)
        code = dec.code
        leak[pending] += rows - disclosed
        disclosed = rows
        still = []
        for s in range(0, len(pending), batch):
            idx = pending[s: s + batch]
            target = code.syndrome(a[idx]) ^ code.syndrome(b[idx])
            prior = np.full((len(idx), block_length), llr)
            err, ok = dec.decode(target, prior, max_iter)
            corrected[idx[ok]] = b[idx[ok]] ^ err[ok]
            decoded[idx[ok]] = True
            rate_used[idx] = code.rate
            still.extend(idx[~ok].tolist())
        pending = np.array(still, dtype=np.int64)

    verified = np.zeros(nb, dtype=bool)
    for i in np.flatnonzero(decoded):
        hseed = seed * 1_000_003 + i
        verified[i] = verification_hash(corrected[i], hseed) == verification_hash(a[i], hseed)
    total_leak = int(leak.sum())
    h = binary_entropy(true_q) if nb else 0.0
    eff = total_leak / (nb * block_length * h) if nb and h > 0 else float("inf")
    return ReconcileResult(
        corrected=corrected[verified].ravel(),
        alice=a[verified].ravel(),
        leak_ec=total_leak,
        verified=verified,
        rate_used=rate_used,
        n_blocks=nb,
        block_length=block_length,
        true_qber=true_q,
        efficiency=eff,
        leak_per_block=leak,
    )
