"""Region density, smooth empirical error and the per-pattern error bound.

The unreliability score of a query pattern p is

    log( smooth_error(p) + gap(p) ),
    gap(p) = (1 / density(p)) * sqrt(log(2/delta) / (2N)),

where density is the kernel-weighted, normalized training mass around p and
smooth_error is the kernel-weighted average of per-region mean errors. Both
need normalizers that are sums over the full 2^M pattern space; `fit`
computes them in polynomial time by counting patterns per Hamming distance
instead of enumerating them:

    u      = N * sum_b d(b) C(M, b)                      (global normalizer)
    z(a)   = sum_b d(b) sum_c C(a,c) C(M-a,b-c) d(a+b-2c)
             (kernel autocorrelation at region distance a)
    w(l)   = (1/u) * sum_{i populated} N_i z(H(p_l, p_i))  (per-region weight)

`oracle_fit` computes the same three quantities by literally enumerating
all 2^M patterns, and exists solely to cross-check `fit`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import LogBinomTable, WeightingSpec, lse, make_log_binom, make_weighting
from .patterns import (
    ActivationPattern,
    RegionIndex,
    RegionStats,
    hamming_to_rows,
    signed_rows,
)

__all__ = [
    "FittedScorer",
    "ScoreReport",
    "SyntheticRegionWorld",
    "fit",
    "oracle_fit",
    "density",
    "smooth_error",
    "score",
    "score_batch",
    "validate_concentration_bound",
    "save_scorer",
    "load_scorer",
    "ScorerFileError",
]

SCORER_FILE_HEADER = "#subfn-scorer v1"

ORACLE_MAX_M = 20  # 2^20 patterns is the largest enumeration we allow


class ScorerFileError(ValueError):
    """Malformed scorer file."""


@dataclass(eq=False)
class FittedScorer:
    """Precomputed state for scoring arbitrary query patterns.

    Regions are kept in canonical (packed-bytes) order; log_w aligns with
    that order. All tables are log-domain.
    """

    index: RegionIndex
    spec: WeightingSpec
    binom: LogBinomTable
    delta: float
    log_u: float
    log_z: np.ndarray  # [m+1]
    log_w: np.ndarray  # [P] per populated region
    # region data in canonical order
    patterns_packed: np.ndarray  # [P, ceil(m/8)] uint8
    counts: np.ndarray  # [P] int64
    mean_errors: np.ndarray  # [P]
    # scoring scratch, derived once in _finish
    _signed_t: np.ndarray | None = None  # [m, P] float32, +-1 bits transposed
    _log_counts: np.ndarray | None = None  # [P]
    _smooth_coefs: np.ndarray | None = None  # [P] log(N_l * rbar_l) - log_w[l]
    _gap_log_const: float = 0.0  # 0.5 * log(log(2/delta) / (2N))

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def n_total(self) -> int:
        return self.index.n_total

    def _finish(self) -> "FittedScorer":
        self._signed_t = np.ascontiguousarray(
            signed_rows(self.patterns_packed, self.m).T
        )
        self._log_counts = np.log(self.counts.astype(np.float64))
        with np.errstate(divide="ignore"):
            self._smooth_coefs = (
                self._log_counts + np.log(self.mean_errors) - self.log_w
            )
        n = self.n_total
        self._gap_log_const = 0.5 * (math.log(math.log(2.0 / self.delta)) - math.log(2.0 * n))
        return self


@dataclass(frozen=True)
class ScoreReport:
    """Per-pattern scoring breakdown; log_bound is the unreliability score."""

    log_bound: float
    smooth_error: float
    log_density: float
    gap: float


def _validate_fit_args(index: RegionIndex, spec: WeightingSpec, delta: float):
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if index.m != spec.m:
        raise ValueError(f"index m={index.m} does not match weighting m={spec.m}")


def fit(
    index: RegionIndex,
    spec: WeightingSpec,
    delta: float,
    binom: LogBinomTable | None = None,
) -> FittedScorer:
    """Precompute u, z(a) and w(l) for the populated regions.

    Work is O(M^3) for the z table plus O(P^2) Hamming distances over the
    P populated regions; nothing scales with 2^M.
    """
    _validate_fit_args(index, spec, delta)
    m = index.m
    if binom is None:
        binom = make_log_binom(m)
    elif binom.m != m:
        raise ValueError(f"binomial table m={binom.m} does not match index m={m}")

    packed, counts, means = index.arrays()
    n = index.n_total

    log_u = math.log(n) + float(lse(spec.log_d + binom.log_choose[m]))
    log_z = _z_table(spec, binom)

    log_counts = np.log(counts.astype(np.float64))
    signed = signed_rows(packed, m)
    signed_t = np.ascontiguousarray(signed.T)
    p = packed.shape[0]
    log_w = np.empty(p)
    chunk = max(1, min(p, 512))
    for s in range(0, p, chunk):
        dists = hamming_to_rows(signed[s : s + chunk], signed_t)
        log_w[s : s + chunk] = lse(log_counts[None, :] + log_z[dists], axis=1)
    log_w -= log_u

    scorer = FittedScorer(
        index=index,
        spec=spec,
        binom=binom,
        delta=float(delta),
        log_u=log_u,
        log_z=log_z,
        log_w=log_w,
        patterns_packed=packed,
        counts=counts,
        mean_errors=means,
    )
    return scorer._finish()


def _z_table(spec: WeightingSpec, binom: LogBinomTable) -> np.ndarray:
    """z(a) for a in [0, M], summing over (b, c) grids in log space.

    Patterns at distance b from one end of a pair at distance a split into
    groups by how many of the b flips (c of them) move toward the other
    end: C(a, c) * C(M-a, b-c) patterns sit at distance a + b - 2c from it.
    Out-of-range binomials are -inf and vanish from the log-sum.
    """
    m = spec.m
    log_d = spec.log_d
    lc = binom.log_choose
    b = np.arange(m + 1)[:, None]
    c = np.arange(m + 1)[None, :]
    bc = b - c
    neg = bc < 0  # c > b: not a term of the inner sum
    bc_idx = np.where(neg, 0, bc)
    log_z = np.empty(m + 1)
    scratch = np.empty((m + 1, m + 1))
    for a in range(m + 1):
        other = a + bc - c  # distance to the far end, in [0, M] for valid terms
        other_idx = np.clip(other, 0, m)
        np.add(lc[a][c], lc[m - a][bc_idx], out=scratch)
        scratch += log_d[b]
        scratch += log_d[other_idx]
        scratch[neg] = -np.inf
        log_z[a] = lse(scratch)
    return log_z


def oracle_fit(index: RegionIndex, spec: WeightingSpec, delta: float) -> FittedScorer:
    """Same scorer computed by enumerating every pattern in {0,1}^M.

    Linear-space sums over all 2^M patterns; exponentially slow, usable up
    to M = 20, and deliberately free of the counting shortcuts in `fit`.
    """
    _validate_fit_args(index, spec, delta)
    m = index.m
    if m > ORACLE_MAX_M:
        raise ValueError(f"oracle enumeration limited to m <= {ORACLE_MAX_M}, got {m}")

    packed, counts, means = index.arrays()
    pop_ints = np.array(
        [int.from_bytes(row.tobytes(), "little") for row in packed], dtype=np.int64
    )
    size = 1 << m
    all_ints = np.arange(size, dtype=np.int64)
    popcount = _popcount_ints(m)
    d_lin = np.exp(spec.log_d)
    cnt = counts.astype(np.float64)

    # numerator of the density at every pattern: sum_j N_j d(H(p, p_j))
    numer = np.zeros(size)
    for j in range(len(pop_ints)):
        numer += cnt[j] * d_lin[popcount[all_ints ^ pop_ints[j]]]
    u = float(numer.sum())

    # z(a): correlate the kernel around two reference patterns at distance a
    z = np.empty(m + 1)
    for a in range(m + 1):
        ref = (1 << a) - 1  # a low bits set; distance a from pattern 0
        z[a] = float(
            np.sum(d_lin[popcount[all_ints]] * d_lin[popcount[all_ints ^ ref]])
        )

    # w(l) = sum over all patterns j of P(h_j) d(H(p_l, p_j))
    w = np.empty(len(pop_ints))
    dens = numer / u
    for l in range(len(pop_ints)):
        w[l] = float(np.sum(dens * d_lin[popcount[all_ints ^ pop_ints[l]]]))

    scorer = FittedScorer(
        index=index,
        spec=spec,
        binom=make_log_binom(m),
        delta=float(delta),
        log_u=math.log(u),
        log_z=np.log(z),
        log_w=np.log(w),
        patterns_packed=packed,
        counts=counts,
        mean_errors=means,
    )
    return scorer._finish()


def _popcount_ints(m: int) -> np.ndarray:
    """popcount[i] for every i in [0, 2^m)."""
    size = 1 << m
    out = np.zeros(size, dtype=np.int64)
    step = 1
    while step < size:
        out[step : 2 * step] = out[:step] + 1
        step *= 2
    return out


# --- scoring ----------------------------------------------------------------


def _as_packed(scorer: FittedScorer, patterns) -> np.ndarray:
    if isinstance(patterns, ActivationPattern):
        patterns = [patterns]
    if isinstance(patterns, np.ndarray):
        mat = patterns
    else:
        rows = []
        for p in patterns:
            if p.m != scorer.m:
                raise ValueError(f"query pattern m={p.m}, scorer m={scorer.m}")
            rows.append(np.frombuffer(p.bits, dtype=np.uint8))
        nbytes = (scorer.m + 7) // 8
        mat = np.zeros((len(rows), nbytes), dtype=np.uint8)
        for i, r in enumerate(rows):
            mat[i] = r
    if mat.shape[1] != (scorer.m + 7) // 8:
        raise ValueError("packed query width does not match scorer m")
    return mat


def score_batch(scorer: FittedScorer, patterns, chunk: int = 256) -> dict[str, np.ndarray]:
    """Vectorized scoring; returns arrays log_bound, log_smooth, log_density, log_gap.

    The log-bound is assembled with logaddexp so it stays finite even when
    the gap term is far outside float range of its linear form.
    """
    packed = _as_packed(scorer, patterns)
    q = packed.shape[0]
    log_density = np.empty(q)
    log_smooth = np.empty(q)
    signed = signed_rows(packed, scorer.m)
    log_d = scorer.spec.log_d
    for s in range(0, q, chunk):
        dists = hamming_to_rows(signed[s : s + chunk], scorer._signed_t)
        ld = log_d[dists]
        log_density[s : s + chunk] = lse(ld + scorer._log_counts[None, :], axis=1)
        log_smooth[s : s + chunk] = lse(ld + scorer._smooth_coefs[None, :], axis=1)
    log_density -= scorer.log_u
    log_smooth -= math.log(scorer.n_total)
    log_gap = scorer._gap_log_const - log_density
    log_bound = np.logaddexp(log_smooth, log_gap)
    return {
        "log_bound": log_bound,
        "log_smooth": log_smooth,
        "log_density": log_density,
        "log_gap": log_gap,
    }


def density(scorer: FittedScorer, p: ActivationPattern) -> float:
    """log of the normalized training-sample density at pattern p."""
    return float(score_batch(scorer, p)["log_density"][0])


def smooth_error(scorer: FittedScorer, p: ActivationPattern) -> float:
    """Kernel-weighted average of populated-region mean errors at pattern p."""
    return float(np.exp(score_batch(scorer, p)["log_smooth"][0]))


def score(scorer: FittedScorer, p: ActivationPattern) -> ScoreReport:
    out = score_batch(scorer, p)
    return ScoreReport(
        log_bound=float(out["log_bound"][0]),
        smooth_error=float(np.exp(out["log_smooth"][0])),
        log_density=float(out["log_density"][0]),
        gap=float(np.exp(out["log_gap"][0])),
    )


# --- statistical validity check ----------------------------------------------


@dataclass
class SyntheticRegionWorld:
    """Fixed region layout with known per-region Bernoulli error rates.

    Holds everything the concentration statement conditions on: the
    patterns, their sample counts, and each region's true error rate q_i.
    Redrawing a dataset keeps counts fixed and draws each region's errors
    i.i.d. Bernoulli(q_i).
    """

    patterns: list[ActivationPattern]
    counts: np.ndarray  # [C'] int
    qs: np.ndarray  # [C'] in [0, 1]
    seed: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.qs = np.asarray(self.qs, dtype=np.float64)
        if not (len(self.patterns) == len(self.counts) == len(self.qs)):
            raise ValueError("patterns, counts and qs must have equal length")
        if len(self.patterns) == 0:
            raise ValueError("world needs at least one region")
        if (self.counts < 1).any():
            raise ValueError("every region must hold at least one sample")
        if ((self.qs < 0) | (self.qs > 1)).any():
            raise ValueError("error probabilities must lie in [0, 1]")
        ms = {p.m for p in self.patterns}
        if len(ms) != 1:
            raise ValueError("all patterns must share one length")
        if len({p.bits for p in self.patterns}) != len(self.patterns):
            raise ValueError("region patterns must be distinct")

    @property
    def m(self) -> int:
        return self.patterns[0].m

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def validate_concentration_bound(
    world: SyntheticRegionWorld,
    spec: WeightingSpec,
    delta: float,
    trials: int,
    target: ActivationPattern | None = None,
) -> dict[str, float]:
    """Monte-Carlo check of the concentration bound on the smooth error.

    Draws `trials` datasets from the world (region counts fixed, errors
    i.i.d. Bernoulli(q_i)), recomputes the smooth empirical error of a fixed
    target pattern for each draw, and counts how often it deviates from its
    exact expectation by at least the gap term. The returned violation rate
    must not exceed delta; in practice it is far below.
    """
    if trials < 1000:
        raise ValueError(f"need at least 1000 trials for a meaningful rate, got {trials}")
    # region means are irrelevant to the weights; build the index from counts
    index = RegionIndex(
        m=world.m,
        regions={
            p: RegionStats(count=int(c), mean_error=float(q))
            for p, c, q in zip(world.patterns, world.counts, world.qs)
        },
    )
    scorer = fit(index, spec, delta)
    if target is None:
        target = world.patterns[0]

    # per-region smoothing weights at the target; fixed across draws
    packed = _as_packed(scorer, target)
    dists = hamming_to_rows(signed_rows(packed, scorer.m), scorer._signed_t)[0]
    log_wts = (
        scorer.spec.log_d[dists]
        + scorer._log_counts
        - scorer.log_w
        - math.log(scorer.n_total)
    )
    wts = np.exp(log_wts)

    # align world regions to the scorer's canonical region order
    order = sorted(range(len(world.patterns)), key=lambda i: world.patterns[i].bits)
    counts = world.counts[order]
    qs = world.qs[order]

    expected = float(wts @ qs)
    gap = math.exp(scorer._gap_log_const - density(scorer, target))

    rng = np.random.default_rng(world.seed)
    draws = rng.binomial(counts[None, :], qs[None, :], size=(trials, len(counts)))
    rhat = (draws / counts[None, :]) @ wts
    dev = np.abs(rhat - expected)
    violations = dev >= gap
    return {
        "violation_rate": float(np.mean(violations)),
        "mean_gap_slack": float(np.mean(gap - dev)),
    }


# --- scorer persistence -------------------------------------------------------


def save_scorer(path, scorer: FittedScorer) -> None:
    """Versioned text format holding everything needed to score queries."""
    with open(path, "w") as fh:
        fh.write(SCORER_FILE_HEADER + "\n")
        fh.write(f"m={scorer.m}\n")
        fh.write(f"n={scorer.n_total}\n")
        fh.write(f"rho={scorer.spec.rho:.17g}\n")
        fh.write(f"delta={scorer.delta:.17g}\n")
        fh.write(f"log_u={scorer.log_u:.17g}\n")
        fh.write("log_z=" + " ".join(f"{v:.17g}" for v in scorer.log_z) + "\n")
        fh.write("log_w=" + " ".join(f"{v:.17g}" for v in scorer.log_w) + "\n")
        fh.write(f"regions={len(scorer.counts)}\n")
        for row, cnt, err in zip(scorer.patterns_packed, scorer.counts, scorer.mean_errors):
            fh.write(f"{row.tobytes().hex()},{int(cnt)},{err:.17g}\n")


def load_scorer(path) -> FittedScorer:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SCORER_FILE_HEADER:
        raise ScorerFileError(f"{path}: line 1: expected header {SCORER_FILE_HEADER!r}")

    def take(i: int, prefix: str) -> str:
        if i >= len(lines) or not lines[i].startswith(prefix):
            raise ScorerFileError(f"{path}: line {i + 1}: expected {prefix!r} field")
        return lines[i][len(prefix) :]

    try:
        m = int(take(1, "m="))
        n = int(take(2, "n="))
        rho = float(take(3, "rho="))
        delta = float(take(4, "delta="))
        log_u = float(take(5, "log_u="))
        log_z = np.array([float(v) for v in take(6, "log_z=").split()])
        log_w = np.array([float(v) for v in take(7, "log_w=").split()])
        n_regions = int(take(8, "regions="))
    except ValueError as exc:
        raise ScorerFileError(f"{path}: bad field: {exc}") from exc
    if n_regions < 1:
        raise ScorerFileError(f"{path}: region table must hold at least one region")
    if log_z.shape[0] != m + 1:
        raise ScorerFileError(f"{path}: log_z has {log_z.shape[0]} entries, need {m + 1}")
    if log_w.shape[0] != n_regions:
        raise ScorerFileError(f"{path}: log_w has {log_w.shape[0]} entries, need {n_regions}")

    nbytes = (m + 7) // 8
    regions: dict[ActivationPattern, RegionStats] = {}
    packed = np.zeros((n_regions, nbytes), dtype=np.uint8)
    counts = np.zeros(n_regions, dtype=np.int64)
    means = np.zeros(n_regions)
    for r in range(n_regions):
        lineno = 9 + r
        if lineno >= len(lines):
            raise ScorerFileError(f"{path}: truncated region table")
        fields = lines[lineno].split(",")
        if len(fields) != 3:
            raise ScorerFileError(f"{path}: line {lineno + 1}: expected <hex>,<count>,<mean>")
        try:
            pat = ActivationPattern.from_hex(fields[0], m)
            cnt = int(fields[1])
            err = float(fields[2])
        except ValueError as exc:
            raise ScorerFileError(f"{path}: line {lineno + 1}: {exc}") from exc
        regions[pat] = RegionStats(count=cnt, mean_error=err)
        if nbytes:
            packed[r] = np.frombuffer(pat.bits, dtype=np.uint8)
        counts[r] = cnt
        means[r] = err
    if len(regions) != n_regions:
        raise ScorerFileError(f"{path}: duplicate patterns in region table")
    index = RegionIndex(m=m, regions=regions)
    if index.n_total != n:
        raise ScorerFileError(f"{path}: region counts sum to {index.n_total}, header says {n}")

    # log_w aligns with the file's region order; bring both into canonical order
    order = sorted(range(n_regions), key=lambda r: packed[r].tobytes())
    packed = packed[order]
    counts = counts[order]
    means = means[order]
    log_w = log_w[order]

    scorer = FittedScorer(
        index=index,
        spec=make_weighting(rho, m),
        binom=make_log_binom(m),
        delta=delta,
        log_u=log_u,
        log_z=log_z,
        log_w=log_w,
        patterns_packed=packed,
        counts=counts,
        mean_errors=means,
    )
    return scorer._finish()
