"""Random-walk Metropolis-Hastings for the Gaussian ansatz, with convergence diagnostics.

Burn-in: all chains advance in blocks while the diagonal proposal scales are
re-estimated from the pooled draws and a global step factor is tuned toward
the target acceptance band. Burn-in ends once the rank-normalised split-R-hat
of the latest block falls below the threshold for every parameter and the
acceptance rate is inside the band. The proposal is then frozen, and sampling
continues until the thinned draws (interval ceil(max IACT)) reach the
requested effective count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft, special, stats as sps

from .. import rng
from ..errors import ParameterError
from .model import PARAM_NAMES, GaussianModelParams, SampleStats

__all__ = ["McmcSettings", "McmcDiagnostics", "Posterior", "SigmaSummary", "run_mcmc",
           "split_rhat", "rank_normalized_split_rhat", "autocorrelation", "iact_geyer",
           "sigma_summary"]


@dataclass(frozen=True)
class McmcSettings:
    n_chains: int = 8
    min_effective: int = 6000
    block: int = 500
    max_burn_blocks: int = 200
    max_samples: int = 400_000          # per chain, after burn-in
    rhat_threshold: float = 1.01
    acceptance: tuple = (0.2, 0.4)
    init_spread: float = 0.5            # in units of the initial scales
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 2:
            raise ParameterError("split-R-hat needs at least 2 chains")
        if self.block < 20 or self.min_effective < 1:
            raise ParameterError("block must be >= 20 and min_effective >= 1")
        lo, hi = self.acceptance
        if not 0 < lo < hi < 1:
            raise ParameterError("acceptance band must satisfy 0 < lo < hi < 1")


@dataclass
class McmcDiagnostics:
    n_chains: int
    burn_in: int
    thin: int
    rhat: dict
    iact: dict
    ess: dict
    n_effective: int
    acceptance: float
    scales: dict
    converged: bool
    sigma_plus_interval: tuple = ()
    sigma_minus_interval: tuple = ()
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_chains": self.n_chains, "burn_in": self.burn_in, "thin": self.thin,
            "rhat": self.rhat, "iact": self.iact, "ess": self.ess,
            "n_effective": self.n_effective, "acceptance": self.acceptance,
            "scales": self.scales, "converged": self.converged,
            "sigma_plus_interval": list(self.sigma_plus_interval),
            "sigma_minus_interval": list(self.sigma_minus_interval),
            "notes": list(self.notes),
        }


@dataclass
class Posterior:
    """Thinned post-burn-in draws; ``draws`` has shape (n_chains, n_kept, 5)."""

    draws: np.ndarray
    iterations: np.ndarray
    thin: int

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, 5)

    def rows(self):
        """(chain, iteration, mu_z1, mu_p1, A, B_c, B_s) in chain order."""
        for c in range(self.draws.shape[0]):
            for it, th in zip(self.iterations, self.draws[c]):
                yield (c, int(it), *th.tolist())


# --------------------------------------------------------------------------
# diagnostics


def split_rhat(chains) -> float:
    """Classic split-R-hat of an (n_chains, n_draws) array."""
    x = np.asarray(chains, dtype=float)
    half = x.shape[1] // 2
    if half < 2:
        return math.nan
    x = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    n = x.shape[1]
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = sps.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((r - 0.375) / (x.size + 0.25))


def rank_normalized_split_rhat(chains) -> float:
    """max of bulk and folded-tail rank-normalised split-R-hat."""
    x = np.asarray(chains, dtype=float)
    half = x.shape[1] // 2
    x = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    if np.ptp(x) == 0:
        return 1.0
    bulk = split_rhat(_rank_normalize(x))
    tail = split_rhat(_rank_normalize(np.abs(x - np.median(x))))
    return max(bulk, tail)


def autocorrelation(x) -> np.ndarray:
    """Biased autocovariance-normalised autocorrelation of a 1-D series via FFT."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    size = sp_fft.next_fast_len(2 * n - 1, real=True)
    f = sp_fft.rfft(x, size)
    ac = sp_fft.irfft(f * np.conj(f), size)[:n]
    return ac / ac[0] if ac[0] > 0 else np.r_[1.0, np.zeros(n - 1)]


def iact_geyer(chains) -> float:
    """Integrated autocorrelation time from Geyer's initial monotone sequence.

    Accepts one series or an (n_chains, n_draws) array; for several chains the
    autocorrelation is combined with the between-chain variance as in the
    multi-chain effective-sample-size estimator.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    if n < 4:
        return math.nan
    acov = np.array([autocorrelation(c) * c.var() for c in x])
    w = x.var(axis=1, ddof=1).mean()
    if w == 0:
        return 1.0
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    stop = np.argmax(pairs <= 0) if np.any(pairs <= 0) else len(pairs)
    pairs = np.minimum.accumulate(pairs[:stop])
    tau = -1.0 + 2.0 * float(pairs.sum())
    return max(tau, 1.0 / math.log10(max(m * n, 10)))


# --------------------------------------------------------------------------
# sampler


def _initial_scales(stats: SampleStats, init: np.ndarray) -> np.ndarray:
    from .model import loglik_derivatives
    _, _, h = loglik_derivatives(stats, init)
    try:
        cov = np.linalg.inv(-h)
        sc = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        sc = np.zeros(5)
    fallback = 1e-2 * max(init[2], 1e-12)
    return np.where(np.isfinite(sc) & (sc > 0), sc, fallback)


def _logpost(stats, thetas):
    """Log-likelihood of each row of ``thetas``; -inf outside the feasible region."""
    b = stats._basis
    m = thetas[:, :2] @ b[:2]
    v = thetas[:, 2:] @ b[2:]
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = stats.s2 - 2.0 * m * stats.s1 + stats.count * m * m
        out = -0.5 * (stats.count * np.log(2.0 * math.pi * v) + sq / v).sum(axis=1)
    ok = thetas[:, 2] > np.hypot(thetas[:, 3], thetas[:, 4])
    return np.where(ok & np.isfinite(out), out, -np.inf)


def _advance(stats, state, lp, scales, n_steps, gens):
    """n_steps joint random-walk updates of every chain; returns draws and accept count."""
    m = state.shape[0]
    draws = np.empty((m, n_steps, 5))
    steps = np.stack([g.standard_normal((n_steps, 5)) for g in gens], axis=1) * scales
    log_u = np.log(np.stack([g.random(n_steps) for g in gens], axis=1))
    accepted = 0
    for t in range(n_steps):
        prop = state + steps[t]
        lp_new = _logpost(stats, prop)
        acc = log_u[t] < lp_new - lp
        state[acc] = prop[acc]
        lp[acc] = lp_new[acc]
        accepted += int(np.count_nonzero(acc))
        draws[:, t] = state
    return state, lp, draws, accepted


def run_mcmc(samples, init: GaussianModelParams, settings: McmcSettings | None = None):
    """Sample the posterior (flat prior on the feasible region) of the ansatz parameters.

    Returns (Posterior, McmcDiagnostics). If R-hat never drops below the
    threshold the diagnostics carry ``converged=False`` rather than raising.
    """
    settings = settings or McmcSettings()
    stats = SampleStats.from_samples(samples)
    stats.require()
    m = settings.n_chains
    theta0 = init.as_array()
    base = _initial_scales(stats, theta0)
    gens = [rng.stream(settings.seed, "mcmc", c) for c in range(m)]
    init_gen = rng.stream(settings.seed, "mcmc-init")
    state = np.empty((m, 5))
    for c in range(m):
        for _ in range(1000):
            cand = theta0 + settings.init_spread * base * init_gen.standard_normal(5)
            if GaussianModelParams.feasible(cand):
                break
        else:
            cand = theta0
        state[c] = cand
    lp = _logpost(stats, state)

    lo, hi = settings.acceptance
    factor = 2.38 / math.sqrt(5)
    scales = base.copy()
    notes = []
    burn = 0
    acc_rate = math.nan
    # (a) adaptation: pooled per-parameter spreads, global factor toward the band
    for blk in range(settings.max_burn_blocks):
        state, lp, draws, accepted = _advance(stats, state, lp, factor * scales,
                                              settings.block, gens)
        burn += settings.block
        acc_rate = accepted / (m * settings.block)
        if blk >= 1 and lo <= acc_rate <= hi:
            break
        spread = draws[:, settings.block // 2:].reshape(-1, 5).std(axis=0)
        scales = np.where(spread > 0, spread, scales)
        factor *= math.exp(float(np.clip(acc_rate - 0.5 * (lo + hi), -0.5, 0.5)) * 2.0)
    else:
        notes.append("acceptance rate never entered the target band")

    # (b) frozen proposal; burn-in ends once the latter half of the window mixes
    prop_scales = factor * scales
    window = []
    rhat = {}
    for _ in range(settings.max_burn_blocks):
        state, lp, draws, _acc = _advance(stats, state, lp, prop_scales, settings.block, gens)
        window.append(draws)
        chain = np.concatenate(window, axis=1)
        half = chain.shape[1] // 2
        tail = chain[:, half:]
        rhat = {nm: rank_normalized_split_rhat(tail[:, :, k]) for k, nm in enumerate(PARAM_NAMES)}
        if max(rhat.values()) < settings.rhat_threshold:
            burn += half
            kept = [tail]
            break
    else:
        notes.append("burn-in R-hat criterion not met")
        half = chain.shape[1] // 2
        burn += half
        kept = [chain[:, half:]]

    # (c) sampling until the thinned draws reach the effective-sample target
    total_acc = 0
    total_steps = 0
    while True:
        chain = np.concatenate(kept, axis=1)
        n_iter = chain.shape[1]
        tau = {nm: iact_geyer(chain[:, :, k]) for k, nm in enumerate(PARAM_NAMES)}
        thin = max(1, math.ceil(max(tau.values())))
        if m * (n_iter // thin) >= settings.min_effective and n_iter >= 40 * thin:
            break
        if n_iter >= settings.max_samples:
            notes.append("max_samples reached before the effective-sample target")
            break
        # run the projected deficit (at least one block) before re-estimating the IACT
        need = max(math.ceil(settings.min_effective / m) * thin, 40 * thin) - n_iter
        need = min(need, settings.max_samples - n_iter)
        n_blocks = max(1, math.ceil(1.1 * need / settings.block))
        for _ in range(n_blocks):
            state, lp, draws, accepted = _advance(stats, state, lp, prop_scales, settings.block, gens)
            kept.append(draws)
            total_acc += accepted
            total_steps += m * settings.block
    if total_steps == 0:
        # target met by the burn-in tail alone; measure acceptance from that window
        total_acc = int(np.count_nonzero(np.any(np.diff(chain, axis=1) != 0, axis=2)))
        total_steps = m * (chain.shape[1] - 1)

    chain = np.concatenate(kept, axis=1)
    idx = np.arange(thin - 1, chain.shape[1], thin)
    thinned = chain[:, idx]
    rhat = {nm: rank_normalized_split_rhat(chain[:, :, k]) for k, nm in enumerate(PARAM_NAMES)}
    ess = {nm: m * chain.shape[1] / tau[nm] for nm in PARAM_NAMES}
    post = Posterior(thinned, idx + burn, thin)
    summary = sigma_summary(post)
    converged = (max(rhat.values()) < settings.rhat_threshold
                 and post.flat.shape[0] >= settings.min_effective
                 and not any("R-hat" in note for note in notes))
    diag = McmcDiagnostics(
        n_chains=m, burn_in=burn, thin=thin, rhat=rhat, iact=tau, ess=ess,
        n_effective=int(post.flat.shape[0]), acceptance=total_acc / total_steps,
        scales=dict(zip(PARAM_NAMES, prop_scales.tolist())), converged=converged,
        sigma_plus_interval=summary.interval_plus, sigma_minus_interval=summary.interval_minus,
        notes=notes)
    return post, diag


# --------------------------------------------------------------------------
# summaries


@dataclass
class SigmaSummary:
    sigma_plus: float
    sigma_minus: float
    interval_plus: tuple
    interval_minus: tuple
    sigma_mean: float
    interval_mean: tuple

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _central(x, level=0.68):
    lo, hi = np.quantile(x, [0.5 - level / 2, 0.5 + level / 2])
    return float(lo), float(hi)


def sigma_summary(posterior, level: float = 0.68) -> SigmaSummary:
    """Posterior means and central intervals of sigma_+, sigma_- and their average.

    ``posterior`` is a Posterior or an (N, 5) array of parameter draws.
    """
    th = posterior.flat if isinstance(posterior, Posterior) else np.asarray(posterior, float)
    th = th.reshape(-1, 5)
    if th.shape[0] == 0:
        raise ParameterError("empty posterior")
    b = np.hypot(th[:, 3], th[:, 4])
    sp = np.sqrt(th[:, 2] + b)
    sm = np.sqrt(np.clip(th[:, 2] - b, 0.0, None))
    avg = 0.5 * (sp + sm)
    return SigmaSummary(float(sp.mean()), float(sm.mean()), _central(sp, level),
                        _central(sm, level), float(avg.mean()), _central(avg, level))
