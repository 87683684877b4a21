"""Sequential Monte Carlo sampler for fiducial particles.

Each particle carries realized latent normals for every random-effect
level observed so far, a log weight and the polyhedron ``Q_t`` of
parameter values consistent with the first *t* interval observations.
``run`` first reorders the observations (see ``initialization_order``)
and then consumes them in that order:

1. The first ``p + r`` observations draw every latent value from a
   standard normal. Particles whose polyhedron becomes empty are
   re-initialized (see ``initialize_particle``).
2. Later observations draw the new error latent from a standard Cauchy
   truncated to the range that keeps ``Q_t`` nonempty, and update the
   weight accordingly.
3. Whenever the effective sample size drops below the threshold the
   particles are resampled and then altered, one random effect at a
   time, to break up duplicates.

All randomness is drawn from keyed streams, so the result depends only
on the inputs and the seed, not on the thread count.

"""

__all__ = [
    "Particle",
    "ParticleSystem",
    "ResampleEvent",
    "AlterationMove",
    "init_particles",
    "initialization_order",
    "observation_row",
    "latent_sums",
    "build_constraints",
    "truncation_bounds",
    "truncated_cauchy_ppf",
    "sample_truncated_cauchy",
    "cauchy_mass",
    "log_increment",
    "propagate",
    "initialize_particle",
    "ess",
    "resample_multinomial",
    "propose_alteration",
    "alteration",
    "run",
]

import copy
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

from .linalg import (
    ConstraintSet,
    DegenerateDenominator,
    InfeasibleConstraints,
    NullBasis,
    feasible,
    fractional_extreme,
    null_space_basis,
)
from .model import IntervalDataset, ModelSpec, require_valid
from .streams import Purpose, RngStream, as_stream

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class InferenceFailure(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class EmptySupport(ValueError):
    pass


@dataclass(eq=False)
class Particle:
    z: list[np.ndarray]
    constraints: ConstraintSet
    log_weight: float = 0.0
    alive: bool = True
    # Truncation range used at each consumed observation
    bounds: list[tuple[float, float]] = field(default_factory=list)
    rejected_moves: int = 0

    @classmethod
    def fresh(cls, model: ModelSpec) -> "Particle":
        return cls(
            z=[np.full(effect.levels, np.nan) for effect in model.effects],
            constraints=ConstraintSet.empty(model.dim, model.sigma_indices),
        )

    def copy(self) -> "Particle":
        return copy.deepcopy(self)

    def kill(self):
        self.alive = False
        self.log_weight = -np.inf


@dataclass(frozen=True)
class ResampleEvent:
    step: int
    ess: float


@dataclass(eq=False)
class ParticleSystem:
    model: ModelSpec
    particles: list[Particle]
    stream: RngStream
    t: int = 0
    history: list[ResampleEvent] = field(default_factory=list)
    rejected_alterations: int = 0
    # Intervals in consumption order, and their original row indices
    data: IntervalDataset | None = None
    order: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.particles)

    @property
    def alive_count(self) -> int:
        return sum(particle.alive for particle in self.particles)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([particle.log_weight for particle in self.particles])

    def normalized_weights(self) -> np.ndarray:
        """Weights summing to one; dead particles get zero."""
        log_weights = self.log_weights
        alive = np.isfinite(log_weights)
        if not np.any(alive):
            raise InferenceFailure(
                f"All {self.N} particles are dead after observation {self.t}.",
                step=self.t,
            )
        weights = np.zeros(self.N)
        weights[alive] = np.exp(log_weights[alive] - np.max(log_weights[alive]))
        return weights / np.sum(weights)


def init_particles(
    model: ModelSpec, N: int, seed: int | RngStream = 0
) -> ParticleSystem:
    """An empty system of *N* equally weighted particles."""
    if N < 2:
        raise ConfigurationError(f"At least 2 particles are needed, got {N}.")
    return ParticleSystem(
        model=model,
        particles=[Particle.fresh(model) for _ in range(N)],
        stream=as_stream(seed),
    )


def latent_sums(model: ModelSpec, z: Sequence[np.ndarray], row: int) -> np.ndarray:
    """``s_i = sum_j v_{i,j,row} z_{i,j}`` for every random effect."""
    return np.array(
        [
            effect.design[row] @ np.nan_to_num(z_i, nan=0.0)
            for effect, z_i in zip(model.effects, z)
        ]
    )


def observation_row(model: ModelSpec, z: Sequence[np.ndarray], row: int) -> np.ndarray:
    """Coefficients of ``(beta, sigma)`` in observation *row*."""
    return np.concatenate([model.X[row], latent_sums(model, z, row)])


def initialization_order(model: ModelSpec) -> np.ndarray:
    """Row order whose first ``p + r`` rows determine every parameter.

    The leading rows are the first ``p + r`` pivots of a pivoted QR of
    the observation coefficients under one generic latent draw, so they
    never share all of their random-effect levels. The remaining rows
    keep their original order.

    """
    rng = RngStream(0).child(Purpose.ORDER).generator()
    z = [rng.standard_normal(effect.levels) for effect in model.effects]
    coeffs = np.array([observation_row(model, z, row) for row in range(model.n)])
    _, pivots = qr(coeffs.T, mode="r", pivoting=True)
    head = np.sort(pivots[: model.dim])
    return np.concatenate([head, np.setdiff1d(np.arange(model.n), head)])


def build_constraints(
    model: ModelSpec, data: IntervalDataset, z: Sequence[np.ndarray], t: int
) -> ConstraintSet:
    """The polyhedron ``Q_t`` for the first *t* observations."""
    rows = (
        (observation_row(model, z, row), data[row].a, data[row].b)
        for row in range(t)
    )
    return ConstraintSet.from_rows(model.dim, rows, nonneg=model.sigma_indices)


def truncation_bounds(
    model: ModelSpec, data: IntervalDataset, particle: Particle, row: int
) -> tuple[float, float]:
    """Range ``(m, M)`` of the error latent for observation *row*.

    The nonerror latents for *row* must already be drawn into the
    particle.

    """
    coeffs = -observation_row(model, particle.z, row)
    coeffs[-1] = 0.0
    obs = data[row]
    den_index = model.dim - 1
    m = fractional_extreme(particle.constraints, (coeffs, obs.a), den_index, "min")
    M = fractional_extreme(particle.constraints, (coeffs, obs.b), den_index, "max")
    return m, M


def _cauchy_cdf(x):
    # arctan(1/x) keeps relative precision for large negative x
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        left = -np.arctan(1 / x) / np.pi
    return np.where(x < 0, left, 0.5 + np.arctan(x) / np.pi)


def _cauchy_ppf(F):
    F = np.asarray(F, dtype=float)
    with np.errstate(divide="ignore"):
        left = -1 / np.tan(np.pi * F)
    return np.where(F <= 0.5, left, np.tan(np.pi * (F - 0.5)))


def truncated_cauchy_ppf(u, m, M):
    """Inverse CDF of the standard Cauchy truncated to ``(m, M)``.

    Supports lying right of zero are reflected to the left tail, where
    the CDF keeps its precision.
    """
    u, m, M = np.broadcast_arrays(
        np.asarray(u, dtype=float), np.asarray(m, dtype=float), np.asarray(M, dtype=float)
    )
    if not np.all(m < M):
        raise EmptySupport(f"Truncation range ({m}, {M}) is empty.")
    flip = m > 0
    lo = np.where(flip, -M, m)
    hi = np.where(flip, -m, M)
    q = np.where(flip, 1 - u, u)
    F_lo = _cauchy_cdf(lo)
    F_hi = _cauchy_cdf(hi)
    z = _cauchy_ppf(F_lo + q * (F_hi - F_lo))
    z = np.where(flip, -z, z)
    z = np.clip(z, np.nextafter(m, np.inf), np.nextafter(M, -np.inf))
    return z[()]


def sample_truncated_cauchy(rng: np.random.Generator, m: float, M: float) -> float:
    u = rng.uniform(np.finfo(float).tiny, 1.0)
    return float(truncated_cauchy_ppf(u, m, M))


def cauchy_mass(m, M):
    """Standard Cauchy probability of ``(m, M)``."""
    m = np.asarray(m, dtype=float)
    M = np.asarray(M, dtype=float)
    flip = m > 0
    lo = np.where(flip, -M, m)
    hi = np.where(flip, -m, M)
    return (_cauchy_cdf(hi) - _cauchy_cdf(lo))[()]


def log_increment(z, m, M):
    """Log of the weight update ``exp(-z²/2)·(1 + z²)·(F(M) - F(m))``."""
    z = np.asarray(z, dtype=float)
    return (-(z**2) / 2 + np.log1p(z**2) + np.log(cauchy_mass(m, M)))[()]


def propagate(
    model: ModelSpec,
    data: IntervalDataset,
    particle: Particle,
    row: int,
    stream: RngStream,
) -> Particle:
    """Consume observation *row* (0-based), updating *particle* in place."""
    if not particle.alive:
        return particle
    rng = stream.generator()
    error = model.r - 1
    for effect in range(error):
        new = model.new_levels(effect, row)
        particle.z[effect][new] = rng.standard_normal(len(new))
    if row < model.dim:
        z_err = rng.standard_normal()
        bounds = (-np.inf, np.inf)
        increment = 0.0
    else:
        try:
            bounds = truncation_bounds(model, data, particle, row)
            z_err = sample_truncated_cauchy(rng, *bounds)
        except (InfeasibleConstraints, DegenerateDenominator, EmptySupport) as exc:
            log.debug("Particle dies at observation %d: %s", row + 1, exc)
            particle.kill()
            return particle
        increment = float(log_increment(z_err, *bounds))
    particle.z[error][row] = z_err
    obs = data[row]
    particle.constraints = particle.constraints.append(
        observation_row(model, particle.z, row), obs.a, obs.b
    )
    particle.bounds.append(bounds)
    particle.log_weight += increment
    if not feasible(particle.constraints):
        particle.kill()
    return particle


def initialize_particle(
    model: ModelSpec,
    data: IntervalDataset,
    index: int,
    stream: RngStream,
    init_retries: int = 200,
) -> Particle:
    """Run the first ``p + r`` observations for particle *index*.

    A particle whose polyhedron turns out empty is drawn again from
    scratch, up to *init_retries* times, which samples the latent
    values conditionally on a nonempty polyhedron. With
    ``init_retries=0`` a failed particle stays dead.

    """
    for attempt in range(init_retries + 1):
        particle = Particle.fresh(model)
        for row in range(model.dim):
            key = (Purpose.PROPAGATE, index, row, attempt)
            propagate(model, data, particle, row, stream.child(*key))
            if not particle.alive:
                break
        else:
            return particle
    return particle


def ess(system: ParticleSystem) -> float:
    """Effective sample size ``1 / sum(w²)`` of the normalized weights."""
    weights = system.normalized_weights()
    return float(1 / np.sum(weights**2))


def resample_multinomial(system: ParticleSystem, stream: RngStream) -> np.ndarray:
    """Replace the particles by *N* weighted draws, all equally weighted.

    Returns the (0-based) ancestor indices.
    """
    weights = system.normalized_weights()
    rng = stream.generator()
    ancestors = rng.choice(system.N, size=system.N, p=weights)
    particles = [system.particles[idx].copy() for idx in ancestors]
    for particle in particles:
        particle.log_weight = 0.0
    system.particles = particles
    return ancestors


@dataclass(frozen=True, eq=False)
class AlterationMove:
    """A proposed redraw of one effect's latent vector.

    The latent vector of the seen levels is split as ``eta2·c + d·tau``
    and redrawn as ``eta2·c_new + d_new·tau``.
    """

    effect: int
    levels: np.ndarray
    basis: NullBasis
    c: np.ndarray
    d: float
    tau: np.ndarray
    c_new: np.ndarray
    d_new: float

    @property
    def ratio(self) -> float:
        if self.d == self.d_new:
            return 1.0
        return self.d / self.d_new

    def latent(self) -> np.ndarray:
        return self.basis.eta2 @ self.c_new + self.d_new * self.tau

    def map_point(self, x: Sequence[float], p: int) -> np.ndarray:
        """Carry a point of the old polyhedron to the altered one."""
        x = np.array(x, dtype=float)
        sigma_e = x[p + self.effect]
        others = [idx for idx in range(len(x)) if idx != p + self.effect]
        shift = self.basis.eta1 @ (self.c_new * self.ratio - self.c)
        x[others] = x[others] - sigma_e * shift
        x[p + self.effect] = sigma_e * self.ratio
        return x


def propose_alteration(
    model: ModelSpec,
    particle: Particle,
    effect: int,
    t: int,
    rng: np.random.Generator,
) -> AlterationMove | None:
    """Draw a redraw of *effect*'s latent values after *t* observations.

    Returns ``None`` when there is no direction in which to move.
    """
    levels = model.seen_levels(effect, t)
    if len(levels) == 0:
        return None
    others = [idx for idx in range(model.r) if idx != effect]
    sums = [
        model.effects[idx].design[:t] @ np.nan_to_num(particle.z[idx], nan=0.0)
        for idx in others
    ]
    Xp = np.column_stack([model.X[:t], *sums])
    V = model.effects[effect].design[:t][:, levels]
    basis = null_space_basis(Xp, V)
    if basis.d == 0:
        return None
    Ze = particle.z[effect][levels]
    c = basis.eta2.T @ Ze
    resid = Ze - basis.eta2 @ c
    d = float(np.linalg.norm(resid))
    df = len(Ze) - basis.d
    c_new = rng.standard_normal(basis.d)
    d_new = float(np.sqrt(rng.chisquare(df))) if df > 0 else 0.0
    if df == 0:
        d = 0.0
        tau = np.zeros(len(Ze))
    elif d <= np.finfo(float).eps * max(np.linalg.norm(Ze), 1.0):
        # Latent vector inside span(eta2): any orthogonal direction will do
        direction = rng.standard_normal(len(Ze))
        direction -= basis.eta2 @ (basis.eta2.T @ direction)
        tau = direction / np.linalg.norm(direction)
    else:
        tau = resid / d
    return AlterationMove(effect, levels, basis, c, d, tau, c_new, d_new)


def alteration(
    model: ModelSpec,
    data: IntervalDataset,
    particle: Particle,
    effect: int,
    t: int,
    stream: RngStream,
) -> Particle:
    """Alter one effect of *particle*, keeping it if the move is infeasible."""
    move = propose_alteration(model, particle, effect, t, stream.generator())
    if move is None:
        return particle
    z = [z_i.copy() for z_i in particle.z]
    z[effect][move.levels] = move.latent()
    constraints = build_constraints(model, data, z, t)
    if not feasible(constraints):
        log.debug("Rejected alteration of effect %d at step %d", effect, t)
        particle.rejected_moves += 1
        return particle
    particle.z = z
    particle.constraints = constraints
    return particle


def _resample_and_alter(
    system: ParticleSystem,
    data: IntervalDataset,
    pool: ThreadPoolExecutor,
    threshold: float,
):
    value = ess(system)
    log.debug("ESS after observation %d: %.2f", system.t, value)
    if not value < threshold:
        return
    resample_multinomial(system, system.stream.child(Purpose.RESAMPLE, system.t))
    system.history.append(ResampleEvent(system.t, value))
    log.info("Resampled at observation %d (ESS %.2f)", system.t, value)
    model = system.model
    before = sum(particle.rejected_moves for particle in system.particles)

    def alter(index: int) -> Particle:
        particle = system.particles[index]
        for effect in range(model.r):
            key = (Purpose.ALTER, index, system.t, effect)
            alteration(model, data, particle, effect, system.t, system.stream.child(*key))
        return particle

    system.particles = list(pool.map(alter, range(system.N)))
    after = sum(particle.rejected_moves for particle in system.particles)
    system.rejected_alterations += after - before


def run(
    model: ModelSpec,
    data: IntervalDataset,
    particles: int = 1000,
    seed: int | RngStream = 0,
    threshold: float | None = None,
    threads: int = 1,
    init_retries: int = 200,
    reorder: bool = True,
) -> ParticleSystem:
    """Run the sampler over every observation of *data*.

    Parameters
    ==========
    model
      A valid model with ``n >= p + r``.
    data
      One interval per model row.
    particles
      Number of particles, at least 2.
    seed
      Run seed, or a stream to derive all draws from.
    threshold
      Resample when the effective sample size falls below this;
      defaults to half the particle count.
    threads
      Worker threads for propagation and alteration.
    init_retries
      Redraws allowed per particle during initialization.
    reorder
      Consume the rows in ``initialization_order(model)`` rather than
      as given.

    Returns
    =======
    system
      The final weighted particle system. Its ``model`` and ``data``
      are in consumption order, and ``order`` maps them back to the
      input rows.

    """
    require_valid(model)
    if len(data) != model.n:
        raise ConfigurationError(
            f"Model has {model.n} rows but data has {len(data)} intervals."
        )
    if model.n < model.dim:
        raise ConfigurationError(
            f"Need at least p + r = {model.dim} observations, got {model.n}."
        )
    if threshold is None:
        threshold = particles / 2
    if not 0 < threshold <= particles:
        raise ConfigurationError(f"Threshold must lie in (0, N], got {threshold}.")
    if init_retries < 0:
        raise ConfigurationError(f"init_retries must be >= 0, got {init_retries}.")
    order = initialization_order(model) if reorder else np.arange(model.n)
    model = model.take_rows(order)
    data = data.take(order)
    system = init_particles(model, particles, seed)
    system.data = data
    system.order = order
    stream = system.stream
    log.info(
        "Running %d particles over %d observations (%d parameters)",
        particles,
        model.n,
        model.dim,
    )
    with ThreadPoolExecutor(max_workers=max(int(threads), 1)) as pool:
        system.particles = list(
            pool.map(
                lambda idx: initialize_particle(model, data, idx, stream, init_retries),
                range(particles),
            )
        )
        system.t = model.dim
        dead = particles - system.alive_count
        if 2 * dead > particles:
            raise InferenceFailure(
                f"{dead} of {particles} particles died during initialization; "
                "widen the intervals or increase the particle count.",
                step=system.t,
            )
        _resample_and_alter(system, data, pool, threshold)
        for row in range(model.dim, model.n):

            def step(idx: int) -> Particle:
                key = (Purpose.PROPAGATE, idx, row, 0)
                return propagate(
                    model, data, system.particles[idx], row, stream.child(*key)
                )

            system.particles = list(pool.map(step, range(particles)))
            system.t = row + 1
            if system.alive_count == 0:
                raise InferenceFailure(
                    f"All {particles} particles died at observation {system.t}.",
                    step=system.t,
                )
            _resample_and_alter(system, data, pool, threshold)
    log.info(
        "Finished with %d live particles, %d resampling events",
        system.alive_count,
        len(system.history),
    )
    return system
