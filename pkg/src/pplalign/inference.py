"""Inference algorithms: likelihood weighting, aligned and unaligned SMC.

Aligned SMC evaluates n particles until every one pauses at the same
(aligned) weight, records their incremental log weights, resamples
systematically, zeroes the weights and resumes, finishing with one last
resampling of the final values.  The homogeneity assumption (all particles
paused, or all finished) is asserted at every barrier; a violation names
the offending particle because it means an unaligned weight slipped
through the analysis.

Unaligned SMC runs the same loop on a program whose every weight pauses:
particles that already finished take part in each resampling with weight
increment zero and are copied verbatim.

The marginal-likelihood estimate is the sum over resampling points of
``log mean exp`` of that barrier's incremental log weights.
"""

import math
import time

from .errors import AlignmentError, InferenceError
from .runtime import Evaluator, Final, RngStream, prepare

# Stream lane reserved for resampling draws (never a particle index).
_RESAMPLE_LANE = 1 << 48


class Particle:
    """One SMC execution: a paused/final outcome plus its random stream."""

    __slots__ = ("state", "stream")

    def __init__(self, state, stream):
        self.state = state
        self.stream = stream

    @property
    def log_weight(self):
        return self.state.log_weight


class SmcResult:
    """Samples and diagnostics of one SMC run."""

    def __init__(self, samples, log_normalizer, resample_count,
                 per_step_log_weights, wall_time, final_weighted=None):
        self.samples = samples
        self.log_normalizer = log_normalizer
        self.resample_count = resample_count
        self.per_step_log_weights = per_step_log_weights
        self.wall_time = wall_time
        self.final_weighted = final_weighted


def log_sum_exp(values):
    m = max(values)
    if m == -math.inf:
        return -math.inf
    if m == math.inf:
        return math.inf
    return m + math.log(sum(math.exp(v - m) for v in values))


def log_normalizer(per_step_log_weights):
    """Marginal-likelihood estimate from per-barrier incremental weights."""
    total = 0.0
    for row in per_step_log_weights:
        total += log_sum_exp(row) - math.log(len(row))
    return total


def systematic_resample(log_weights, rng):
    """Ancestor indices via systematic resampling (one uniform draw).

    Index k is the particle owning position (u + k) / n of the cumulative
    normalized weights; output is nondecreasing and has length n.
    """
    n = len(log_weights)
    m = max(log_weights)
    if m == -math.inf:
        raise InferenceError("all particles have zero likelihood")
    ws = [math.exp(lw - m) for lw in log_weights]
    total = math.fsum(ws)
    u = rng.random()
    ancestors = []
    j = 0
    cum = ws[0]
    last = n - 1
    for k in range(n):
        target = (u + k) * total / n
        while cum <= target and j < last:
            j += 1
            cum += ws[j]
        ancestors.append(j)
    return ancestors


def _initial_particles(program, n, seed, evaluator):
    prepare(program)
    particles = []
    for i in range(n):
        stream = RngStream(seed, i, 0)
        outcome = evaluator.run(program, stream)
        particles.append(Particle(outcome, stream))
    return particles


def run_aligned_smc(program, n, seed, keep_weighted_samples=False,
                    evaluator=None):
    """Aligned SMC on a CPS program whose dynamic weights are dweights."""
    if n < 1:
        raise ValueError("particle count must be >= 1")
    start = time.perf_counter()
    ev = evaluator if evaluator is not None else Evaluator()
    particles = _initial_particles(program, n, seed, ev)
    rows = []
    generation = 0
    while True:
        paused = particles[0].state.is_paused
        for i, p in enumerate(particles):
            if p.state.is_paused != paused:
                raise AlignmentError(
                    i, "population is not homogeneous at a barrier "
                       f"({'paused' if p.state.is_paused else 'finished'} "
                       f"while particle 0 is "
                       f"{'paused' if paused else 'finished'})")
        if not paused:
            break
        weights = [p.state.log_weight for p in particles]
        rows.append(weights)
        ancestors = systematic_resample(
            weights, RngStream(seed, _RESAMPLE_LANE, generation))
        generation += 1
        resumed = []
        for i, a in enumerate(ancestors):
            stream = RngStream(seed, i, generation)
            outcome = ev.resume(particles[a].state.continuation, stream)
            resumed.append(Particle(outcome, stream))
        particles = resumed

    weights = [p.state.log_weight for p in particles]
    rows.append(weights)
    final_weighted = None
    if keep_weighted_samples:
        final_weighted = [(p.state.value, p.state.log_weight)
                          for p in particles]
    ancestors = systematic_resample(
        weights, RngStream(seed, _RESAMPLE_LANE, generation))
    samples = [particles[a].state.value for a in ancestors]
    elapsed = time.perf_counter() - start
    return SmcResult(samples, log_normalizer(rows), len(rows), rows,
                     elapsed, final_weighted)


def run_unaligned_smc(program, n, seed, keep_weighted_samples=False,
                      evaluator=None):
    """SMC on a CPS program where every weight pauses.

    Finished executions keep participating in resampling: they are copied
    verbatim and contribute increment 0 from then on.
    """
    if n < 1:
        raise ValueError("particle count must be >= 1")
    start = time.perf_counter()
    ev = evaluator if evaluator is not None else Evaluator()
    particles = _initial_particles(program, n, seed, ev)
    rows = []
    generation = 0
    final_weighted = None
    while True:
        weights = [p.state.log_weight for p in particles]
        rows.append(weights)
        if keep_weighted_samples and all(not p.state.is_paused
                                         for p in particles):
            final_weighted = [(p.state.value, p.state.log_weight)
                              for p in particles]
        ancestors = systematic_resample(
            weights, RngStream(seed, _RESAMPLE_LANE, generation))
        generation += 1
        chosen = [particles[a] for a in ancestors]
        if all(not p.state.is_paused for p in chosen):
            particles = [Particle(Final(p.state.value, 0.0), p.stream)
                         for p in chosen]
            break
        advanced = []
        for i, p in enumerate(chosen):
            if p.state.is_paused:
                stream = RngStream(seed, i, generation)
                outcome = ev.resume(p.state.continuation, stream)
                advanced.append(Particle(outcome, stream))
            else:
                advanced.append(Particle(Final(p.state.value, 0.0),
                                         p.stream))
        particles = advanced

    samples = [p.state.value for p in particles]
    elapsed = time.perf_counter() - start
    return SmcResult(samples, log_normalizer(rows), len(rows), rows,
                     elapsed, final_weighted)


def run_likelihood_weighting(program, n, seed, evaluator=None):
    """n independent weighted executions of a direct (non-CPS) program."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    prepare(program)
    ev = evaluator if evaluator is not None else Evaluator()
    out = []
    for i in range(n):
        outcome = ev.run(program, RngStream(seed, i, 0))
        if outcome.is_paused:
            raise InferenceError(
                "likelihood weighting requires a direct-style program; "
                "this one paused at a weight")
        out.append((outcome.value, outcome.log_weight))
    return out


def lw_log_normalizer(weighted_samples):
    """log mean exp of the sample weights."""
    return (log_sum_exp([w for _, w in weighted_samples])
            - math.log(len(weighted_samples)))
