"""Counter-based Gaussian noise keyed by ``(seed, stream_id, step)``.

Each step gets its own Philox generator keyed by ``(seed, step)``; stream
``s`` reads row ``s`` of the standard normal array drawn from it. Row ``s``
only depends on the rows before it, so a block is a pure function of
``(seed, stream_id, step, width)``: it does not depend on how many streams a
caller asks for, on the order steps are visited, or on the number of workers.

Stream ids inside a particle run are laid out replicate-major: source ``i``
(0 for the parameter, ``1..N`` for the particles) of replicate ``r`` is stream
``r * (N + 1) + i``.
"""

import numpy as np

from .validation import check_positive_int

_U64 = 2**64
# key reserved for initial-condition draws; steps never reach it
INIT_STEP = _U64 - 1


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def normal_blocks(seed, step, n_streams, width):
    """Standard normal array of shape ``(n_streams, width)`` for one step."""
    seed = _check_seed(seed)
    step = int(step)
    if not 0 <= step < _U64:
        raise ValueError(f"step out of range: {step}")
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, step], dtype=np.uint64)))
    return gen.standard_normal((n_streams, width))


class NoiseStream:
    """A single noise source; ``block(step)`` is reproducible in isolation."""

    def __init__(self, seed, stream_id=0, width=1):
        self.seed = _check_seed(seed)
        self.stream_id = check_positive_int(stream_id, "stream_id", allow_zero=True)
        self.width = check_positive_int(width, "width")

    def block(self, step):
        return normal_blocks(self.seed, step, self.stream_id + 1, self.width)[-1]

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream_id={self.stream_id}, width={self.width})"


class NoiseStreams:
    """All noise sources of a (possibly replicated) particle system.

    ``draw(step)`` returns ``(xi_theta, xi_cloud)`` with shapes
    ``(replicates, d_theta)`` and ``(replicates, N, d_x)``.

    ``particle_order`` relabels sources: particle row ``i`` is driven by
    source ``particle_order[i] + 1``. Used to check exchangeability.
    """

    def __init__(self, seed, n_particles, d_theta, d_x, replicates=1, particle_order=None):
        self.seed = _check_seed(seed)
        self.n_particles = check_positive_int(n_particles, "n_particles")
        self.d_theta = check_positive_int(d_theta, "d_theta")
        self.d_x = check_positive_int(d_x, "d_x")
        self.replicates = check_positive_int(replicates, "replicates")
        self.width = max(self.d_theta, self.d_x)
        if particle_order is None:
            self._rows = None
        else:
            order = np.asarray(particle_order, dtype=np.intp)
            if sorted(order.tolist()) != list(range(self.n_particles)):
                raise ValueError("particle_order must be a permutation of range(N)")
            self._rows = order + 1

    def stream_id(self, replicate, source):
        return replicate * (self.n_particles + 1) + source

    def stream(self, replicate, source):
        return NoiseStream(self.seed, self.stream_id(replicate, source), self.width)

    def _split(self, blocks):
        blocks = blocks.reshape(self.replicates, self.n_particles + 1, self.width)
        xi_theta = blocks[:, 0, : self.d_theta]
        if self._rows is None:
            xi_cloud = blocks[:, 1:, : self.d_x]
        else:
            xi_cloud = blocks[:, self._rows, : self.d_x]
        return xi_theta, xi_cloud

    def draw(self, step):
        n = self.replicates * (self.n_particles + 1)
        return self._split(normal_blocks(self.seed, step, n, self.width))

    def draw_init(self):
        """Standard normals used to sample a Gaussian initial condition."""
        n = self.replicates * (self.n_particles + 1)
        return self._split(normal_blocks(self.seed, INIT_STEP, n, self.width))


class ZeroNoise:
    """Drop-in replacement for :class:`NoiseStreams` that injects no noise."""

    def __init__(self, n_particles, d_theta, d_x, replicates=1):
        self.n_particles = n_particles
        self.d_theta = d_theta
        self.d_x = d_x
        self.replicates = replicates

    def draw(self, step):
        return (
            np.zeros((self.replicates, self.d_theta)),
            np.zeros((self.replicates, self.n_particles, self.d_x)),
        )

    def draw_init(self):
        return self.draw(0)
