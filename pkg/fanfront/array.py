"""
The microphone array model: geometry, far-field steering vectors, the
coherence of a spherically isotropic (diffuse) noise field and superdirective
beamformer weights, plus the beampattern diagnostics built on them.

Conventions used throughout:

 * Positions are in meters, relative to an arbitrary origin; phases are
   referenced to the array centroid.
 * A LookDirection's unit vector u points from the array toward the source,
   so a plane wave from that direction reaches microphone m with delay
   tau_m = -(u . r_m)/c relative to the centroid, and the steering vector is
   v_m = exp(-j omega tau_m).
 * Weight arrays for several bins and directions have shape (D, K, M): look
   direction, bin, microphone. That is the layout the BAT layer uses.
"""

import logging

import numpy as np
import scipy.linalg

from fanfront import static

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
DEFAULT_RADIUS = 0.036
DEFAULT_SIGMA2 = 1e-2
# Condition numbers above this count as singular when solving for weights.
SINGULAR_CONDITION = 1e12


class ArrayError(ValueError):
    pass


class ArrayGeometry(object):
    """
    Microphone positions (an (M, 3) array, meters) and the speed of sound.
    ArrayGeometry.default() builds six microphones equally spaced on a circle
    of diameter 72 mm, starting on the positive x axis, plus one at the
    center (index 6).
    """
    def __init__(self, positions, speed_of_sound=SPEED_OF_SOUND):
        positions = np.array(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3 or positions.shape[0] < 1:
            raise ArrayError("mic positions must be a non-empty list of 3-D "
                    "coordinates, not an array of shape %s" % (positions.shape,))
        if not np.all(np.isfinite(positions)):
            raise ArrayError("mic positions must be finite")
        if not speed_of_sound > 0:
            raise ArrayError("speed of sound must be positive")
        positions.setflags(write=False)
        self.positions = positions
        self.speed_of_sound = float(speed_of_sound)

    @classmethod
    def default(cls, radius=DEFAULT_RADIUS, count=6, center=True,
                speed_of_sound=SPEED_OF_SOUND):
        angles = 2 * np.pi * np.arange(count) / count
        positions = [(radius * np.cos(a), radius * np.sin(a), 0.0) for a in angles]
        if center:
            positions.append((0.0, 0.0, 0.0))
        return cls(positions, speed_of_sound)

    @classmethod
    def linear(cls, spacing, count=2, speed_of_sound=SPEED_OF_SOUND):
        """
        count microphones on the x axis, spacing meters apart, centered on
        the origin.
        """
        offsets = (np.arange(count) - (count - 1) / 2.0) * spacing
        return cls([(x, 0.0, 0.0) for x in offsets], speed_of_sound)

    @property
    def num_mics(self):
        return self.positions.shape[0]

    @property
    def centroid(self):
        return self.positions.mean(axis=0)

    def centered(self):
        """
        Positions relative to the centroid.
        """
        return self.positions - self.centroid

    def distances(self):
        """
        The (M, M) matrix of inter-microphone distances.
        """
        diff = self.positions[:, np.newaxis, :] - self.positions[np.newaxis, :, :]
        return np.sqrt(np.sum(diff ** 2, axis=-1))

    def subset(self, indices):
        """
        A new geometry holding only the given microphones, in that order.
        """
        return ArrayGeometry(self.positions[list(indices)], self.speed_of_sound)

    def perimeter(self, tolerance=1e-9):
        """
        Indices of the microphones that aren't at the centroid.
        """
        radii = np.sqrt(np.sum(self.centered() ** 2, axis=1))
        return [i for i, r in enumerate(radii) if r > tolerance]

    def __eq__(self, other):
        return (isinstance(other, ArrayGeometry)
                and self.speed_of_sound == other.speed_of_sound
                and np.array_equal(self.positions, other.positions))

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((self.positions.tobytes(), self.speed_of_sound))

    def __repr__(self):
        return "ArrayGeometry(%d mics, c=%g)" % (self.num_mics, self.speed_of_sound)


class LookDirection(object):
    """
    A far-field direction. azimuth is normalized into [0, 2 pi); elevation
    is measured up from the array plane.
    """
    def __init__(self, azimuth, elevation=0.0):
        azimuth = float(azimuth) % (2 * np.pi)
        # float modulo can round up to exactly 2 pi for tiny negative inputs
        if azimuth >= 2 * np.pi:
            azimuth = 0.0
        self.azimuth = azimuth
        self.elevation = float(elevation)

    @classmethod
    def degrees(cls, azimuth, elevation=0.0):
        return cls(np.radians(azimuth), np.radians(elevation))

    def unit_vector(self):
        """
        The unit vector pointing from the array toward the source.
        """
        ce = np.cos(self.elevation)
        return np.array([ce * np.cos(self.azimuth), ce * np.sin(self.azimuth),
                         np.sin(self.elevation)])

    def reversed(self):
        return LookDirection(self.azimuth + np.pi, self.elevation)

    def __eq__(self, other):
        return (isinstance(other, LookDirection) and self.azimuth == other.azimuth
                and self.elevation == other.elevation)

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((self.azimuth, self.elevation))

    def __repr__(self):
        return "LookDirection(%.2f deg, %.2f deg)" % (
                np.degrees(self.azimuth), np.degrees(self.elevation))


def look_directions(count=12, start=0.0):
    """
    count look directions in the array plane at equal azimuth spacing,
    starting at start radians. The default is the twelve 30 degree spaced
    directions the BAT layer is designed for.
    """
    return [LookDirection(start + 2 * np.pi * d / count) for d in range(count)]


def delays(geometry, direction):
    """
    Arrival delays in seconds of a plane wave from direction at each
    microphone, relative to the centroid.
    """
    return -geometry.centered().dot(direction.unit_vector()) / geometry.speed_of_sound


def steering_vector(geometry, direction, omega):
    """
    The far-field steering vector for one direction at angular frequency
    omega (rad/s): an M-element complex vector of unit-modulus phases.
    """
    if not omega > 0:
        raise ArrayError("omega must be positive, not %r" % omega)
    return np.exp(-1j * omega * delays(geometry, direction))


def steering_vectors(geometry, directions, omegas):
    """
    Steering vectors for every direction and bin at once, shape (D, K, M).
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    if np.any(omegas <= 0):
        raise ArrayError("omegas must be positive")
    tau = np.array([delays(geometry, d) for d in directions])
    return np.exp(-1j * omegas[np.newaxis, :, np.newaxis] * tau[:, np.newaxis, :])


def diffuse_coherence(geometry, omega):
    """
    The coherence matrix of a spherically isotropic noise field,
    Gamma_ij = sin(omega d_ij/c) / (omega d_ij/c) with Gamma_ii = 1. The
    matrix is real and symmetric, so it is returned with a real dtype.
    """
    if omega < 0:
        raise ArrayError("omega must be non-negative, not %r" % omega)
    # np.sinc(x) is sin(pi x)/(pi x)
    return np.sinc(omega * geometry.distances() / (np.pi * geometry.speed_of_sound))


class SuperdirectiveWeights(object):
    """
    Beamformer weights for a set of look directions and bins. weights has
    shape (D, K, M); directions and omegas record what they were designed
    for.
    """
    def __init__(self, weights, directions, omegas, sigma2):
        self.weights = weights
        self.directions = list(directions)
        self.omegas = np.asarray(omegas, dtype=np.float64)
        self.sigma2 = sigma2

    @property
    def shape(self):
        return self.weights.shape

    def response(self, geometry):
        """
        w^H v at each design direction and bin, shape (D, K). Equal to 1 for
        distortionless weights.
        """
        v = steering_vectors(geometry, self.directions, self.omegas)
        return np.sum(np.conj(self.weights) * v, axis=-1)

    def __repr__(self):
        return "SuperdirectiveWeights(D=%d, K=%d, M=%d, sigma2=%g)" % (
                self.shape + (self.sigma2,))


def superdirective_weights(geometry, directions, omegas, sigma2=DEFAULT_SIGMA2):
    """
    MVDR weights against diffuse noise with diagonal loading sigma2,
    w = (Gamma + sigma2 I)^-1 v / (v^H (Gamma + sigma2 I)^-1 v), for every
    direction and bin.
    """
    if not sigma2 >= 0:
        raise ArrayError("sigma2 must be non-negative, not %r" % sigma2)
    omegas = np.asarray(omegas, dtype=np.float64)
    v = steering_vectors(geometry, directions, omegas)
    weights = np.empty_like(v)
    identity = np.eye(geometry.num_mics)
    for k, omega in enumerate(omegas):
        system = diffuse_coherence(geometry, omega) + sigma2 * identity
        if np.linalg.cond(system) > SINGULAR_CONDITION:
            raise ArrayError("singular coherence at %.1f Hz; increase sigma2"
                    % (omega / (2 * np.pi)))
        x = scipy.linalg.solve(system, v[:, k, :].T, assume_a="sym")
        norm = np.sum(np.conj(v[:, k, :].T) * x, axis=0)
        weights[:, k, :] = (x / norm).T
    logger.debug("designed superdirective weights for %d directions x %d bins "
            "(sigma2=%g)", len(directions), len(omegas), sigma2)
    return SuperdirectiveWeights(weights, directions, omegas, sigma2)


def delay_and_sum_weights(geometry, directions, omegas):
    """
    The delay-and-sum weights v/M, the large-loading limit of the
    superdirective design.
    """
    v = steering_vectors(geometry, directions, omegas)
    return SuperdirectiveWeights(v / geometry.num_mics, directions, omegas, np.inf)


def beampattern(weights, geometry, omega, azimuths, elevation=0.0):
    """
    Power gains |w^H v(theta)|^2 of a single weight vector (M,) at angular
    frequency omega over a grid of azimuths (radians).
    """
    azimuths = np.atleast_1d(np.asarray(azimuths, dtype=np.float64))
    if azimuths.size == 0:
        raise ArrayError("azimuth grid is empty")
    static.check_matches(weights, static.Array("c", (geometry.num_mics,)), "weights")
    v = np.array([steering_vector(geometry, LookDirection(a, elevation), omega)
                  for a in azimuths])
    return np.abs(v.dot(np.conj(weights))) ** 2


def select_diagonal_pair(geometry, tolerance=1e-9):
    """
    Picks the two perimeter microphones whose connecting segment passes
    closest to the centroid. Ties (within tolerance meters) go to the pair
    with the lowest indices.
    """
    if geometry.num_mics < 2:
        raise ArrayError("need at least 2 mics to pick a pair, have %d" % geometry.num_mics)
    perimeter = geometry.perimeter()
    if len(perimeter) < 2:
        raise ArrayError("need at least 2 perimeter mics to pick a pair, have %d"
                % len(perimeter))
    centered = geometry.centered()
    best, best_distance = None, None
    for a in range(len(perimeter)):
        for b in range(a + 1, len(perimeter)):
            i, j = perimeter[a], perimeter[b]
            distance = _segment_distance(centered[i], centered[j])
            if best is None or distance < best_distance - tolerance:
                best, best_distance = (i, j), distance
    return best


def _segment_distance(p, q):
    """
    Distance from the origin to the segment from p to q.
    """
    d = q - p
    length2 = d.dot(d)
    t = 0.0 if length2 == 0 else np.clip(-p.dot(d) / length2, 0.0, 1.0)
    closest = p + t * d
    return np.sqrt(closest.dot(closest))


def cone_angle(geometry, direction):
    """
    The angle between direction and the axis of a two-microphone geometry
    (from mic 0 to mic 1). A pair can't tell apart directions with the same
    cone angle.
    """
    if geometry.num_mics != 2:
        raise ArrayError("cone angles are defined for mic pairs only")
    axis = geometry.positions[1] - geometry.positions[0]
    axis = axis / np.sqrt(axis.dot(axis))
    return np.arccos(np.clip(direction.unit_vector().dot(axis), -1.0, 1.0))


def ordering_violations(geometry, weights, min_separation=np.pi / 2):
    """
    Checks the look-direction ordering of a pair's beamformer bank: a plane
    wave arriving from design direction d should give beam d at least as much
    power as any beam d' whose cone angle differs from d's by min_separation
    or more. Only bins free of spatial aliasing (omega * spacing / c < pi)
    are checked. Returns a list of (bin index, d, d', power ratio) tuples,
    empty when the ordering holds.
    """
    if geometry.num_mics != 2:
        raise ArrayError("the ordering check needs a mic pair, not %d mics"
                % geometry.num_mics)
    spacing = geometry.distances()[0, 1]
    angles = [cone_angle(geometry, d) for d in weights.directions]
    v = steering_vectors(geometry, weights.directions, weights.omegas)
    violations = []
    for k, omega in enumerate(weights.omegas):
        if omega * spacing / geometry.speed_of_sound >= np.pi:
            continue
        # power[d_beam, d_source]
        power = np.abs(np.conj(weights.weights[:, k, :]).dot(v[:, k, :].T)) ** 2
        for d in range(len(angles)):
            for e in range(len(angles)):
                if abs(angles[d] - angles[e]) < min_separation - 1e-12:
                    continue
                if power[e, d] > power[d, d] * (1 + 1e-9):
                    violations.append((k, d, e, power[e, d] / power[d, d]))
    return violations
