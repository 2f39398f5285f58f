"""Parallel transport of tangent elements in the flat space R^d.

Transporting ``psi`` along a coupling ``gamma`` means gluing ``gamma`` with the
joint law ``mu(dx) psi_x(dz)`` and letting every glued triple ``(x, y, z)``
travel on the straight line ``(1-t) x + t y`` while keeping its velocity
label ``z``.  The result is a path ensemble on ``R^{2d}``.  Different gluings
give different transports, which is why the transport is not unique in general.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from . import exact as _exact
from .curves import PathEnsemble, uniform_grid
from .errors import NonRationalWeights, TooLarge
from .measure import DiscreteMeasure
from .tangent import TangentElement
from .transport import Coupling, Gluing, _group_rows, align_left, glue

LAW_TOL_DECIMALS = 12
ROUTE_TOL = 1e-10
TIME0_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TransportResult:
    """A parallel transport of ``source`` along ``route``.

    ``ensemble`` has trajectories in ``R^{2d}``: the first ``d`` coordinates are
    the position, the last ``d`` the (constant) transported velocity.
    """

    source: TangentElement
    route: Coupling | PathEnsemble
    ensemble: PathEnsemble
    arrival: TangentElement
    gluing: Gluing | None = None

    @property
    def dim(self) -> int:
        return self.source.dim

    def law_key(self) -> tuple:
        return self.ensemble.law_key(LAW_TOL_DECIMALS)

    def to_dict(self) -> dict:
        return {"ensemble": self.ensemble.to_dict(), "source": self.source.to_dict(),
                "arrival": self.arrival.to_dict()}


class Uniqueness(enum.Enum):
    UniqueDeterministicTangent = "UniqueDeterministicTangent"
    UniqueDeterministicFlow = "UniqueDeterministicFlow"
    PossiblyNonUnique = "PossiblyNonUnique"


def _default_grid(grid):
    return uniform_grid() if grid is None else np.asarray(grid, dtype=float)


def _from_gluing(psi: TangentElement, gamma: Coupling, g: Gluing, grid) -> TransportResult:
    x, y, z, mass = g.triples()
    t = grid[None, :, None]
    pos = (1.0 - t) * x[:, None, :] + t * y[:, None, :]
    vel = np.broadcast_to(z[:, None, :], pos.shape)
    weights = list(g.exact) if g.exact is not None else mass
    ensemble = PathEnsemble(grid, weights, np.concatenate([pos, vel], axis=2))
    arrival = TangentElement.from_joint(g.project_yz(), psi.p)
    return TransportResult(psi, gamma, ensemble, arrival, g)


def transport_along_coupling(psi: TangentElement, gamma: Coupling, grid=None) -> TransportResult:
    """Canonical transport: conditionally independent gluing of ``gamma`` and ``psi``."""
    gamma = align_left(gamma, psi.base)
    g = glue(gamma, psi.as_joint())
    return _from_gluing(psi, gamma, g, _default_grid(grid))


def transport_along_paths(psi: TangentElement, eta: PathEnsemble) -> TransportResult:
    """Canonical transport along a path ensemble: each trajectory carries a copy of ``psi_x``."""
    base = eta.marginal_at_index(0)
    idx = base.index_in(psi.base)
    if idx is None:
        from .errors import MarginalMismatch

        raise MarginalMismatch("initial marginal of the paths differs from the base measure")
    start = eta.float_positions()[:, 0]
    from scipy.spatial import cKDTree

    _, which = cKDTree(psi.base.atoms).query(start, k=1)
    use_exact = eta.exact is not None and psi.is_exact
    rs, zs, weights = [], [], []
    for r in range(eta.n_paths):
        f = psi.fibers[which[r]]
        for q in range(f.size):
            rs.append(r)
            zs.append(f.atoms[q])
            weights.append(eta.exact[r] * f.exact[q] if use_exact else eta.weights[r] * f.weights[q])
    zs = np.array(zs)
    pos = eta.float_positions()[rs]
    vel = np.broadcast_to(zs[:, None, :], pos.shape)
    grid = np.asarray(eta.grid, dtype=float)
    ensemble = PathEnsemble(grid, weights, np.concatenate([pos, vel], axis=2))
    arrival = TangentElement.from_joint(Coupling.from_pairs(pos[:, -1], zs, weights), psi.p)
    return TransportResult(psi, eta, ensemble, arrival, None)


def _fiber_polytopes(psi: TangentElement, gamma: Coupling):
    joint = psi.as_joint()
    base = psi.base
    by_y = _group_rows(gamma, base.size)
    by_z = _group_rows(joint, base.size)
    plans = []
    for i in range(base.size):
        wi = base.exact[i]
        a = [gamma.exact[k] / wi for k in by_y[i]]
        b = [joint.exact[k] / wi for k in by_z[i]]
        if len(a) * len(b) > _exact.MAX_CELLS:
            raise TooLarge(f"fiber {i}: {len(a)}x{len(b)} gluing polytope exceeds {_exact.MAX_CELLS} cells")
        plans.append(_exact.vertex_plans(a, b))
    return joint, by_y, by_z, plans


def enumerate_transports(psi: TangentElement, gamma: Coupling, limit: int = 1000,
                         grid=None) -> list[TransportResult]:
    """The canonical transport followed by every per-fiber vertex gluing, distinct in law.

    Interior points of the gluing polytopes also give transports; they form a
    continuum and are not listed.  Vertex combinations are visited in
    lexicographic (fiber, vertex) order.
    """
    gamma = align_left(gamma, psi.base)
    if gamma.exact is None or not psi.is_exact:
        raise NonRationalWeights("enumeration needs exact rational weights")
    grid = _default_grid(grid)
    joint, by_y, by_z, plans = _fiber_polytopes(psi, gamma)
    base = psi.base
    first = transport_along_coupling(psi, gamma, grid)
    out = [first]
    seen = {first.law_key()}
    for combo in itertools.product(*plans):
        if len(out) >= limit:
            break
        xi, yi, zi, ex = [], [], [], []
        for i, plan in enumerate(combo):
            for (a, b), v in plan:
                xi.append(i)
                yi.append(gamma.cols[by_y[i][a]])
                zi.append(joint.cols[by_z[i][b]])
                ex.append(base.exact[i] * v)
        g = Gluing(base, gamma.right, joint.right, np.array(xi, dtype=np.int64),
                   np.array(yi, dtype=np.int64), np.array(zi, dtype=np.int64),
                   np.array([float(v) for v in ex]), tuple(ex))
        res = _from_gluing(psi, gamma, g, grid)
        key = res.law_key()
        if key not in seen:
            seen.add(key)
            out.append(res)
    return out


def classify_uniqueness(psi: TangentElement, gamma: Coupling) -> Uniqueness:
    if psi.is_deterministic:
        return Uniqueness.UniqueDeterministicTangent
    gamma = align_left(gamma, psi.base)
    if gamma.is_graph():
        return Uniqueness.UniqueDeterministicFlow
    return Uniqueness.PossiblyNonUnique


def _reversed_grid(grid: np.ndarray) -> np.ndarray:
    rev = grid[-1] - grid[::-1]
    # keep symmetric grids bit-identical so that reversal is an involution
    if np.all(np.abs(rev - grid) <= 4 * np.finfo(float).eps * max(1.0, abs(grid[-1]))):
        return grid
    return rev


def reverse(res: TransportResult) -> TransportResult:
    """Time reversal: transport of the arrival element back along the reversed route."""
    ens = res.ensemble
    grid = _reversed_grid(np.asarray(ens.grid, dtype=float))
    ensemble = PathEnsemble(grid, ens.weight_values(), ens.positions[:, ::-1], None, ens.labels,
                            check=False)
    if isinstance(res.route, Coupling):
        route = res.route.transpose()
    else:
        r = res.route
        route = PathEnsemble(_reversed_grid(np.asarray(r.grid, dtype=float)), r.weight_values(),
                             r.positions[:, ::-1], None, r.labels, check=False)
    g = res.gluing
    if g is not None:
        g = Gluing(g.y, g.x, g.z, g.yi, g.xi, g.zi, g.mass, g.exact)
    return TransportResult(res.arrival, route, ensemble, res.source, g)


def _route_marginal(route, j: int, t: float) -> DiscreteMeasure:
    if isinstance(route, Coupling):
        return route.interpolate(t)
    if len(route.grid) > j and float(route.grid[j]) == t:
        return route.marginal_at_index(j)
    return route.marginal_at(t)


def check_transport(res: TransportResult) -> dict[str, bool]:
    """Check a transport against the defining conditions.

    Keys: ``time0`` (initial (x, z) law equals the source joint law within
    1e-12), ``constant_velocity`` (exact), ``route_marginals`` (position law at
    every grid time equals the route's, within 1e-10), ``arrival`` (final
    position law is the arrival base) and ``moment`` (velocity moment kept).
    """
    d = res.dim
    ens = res.ensemble
    pos = ens.float_positions()
    w = ens.weight_values()
    out = {}
    start = DiscreteMeasure(pos[:, 0], w)
    out["time0"] = start.isclose(res.source.joint_measure(), atol=TIME0_TOL)
    z = ens.positions[:, :, d:]
    out["constant_velocity"] = bool(np.all(z == z[:, :1]))
    ok = True
    for j, t in enumerate(np.asarray(ens.grid, dtype=float)):
        m = DiscreteMeasure(pos[:, j, :d], w)
        if not m.isclose(_route_marginal(res.route, j, float(t)), atol=ROUTE_TOL):
            ok = False
            break
    out["route_marginals"] = ok
    out["arrival"] = DiscreteMeasure(pos[:, -1, :d], w).isclose(res.arrival.base, atol=ROUTE_TOL)
    if res.source.is_exact and res.arrival.is_exact:
        out["moment"] = res.source.velocity_moment_exact() == res.arrival.velocity_moment_exact()
    else:
        a, b = res.source.velocity_moment(2.0), res.arrival.velocity_moment(2.0)
        out["moment"] = abs(a - b) <= 1e-12 * (1.0 + abs(a))
    return out


def path_dependence_check(psi: TangentElement, eta1: PathEnsemble, eta2: PathEnsemble) -> bool:
    """True iff the canonical transports along the endpoint couplings differ in law."""
    grid = uniform_grid()
    r1 = transport_along_coupling(psi, eta1.endpoint_coupling(), grid)
    r2 = transport_along_coupling(psi, eta2.endpoint_coupling(), grid)
    return r1.law_key() != r2.law_key()
