"""Parametrizations of the boundary contact conductance on extended electrodes.

Three variants are supported, all nonnegative by construction and identically
zero between electrodes:

``cem``
    One squared level per electrode, constant on a fixed support sub-interval
    of the extended electrode (the classic piecewise constant contact).
``pl``
    Squared nodal values interpolated piecewise-linearly on the electrode's
    boundary nodes, pinned to zero at both endpoint nodes.
``ph``
    One hat function per electrode with height ``h`` (the net conductance),
    normalized center ``l`` and normalized width ``w``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import ExtendedElectrode, MeshError, TriMesh

__all__ = [
    "ContactParams",
    "ContactSummary",
    "ZetaDensity",
    "eval_zeta",
    "clamp_ph",
    "edge_zeta_integrals",
    "dzeta_dtheta",
    "summarize",
    "boundary_quadrature",
    "initial_contacts",
    "ph_prior_mean",
    "write_contacts",
    "read_contacts",
    "PH_FLOOR",
]

# Floor applied to nonpositive PH height/width proposals during clamping.
PH_FLOOR = 1e-8

_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class _PLLayout:
    electrode: int  # 0-based position in the electrode list
    t_nodes: np.ndarray  # normalized node positions, endpoints included
    node_ids: np.ndarray
    offset: int  # start of this electrode's free parameters in theta

    @property
    def n_free(self) -> int:
        return len(self.t_nodes) - 2


class ContactParams:
    """Immutable parameter vector for one contact-conductance variant."""

    __slots__ = ("variant", "theta", "n_electrodes", "support", "pl_layouts")

    def __init__(self, variant, theta, n_electrodes, support=None, pl_layouts=None):
        if variant not in ("cem", "pl", "ph"):
            raise ValueError(f"unknown contact variant {variant!r}")
        theta = np.asarray(theta, dtype=float).copy()
        theta.setflags(write=False)
        self.variant = variant
        self.theta = theta
        self.n_electrodes = int(n_electrodes)
        self.support = support
        self.pl_layouts = pl_layouts

    @classmethod
    def cem(cls, theta, support=None) -> "ContactParams":
        """Piecewise constant contacts; ``support`` gives per-electrode
        (t_lo, t_hi) sub-intervals in normalized coordinates (default full)."""
        theta = np.asarray(theta, dtype=float)
        M = len(theta)
        if support is None:
            support = np.tile([0.0, 1.0], (M, 1))
        support = np.asarray(support, dtype=float).copy()
        if support.shape != (M, 2):
            raise ValueError("support must be (M, 2)")
        if np.any(support[:, 0] < 0) or np.any(support[:, 1] > 1) or np.any(
            support[:, 0] >= support[:, 1]
        ):
            raise ValueError("support intervals must satisfy 0 <= lo < hi <= 1")
        support.setflags(write=False)
        return cls("cem", theta, M, support=support)

    @classmethod
    def pl(cls, theta, electrodes) -> "ContactParams":
        """Squared nodal values at interior electrode nodes (endpoints fixed 0)."""
        layouts = []
        offset = 0
        for pos, elec in enumerate(electrodes):
            t_nodes = np.asarray(elec.node_t, dtype=float)
            if len(t_nodes) < 3:
                raise MeshError(
                    f"electrode {elec.index} has no interior node for PL contacts"
                )
            layouts.append(
                _PLLayout(
                    electrode=pos,
                    t_nodes=t_nodes,
                    node_ids=np.asarray(elec.node_ids),
                    offset=offset,
                )
            )
            offset += len(t_nodes) - 2
        theta = np.asarray(theta, dtype=float)
        if len(theta) != offset:
            raise ValueError(f"PL expects {offset} parameters, got {len(theta)}")
        return cls("pl", theta, len(layouts), pl_layouts=tuple(layouts))

    @classmethod
    def ph(cls, h, l, w) -> "ContactParams":
        """Hat contacts from per-electrode height/center/width arrays."""
        h, l, w = (np.asarray(v, dtype=float) for v in (h, l, w))
        if not (len(h) == len(l) == len(w)):
            raise ValueError("h, l, w must have equal length")
        return cls("ph", np.concatenate([h, l, w]), len(h))

    @property
    def n_params(self) -> int:
        return len(self.theta)

    def with_theta(self, theta) -> "ContactParams":
        theta = np.asarray(theta, dtype=float)
        if len(theta) != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {len(theta)}")
        return ContactParams(
            self.variant,
            theta,
            self.n_electrodes,
            support=self.support,
            pl_layouts=self.pl_layouts,
        )

    def ph_triplet(self, m: int) -> tuple[float, float, float]:
        M = self.n_electrodes
        return (
            float(self.theta[m]),
            float(self.theta[M + m]),
            float(self.theta[2 * M + m]),
        )

    def fingerprint_bytes(self) -> bytes:
        parts = [self.variant.encode(), self.theta.tobytes()]
        if self.support is not None:
            parts.append(self.support.tobytes())
        return b"|".join(parts)

    def __repr__(self):
        return f"ContactParams({self.variant}, {self.n_params} params)"


@dataclass(frozen=True)
class ZetaDensity:
    """A single-parameter derivative of the contact conductance.

    Supported on one electrode; ``fn`` evaluates the (signed) density at
    normalized positions.
    """

    electrode: int  # 0-based
    fn: Callable[[np.ndarray], np.ndarray]


def _ph_hat(t, h, l, w):
    t = np.asarray(t, dtype=float)
    lo, hi = l - 0.5 * w, l + 0.5 * w
    rising = (t > lo) & (t < l)
    falling = (t >= l) & (t < hi)
    out = np.zeros_like(t)
    out[rising] = 2.0 * h * (-2.0 * l + w + 2.0 * t[rising]) / w**2
    out[falling] = 2.0 * h * (2.0 * l + w - 2.0 * t[falling]) / w**2
    return out


def _pl_nodal_values(params: ContactParams, layout: _PLLayout) -> np.ndarray:
    z = np.zeros(len(layout.t_nodes))
    z[1:-1] = params.theta[layout.offset : layout.offset + layout.n_free] ** 2
    return z


def eval_zeta(params: ContactParams, electrode: ExtendedElectrode, t):
    """Evaluate the contact conductance density at normalized positions.

    Returns values in S/m^2; zero outside the variant's support.
    """
    t = np.asarray(t, dtype=float)
    m = electrode.index - 1
    if params.variant == "cem":
        lo, hi = params.support[m]
        return np.where((t >= lo) & (t <= hi), params.theta[m] ** 2, 0.0)
    if params.variant == "ph":
        h, l, w = params.ph_triplet(m)
        return _ph_hat(t, h, l, w)
    layout = params.pl_layouts[m]
    z = _pl_nodal_values(params, layout)
    return np.interp(t, layout.t_nodes, z, left=0.0, right=0.0)


def clamp_ph(params: ContactParams) -> ContactParams:
    """Project hat parameters into the feasible set.

    Nonpositive heights/widths are floored at ``PH_FLOOR``; then, in order:
    widths above one are cut to one, and centers are moved so the hat support
    stays inside the electrode.
    """
    if params.variant != "ph":
        raise ValueError("clamp_ph expects the ph variant")
    M = params.n_electrodes
    h = np.maximum(params.theta[:M], PH_FLOOR)
    l = params.theta[M : 2 * M].copy()
    w = np.maximum(params.theta[2 * M :], PH_FLOOR)
    w = np.minimum(w, 1.0)
    low = l - 0.5 * w < 0.0
    l[low] = 0.5 * w[low]
    high = l + 0.5 * w > 1.0
    l[high] = 1.0 - 0.5 * w[high]
    return params.with_theta(np.concatenate([h, l, w]))


def _breakpoints_t(params: ContactParams, m: int) -> np.ndarray:
    """Interior breakpoints of zeta (and its parameter derivatives) on
    electrode ``m``, in normalized coordinates."""
    if params.variant == "cem":
        pts = params.support[m]
    elif params.variant == "ph":
        h, l, w = params.ph_triplet(m)
        pts = np.array([l - 0.5 * w, l, l + 0.5 * w])
    else:
        # PL kinks sit at boundary nodes, which are already edge endpoints.
        pts = np.empty(0)
    return pts[(pts > 0.0) & (pts < 1.0)]


def dzeta_dtheta(params: ContactParams, k: int) -> ZetaDensity:
    """Derivative of the conductance density with respect to parameter ``k``.

    The returned density is the true derivative of :func:`eval_zeta` (it may
    be negative); sensitivity assembly adds the adjoint formula's sign.
    """
    if not 0 <= k < params.n_params:
        raise IndexError(f"parameter index {k} out of range")
    M = params.n_electrodes

    if params.variant == "cem":
        lo, hi = params.support[k]
        scale = 2.0 * params.theta[k]

        def fn(t, lo=lo, hi=hi, scale=scale):
            t = np.asarray(t, dtype=float)
            return np.where((t >= lo) & (t <= hi), scale, 0.0)

        return ZetaDensity(electrode=k, fn=fn)

    if params.variant == "pl":
        for layout in params.pl_layouts:
            if layout.offset <= k < layout.offset + layout.n_free:
                local = k - layout.offset + 1
                t_nodes = layout.t_nodes
                scale = 2.0 * params.theta[k]

                def fn(t, t_nodes=t_nodes, local=local, scale=scale):
                    hat = np.zeros(len(t_nodes))
                    hat[local] = 1.0
                    return scale * np.interp(
                        np.asarray(t, dtype=float), t_nodes, hat, left=0.0, right=0.0
                    )

                return ZetaDensity(electrode=layout.electrode, fn=fn)
        raise IndexError(f"parameter index {k} out of range")

    family, m = divmod(k, M)
    h, l, w = params.ph_triplet(m)
    lo, hi = l - 0.5 * w, l + 0.5 * w

    def fn(t, family=family, h=h, l=l, w=w, lo=lo, hi=hi):
        t = np.asarray(t, dtype=float)
        rising = (t > lo) & (t < l)
        falling = (t >= l) & (t < hi)
        out = np.zeros_like(t)
        if family == 0:  # d/dh: hat shape at unit height
            out[rising] = 2.0 * (-2.0 * l + w + 2.0 * t[rising]) / w**2
            out[falling] = 2.0 * (2.0 * l + w - 2.0 * t[falling]) / w**2
        elif family == 1:  # d/dl: slope sign flips at the peak
            out[rising] = -4.0 * h / w**2
            out[falling] = 4.0 * h / w**2
        else:  # d/dw
            out[rising] = 2.0 * h * (4.0 * l - 4.0 * t[rising] - w) / w**3
            out[falling] = 2.0 * h * (4.0 * t[falling] - 4.0 * l - w) / w**3
        return out

    return ZetaDensity(electrode=m, fn=fn)


@dataclass(frozen=True)
class BoundaryQuad:
    """Gauss points on electrode edges, split at parametrization breakpoints.

    The split makes every integrand appearing in assembly and sensitivity
    (conductance density times products of edge-linear factors, degree <= 3
    per segment) exact under the two-point rule.
    """

    s: np.ndarray  # arclength
    t: np.ndarray  # normalized within the owning electrode
    weight: np.ndarray
    phi_p: np.ndarray  # first edge-endpoint basis value; phi_q = 1 - phi_p
    node_p: np.ndarray
    node_q: np.ndarray
    electrode: np.ndarray  # 0-based electrode position
    edge_key: np.ndarray  # index into the mesh boundary loop

    @property
    def phi_q(self) -> np.ndarray:
        return 1.0 - self.phi_p


def _edge_gauss_points(params: ContactParams, elec: ExtendedElectrode, pos: int):
    """Yield (s, w, phi_p, p, q, s0) Gauss data per electrode edge, split at
    the parametrization's interior breakpoints."""
    a = elec.interval[0]
    length = elec.length
    bp_s = a + _breakpoints_t(params, pos) * length
    for p, q, s0, s1 in elec.edges():
        cuts = bp_s[(bp_s > s0 + 1e-15 * length) & (bp_s < s1 - 1e-15 * length)]
        knots = np.concatenate([[s0], np.sort(cuts), [s1]])
        mid = 0.5 * (knots[:-1] + knots[1:])
        half = 0.5 * np.diff(knots)
        sq = (mid[:, None] + half[:, None] * _GAUSS2[None, :]).ravel()
        wq = np.repeat(half, 2)
        yield sq, wq, (s1 - sq) / (s1 - s0), p, q, s0


def boundary_quadrature(
    params: ContactParams, mesh: TriMesh, electrodes
) -> BoundaryQuad:
    """Build the exact split quadrature for the current parameter geometry."""
    edge_of_start = {int(n): i for i, n in enumerate(mesh.boundary_nodes)}
    s_list, t_list, w_list, fp_list = [], [], [], []
    np_list, nq_list, el_list, ek_list = [], [], [], []

    for pos, elec in enumerate(electrodes):
        a = elec.interval[0]
        length = elec.length
        for sq, wq, fp, p, q, _ in _edge_gauss_points(params, elec, pos):
            s_list.append(sq)
            t_list.append((sq - a) / length)
            w_list.append(wq)
            fp_list.append(fp)
            np_list.append(np.full(len(sq), p, dtype=np.int64))
            nq_list.append(np.full(len(sq), q, dtype=np.int64))
            el_list.append(np.full(len(sq), pos, dtype=np.int64))
            ek_list.append(np.full(len(sq), edge_of_start[p], dtype=np.int64))

    def cat(parts, dtype=float):
        return (
            np.concatenate(parts).astype(dtype)
            if parts
            else np.empty(0, dtype=dtype)
        )

    return BoundaryQuad(
        s=cat(s_list),
        t=cat(t_list),
        weight=cat(w_list),
        phi_p=cat(fp_list),
        node_p=cat(np_list, np.int64),
        node_q=cat(nq_list, np.int64),
        electrode=cat(el_list, np.int64),
        edge_key=cat(ek_list, np.int64),
    )


@dataclass(frozen=True)
class EdgeZetaIntegrals:
    """Per-boundary-edge moments of the conductance density.

    Arrays are aligned with ``mesh.boundary_loop``; edges outside every
    electrode carry zeros and ``electrode == -1``.
    """

    zeta: np.ndarray  # (B,)   int zeta ds
    zeta_phi: np.ndarray  # (B, 2) int zeta phi_p ds, int zeta phi_q ds
    zeta_phi_phi: np.ndarray  # (B, 3) [pp, pq, qq] moments
    electrode: np.ndarray  # (B,)


def edge_zeta_integrals(
    params: ContactParams, mesh: TriMesh, electrodes, quad: BoundaryQuad | None = None
) -> EdgeZetaIntegrals:
    """Exact per-edge integrals of zeta against the edge-linear basis."""
    if quad is None:
        quad = boundary_quadrature(params, mesh, electrodes)
    B = len(mesh.boundary_nodes)
    zeta = np.zeros(B)
    zeta_phi = np.zeros((B, 2))
    zeta_phi_phi = np.zeros((B, 3))
    owner = np.full(B, -1, dtype=np.int64)

    zv = np.zeros(len(quad.s))
    for pos, elec in enumerate(electrodes):
        mask = quad.electrode == pos
        zv[mask] = eval_zeta(params, elec, quad.t[mask])
    wz = quad.weight * zv
    fp, fq = quad.phi_p, quad.phi_q
    ek = quad.edge_key
    np.add.at(zeta, ek, wz)
    np.add.at(zeta_phi[:, 0], ek, wz * fp)
    np.add.at(zeta_phi[:, 1], ek, wz * fq)
    np.add.at(zeta_phi_phi[:, 0], ek, wz * fp * fp)
    np.add.at(zeta_phi_phi[:, 1], ek, wz * fp * fq)
    np.add.at(zeta_phi_phi[:, 2], ek, wz * fq * fq)
    if len(ek):
        owner[ek] = quad.electrode
    return EdgeZetaIntegrals(zeta, zeta_phi, zeta_phi_phi, owner)


@dataclass(frozen=True)
class ContactSummary:
    """Net conductances, contact mass centers and log-conductance statistics."""

    net: np.ndarray  # (M,) int_E zeta ds, in S
    center_of_mass: np.ndarray  # (M,) arclength; nan where net == 0
    log_mean: float  # nan if any net <= 0
    log_std: float  # sample (n-1) standard deviation


def summarize(params: ContactParams, electrodes, mesh: TriMesh | None = None) -> ContactSummary:
    """Integrate the contact density per electrode.

    ``mesh`` is only needed to resolve edge geometry; electrode node
    arclengths suffice, so it is optional.
    """
    M = len(electrodes)
    net = np.zeros(M)
    first_moment = np.zeros(M)
    for pos, elec in enumerate(electrodes):
        a = elec.interval[0]
        length = elec.length
        for sq, wq, _, _, _, _ in _edge_gauss_points(params, elec, pos):
            zv = eval_zeta(params, elec, (sq - a) / length)
            net[pos] += np.sum(wq * zv)
            first_moment[pos] += np.sum(wq * zv * sq)
    with np.errstate(invalid="ignore", divide="ignore"):
        com = np.where(net > 0.0, first_moment / net, np.nan)
    if np.all(net > 0.0):
        logs = np.log(net)
        log_mean = float(np.mean(logs))
        log_std = float(np.std(logs, ddof=1)) if M > 1 else 0.0
    else:
        log_mean = log_std = float("nan")
    return ContactSummary(net=net, center_of_mass=com, log_mean=log_mean, log_std=log_std)


def initial_contacts(
    variant: str,
    electrodes,
    net: float = 0.001,
    support=None,
) -> ContactParams:
    """Starting guesses giving a prescribed net conductance per electrode.

    CEM: constant level on the support; PL: equal interior nodal values;
    PH: hat at the electrode center with the support's relative width.
    """
    M = len(electrodes)
    if variant == "cem":
        if support is None:
            support = np.tile([0.0, 1.0], (M, 1))
        support = np.asarray(support, dtype=float)
        widths = np.array(
            [(s[1] - s[0]) * e.length for s, e in zip(support, electrodes)]
        )
        return ContactParams.cem(np.sqrt(net / widths), support=support)
    if variant == "ph":
        if support is None:
            w = np.ones(M)
        else:
            support = np.asarray(support, dtype=float)
            w = support[:, 1] - support[:, 0]
        h = np.array([net / e.length for e in electrodes])
        return ContactParams.ph(h, np.full(M, 0.5), w)
    if variant == "pl":
        thetas = []
        for elec in electrodes:
            s = elec.node_arclengths
            # Trapezoid mass of the piecewise linear profile that is z at the
            # interior nodes and 0 at the endpoints.
            coeff = elec.length - 0.5 * (s[1] - s[0]) - 0.5 * (s[-1] - s[-2])
            thetas.append(np.full(len(s) - 2, np.sqrt(net / coeff)))
        return ContactParams.pl(np.concatenate(thetas), electrodes)
    raise ValueError(f"unknown contact variant {variant!r}")


def ph_prior_mean(electrodes, support=None) -> np.ndarray:
    """Prior mean for hat parameters: zero height, centered, support-width."""
    M = len(electrodes)
    if support is None:
        w = np.ones(M)
    else:
        support = np.asarray(support, dtype=float)
        w = support[:, 1] - support[:, 0]
    return np.concatenate([np.zeros(M), np.full(M, 0.5), w])


def write_contacts(params: ContactParams, path) -> None:
    """Serialize to CSV: a variant line, then electrode,param_name,value rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", params.variant])
        writer.writerow(["electrode", "param_name", "value"])
        M = params.n_electrodes
        if params.variant == "cem":
            for m in range(M):
                writer.writerow([m + 1, "level", f"{params.theta[m]:.17g}"])
                writer.writerow([m + 1, "support_lo", f"{params.support[m, 0]:.17g}"])
                writer.writerow([m + 1, "support_hi", f"{params.support[m, 1]:.17g}"])
        elif params.variant == "ph":
            for name, fam in (("h", 0), ("l", 1), ("w", 2)):
                for m in range(M):
                    writer.writerow(
                        [m + 1, name, f"{params.theta[fam * M + m]:.17g}"]
                    )
        else:
            for layout in params.pl_layouts:
                for j in range(layout.n_free):
                    writer.writerow(
                        [
                            layout.electrode + 1,
                            f"node:{int(layout.node_ids[j + 1])}",
                            f"{params.theta[layout.offset + j]:.17g}",
                        ]
                    )


def read_contacts(path, electrodes=None) -> ContactParams:
    """Read the CSV written by :func:`write_contacts`.

    PL contacts need ``electrodes`` to rebuild node layouts; node ids are
    validated against them.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "variant":
        raise ValueError(f"{path}: missing variant header")
    variant = rows[0][1]
    body = [r for r in rows[2:] if r]
    if variant == "cem":
        by_m: dict[int, dict[str, float]] = {}
        for m_str, name, value in body:
            by_m.setdefault(int(m_str) - 1, {})[name] = float(value)
        M = len(by_m)
        theta = np.array([by_m[m]["level"] for m in range(M)])
        support = np.array(
            [[by_m[m]["support_lo"], by_m[m]["support_hi"]] for m in range(M)]
        )
        return ContactParams.cem(theta, support=support)
    if variant == "ph":
        vals: dict[str, dict[int, float]] = {"h": {}, "l": {}, "w": {}}
        for m_str, name, value in body:
            vals[name][int(m_str) - 1] = float(value)
        M = len(vals["h"])
        return ContactParams.ph(
            [vals["h"][m] for m in range(M)],
            [vals["l"][m] for m in range(M)],
            [vals["w"][m] for m in range(M)],
        )
    if variant == "pl":
        if electrodes is None:
            raise ValueError("PL contacts need the electrode list to deserialize")
        by_node = {}
        for _, name, value in body:
            by_node[int(name.split(":")[1])] = float(value)
        template = ContactParams.pl(np.zeros(len(by_node)), electrodes)
        theta = np.zeros(len(by_node))
        for layout in template.pl_layouts:
            for j in range(layout.n_free):
                node = int(layout.node_ids[j + 1])
                if node not in by_node:
                    raise ValueError(f"PL contact file missing node {node}")
                theta[layout.offset + j] = by_node[node]
        return template.with_theta(theta)
    raise ValueError(f"unknown contact variant {variant!r}")
