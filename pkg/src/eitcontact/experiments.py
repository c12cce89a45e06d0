"""Synthetic scenarios, phantom data generation and evaluation metrics.

Data is always generated on a uniformly refined copy of the reconstruction
mesh with the true contacts modeled as constant conductance confined to the
true electrode, so no inverse solver is ever tested against its own
discretization.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .contacts import ContactParams
from .forward import CurrentPatternSet, DomainConductivity, assemble, measurements, solve
from .mesh import TriMesh, locate_electrodes, refine_uniform

__all__ = [
    "DiskInclusion",
    "PolygonInclusion",
    "Scenario",
    "SynthResult",
    "disk_mesh",
    "tank_mesh",
    "equispaced_intervals",
    "randomize_extensions",
    "cem_support_for_true",
    "sigma_nodal",
    "synth_data",
    "residual_norm",
    "center_error",
    "conductance_stats",
    "read_scenario",
    "write_scenario",
    "TANK_PERIMETER",
]

TANK_PERIMETER = 1.06  # m


@dataclass(frozen=True)
class DiskInclusion:
    cx: float
    cy: float
    radius: float
    sigma: float

    def contains(self, xy: np.ndarray) -> np.ndarray:
        return (xy[:, 0] - self.cx) ** 2 + (xy[:, 1] - self.cy) ** 2 <= self.radius**2


@dataclass(frozen=True)
class PolygonInclusion:
    vertices: tuple
    sigma: float

    def contains(self, xy: np.ndarray) -> np.ndarray:
        v = np.asarray(self.vertices, dtype=float)
        inside = np.zeros(len(xy), dtype=bool)
        x, y = xy[:, 0], xy[:, 1]
        n = len(v)
        j = n - 1
        for i in range(n):
            cond = (v[i, 1] > y) != (v[j, 1] > y)
            slope = (v[j, 0] - v[i, 0]) * (y - v[i, 1]) / (v[j, 1] - v[i, 1] + 1e-300)
            inside ^= cond & (x < v[i, 0] + slope)
            j = i
        return inside


@dataclass(frozen=True)
class Scenario:
    """True electrode layout plus the randomized extension recipe.

    ``extension`` is how much wider each extended electrode is than the true
    one; the widening is split uniformly at random between the two ends,
    reproducibly from ``seed``.
    """

    true_intervals: tuple
    extension: float = 0.0
    seed: int = 0
    noise_std: float = 0.0
    background_sigma: float = 0.02
    inclusions: tuple = ()
    contact_net: float = 0.025  # S per electrode in the generated data

    @property
    def n_electrodes(self) -> int:
        return len(self.true_intervals)

    def extended_intervals(self, perimeter: float) -> list[tuple[float, float]]:
        return randomize_extensions(
            self.true_intervals, self.extension, self.seed, perimeter
        )


def disk_mesh(
    radius: float = 1.0,
    n_boundary: int = 64,
    growth: float = 1.1,
    center: tuple[float, float] = (0.0, 0.0),
) -> TriMesh:
    """Deterministic structured disk: graded concentric rings + Delaunay.

    Ring spacing starts at the boundary edge length and grows by ``growth``
    toward the center, giving the boundary-dense layouts the reconstructions
    use.
    """
    if n_boundary < 8:
        raise ValueError("need at least 8 boundary nodes")
    pts = []
    h = 2.0 * np.pi * radius / n_boundary
    r = radius
    k = 0
    while True:
        n_ring = n_boundary if k == 0 else max(8, int(round(2.0 * np.pi * r / (h * growth**k))))
        offset = 0.5 * (k % 2)
        ang = 2.0 * np.pi * (np.arange(n_ring) + offset) / n_ring
        pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
        step = h * growth**k
        if r - step < 0.9 * step:
            break
        r -= step
        k += 1
    pts.append(np.zeros((1, 2)))
    nodes = np.vstack(pts) + np.asarray(center)
    tri = Delaunay(nodes)
    return TriMesh(nodes, tri.simplices)


def tank_mesh(n_boundary: int = 224, growth: float = 1.025) -> TriMesh:
    """Disk at the water-tank scale (1.06 m circumference), ~2700 nodes."""
    return disk_mesh(radius=TANK_PERIMETER / (2.0 * np.pi), n_boundary=n_boundary, growth=growth)


def equispaced_intervals(
    perimeter: float, count: int, width: float, offset: float = 0.0
) -> list[tuple[float, float]]:
    """Electrode intervals centered in equal boundary cells."""
    cell = perimeter / count
    if width >= cell:
        raise ValueError("electrode width must be below the cell size")
    out = []
    for m in range(count):
        a = offset + m * cell + 0.5 * (cell - width)
        out.append((a, a + width))
    return out


def randomize_extensions(true_intervals, extension: float, seed: int, perimeter: float):
    """Widen each interval by ``extension``, split randomly between the ends.

    Pure function of (intervals, extension, seed). Raises if the widened
    intervals overlap.
    """
    if extension < 0.0:
        raise ValueError("extension must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    alphas = rng.uniform(0.0, 1.0, size=len(true_intervals))
    out = []
    for (a, b), alpha in zip(true_intervals, alphas):
        out.append((a - alpha * extension, b + (1.0 - alpha) * extension))
    bad = []
    for m in range(len(out)):
        m_next = (m + 1) % len(out)
        gap = out[m_next][0] - out[m][1] + (perimeter if m_next == 0 else 0.0)
        if gap <= 0.0:
            bad.append((m + 1, m_next + 1))
    if bad:
        raise ValueError(f"extended intervals overlap for electrode pairs {bad}")
    if out[0][0] < 0.0:
        # Keep intervals inside [0, perimeter); shift the whole layout.
        raise ValueError("extension pushes the first interval below arclength 0")
    return out


def cem_support_for_true(extended, true_intervals) -> np.ndarray:
    """Normalized support of each true electrode inside its extended one."""
    support = np.zeros((len(extended), 2))
    for m, (elec, (a, b)) in enumerate(zip(extended, true_intervals)):
        support[m, 0] = max(0.0, elec.to_t(a))
        support[m, 1] = min(1.0, elec.to_t(b))
    return support


def cem_midpoint_support(extended, true_width: float) -> np.ndarray:
    """True-width support centered on each extended electrode (the naive
    placement used by the constant-contact baseline)."""
    support = np.zeros((len(extended), 2))
    for m, elec in enumerate(extended):
        half = min(0.5, 0.5 * true_width / elec.length)
        support[m] = (0.5 - half, 0.5 + half)
    return support


def sigma_nodal(scenario: Scenario, mesh: TriMesh) -> np.ndarray:
    """Nodal conductivity of the phantom: background plus inclusions."""
    sigma = np.full(mesh.n_nodes, scenario.background_sigma)
    for inc in scenario.inclusions:
        sigma[inc.contains(mesh.nodes)] = inc.sigma
    return sigma


@dataclass
class SynthResult:
    measurements: np.ndarray
    truth: dict
    fine_mesh: TriMesh = field(repr=False, default=None)


def synth_data(
    scenario: Scenario,
    recon_mesh: TriMesh,
    levels: int = 1,
    amplitude: float = 1e-3,
) -> SynthResult:
    """Generate measurement data on a refined copy of the reconstruction mesh.

    The true contact is constant on each true electrode (zero on the rest of
    the extended electrode) with net conductance ``scenario.contact_net``.
    Additive Gaussian noise with ``scenario.noise_std`` is drawn from the
    scenario seed.
    """
    if levels < 1:
        raise ValueError("need at least one refinement level for the data mesh")
    fine = recon_mesh
    for _ in range(levels):
        fine = refine_uniform(fine)
    assert fine is not recon_mesh

    extended_iv = scenario.extended_intervals(fine.perimeter)
    electrodes = locate_electrodes(fine, extended_iv)
    support = cem_support_for_true(electrodes, scenario.true_intervals)
    widths = np.array(
        [(hi - lo) * e.length for (lo, hi), e in zip(support, electrodes)]
    )
    theta = np.sqrt(scenario.contact_net / widths)
    contact = ContactParams.cem(theta, support=support)

    sigma = sigma_nodal(scenario, fine)
    conductivity = DomainConductivity.nodal(np.log(sigma))
    currents = CurrentPatternSet(len(electrodes), amplitude)
    sol = solve(assemble(fine, electrodes, conductivity, contact), currents)
    clean = measurements(sol)

    noisy = clean.copy()
    if scenario.noise_std > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence([int(scenario.seed), 1]))
        noisy = clean + scenario.noise_std * rng.standard_normal(len(clean))

    truth = {
        "true_intervals": [list(iv) for iv in scenario.true_intervals],
        "extended_intervals": [list(iv) for iv in extended_iv],
        "true_midpoints": [0.5 * (a + b) for a, b in scenario.true_intervals],
        "extension": scenario.extension,
        "seed": scenario.seed,
        "noise_std": scenario.noise_std,
        "background_sigma": scenario.background_sigma,
        "contact_net": scenario.contact_net,
        "inclusions": [
            {"type": "disk", "cx": i.cx, "cy": i.cy, "radius": i.radius, "sigma": i.sigma}
            if isinstance(i, DiskInclusion)
            else {"type": "polygon", "vertices": [list(v) for v in i.vertices], "sigma": i.sigma}
            for i in scenario.inclusions
        ],
        "amplitude": amplitude,
        "fine_mesh_fingerprint": fine.fingerprint,
        "fine_mesh_nodes": fine.n_nodes,
        "refinement_levels": levels,
    }
    return SynthResult(measurements=noisy, truth=truth, fine_mesh=fine)


def assert_no_inverse_crime(truth: dict, recon_mesh: TriMesh) -> None:
    """Structural guard: the data mesh must differ from the model mesh."""
    if truth.get("fine_mesh_fingerprint") == recon_mesh.fingerprint:
        raise ValueError("data was generated on the reconstruction mesh")


def residual_norm(u_opt: np.ndarray, v: np.ndarray) -> float:
    """Euclidean norm of the final data misfit."""
    u_opt = np.asarray(u_opt, dtype=float)
    v = np.asarray(v, dtype=float)
    if u_opt.shape != v.shape:
        raise ValueError(f"length mismatch: {u_opt.shape} vs {v.shape}")
    return float(np.linalg.norm(u_opt - v))


def _circ_dist(a: float, b: float, perimeter: float) -> float:
    d = abs(a - b) % perimeter
    return min(d, perimeter - d)


def center_error(summary, true_intervals, perimeter: float) -> float:
    """Mean arclength distance between contact mass centers and the true
    electrode midpoints."""
    com = np.asarray(summary.center_of_mass, dtype=float)
    errs = []
    for m, (a, b) in enumerate(true_intervals):
        if not np.isfinite(com[m]):
            raise ValueError(f"electrode {m + 1} has no contact mass center")
        errs.append(_circ_dist(0.5 * (a + b), com[m], perimeter))
    return float(np.mean(errs))


def conductance_stats(summary) -> tuple[float, float]:
    """Mean and sample standard deviation of log net conductances."""
    net = np.asarray(summary.net, dtype=float)
    bad = np.where(net <= 0.0)[0]
    if len(bad):
        raise ValueError(f"electrode {bad[0] + 1} has nonpositive net conductance")
    logs = np.log(net)
    std = float(np.std(logs, ddof=1)) if len(logs) > 1 else 0.0
    return float(np.mean(logs)), std


def write_scenario(scenario: Scenario, path) -> None:
    cfg = configparser.ConfigParser()
    cfg["scenario"] = {
        "true_intervals": "; ".join(
            f"{a:.17g} {b:.17g}" for a, b in scenario.true_intervals
        ),
        "extension": f"{scenario.extension:.17g}",
        "seed": str(scenario.seed),
        "noise_std": f"{scenario.noise_std:.17g}",
        "background_sigma": f"{scenario.background_sigma:.17g}",
        "contact_net": f"{scenario.contact_net:.17g}",
        "inclusions": "; ".join(
            f"disk {i.cx:.17g} {i.cy:.17g} {i.radius:.17g} {i.sigma:.17g}"
            for i in scenario.inclusions
            if isinstance(i, DiskInclusion)
        ),
    }
    with open(path, "w") as f:
        cfg.write(f)


def read_scenario(path) -> Scenario:
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise ValueError(f"cannot read scenario file {path}")
    sec = cfg["scenario"]
    intervals = []
    for chunk in sec["true_intervals"].split(";"):
        chunk = chunk.strip()
        if chunk:
            a, b = chunk.split()
            intervals.append((float(a), float(b)))
    inclusions = []
    for chunk in sec.get("inclusions", "").split(";"):
        parts = chunk.split()
        if not parts:
            continue
        if parts[0] != "disk":
            raise ValueError(f"unknown inclusion type {parts[0]!r} in {path}")
        inclusions.append(
            DiskInclusion(float(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]))
        )
    return Scenario(
        true_intervals=tuple(intervals),
        extension=sec.getfloat("extension", 0.0),
        seed=sec.getint("seed", 0),
        noise_std=sec.getfloat("noise_std", 0.0),
        background_sigma=sec.getfloat("background_sigma", 0.02),
        inclusions=tuple(inclusions),
        contact_net=sec.getfloat("contact_net", 0.025),
    )
