import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitcontact.contacts import (
    PH_FLOOR,
    ContactParams,
    boundary_quadrature,
    clamp_ph,
    dzeta_dtheta,
    edge_zeta_integrals,
    eval_zeta,
    initial_contacts,
    ph_prior_mean,
    read_contacts,
    summarize,
    write_contacts,
)


@pytest.fixture(scope="module")
def electrodes(small_disk_electrodes):
    return small_disk_electrodes


def n_pl_params(electrodes):
    return sum(len(e.node_ids) - 2 for e in electrodes)


class TestEvalZeta:
    def test_ph_peak_value(self, electrodes):
        params = ContactParams.ph([1.0] * 8, [0.5] * 8, [0.5] * 8)
        assert eval_zeta(params, electrodes[0], 0.5) == pytest.approx(4.0)

    def test_ph_support_endpoint_zero(self, electrodes):
        params = ContactParams.ph([2.0] * 8, [0.5] * 8, [0.4] * 8)
        lo = 0.5 - 0.2
        assert eval_zeta(params, electrodes[0], lo) == pytest.approx(0.0)
        assert eval_zeta(params, electrodes[0], lo - 0.05) == 0.0
        assert eval_zeta(params, electrodes[0], 0.5 + 0.25) == 0.0

    def test_pl_interpolates_squared_nodal_value(self, electrodes):
        # put value c at the first interior node of electrode 1, zero elsewhere
        theta = np.zeros(n_pl_params(electrodes))
        params = ContactParams.pl(theta, electrodes)
        layout = params.pl_layouts[0]
        theta = theta.copy()
        theta[layout.offset] = 3.0
        params = params.with_theta(theta)
        t_node = layout.t_nodes[1]
        assert eval_zeta(params, electrodes[0], t_node) == pytest.approx(9.0)
        # endpoints stay pinned to zero
        assert eval_zeta(params, electrodes[0], 0.0) == 0.0
        assert eval_zeta(params, electrodes[0], 1.0) == 0.0

    def test_cem_constant_on_support(self, electrodes):
        support = np.tile([0.25, 0.75], (8, 1))
        params = ContactParams.cem(np.full(8, 1.5), support=support)
        assert eval_zeta(params, electrodes[2], 0.5) == pytest.approx(2.25)
        assert eval_zeta(params, electrodes[2], 0.1) == 0.0

    @given(
        h=st.floats(0.01, 10.0),
        l=st.floats(0.2, 0.8),
        w=st.floats(0.05, 0.39),
    )
    @settings(max_examples=50, deadline=None)
    def test_ph_nonnegative_and_unit_mass(self, h, l, w):
        params = ContactParams.ph([h, h], [l, l], [w, w])
        t = np.linspace(0.0, 1.0, 20001)
        z = _hat_values(params, t)
        assert np.all(z >= 0.0)
        # hat area in normalized coordinates equals the height parameter
        assert np.trapezoid(z, t) == pytest.approx(h, rel=1e-4)


def _hat_values(params, t):
    h, l, w = params.ph_triplet(0)
    lo, hi = l - w / 2, l + w / 2
    z = np.zeros_like(t)
    rising = (t > lo) & (t < l)
    falling = (t >= l) & (t < hi)
    z[rising] = 2 * h * (-2 * l + w + 2 * t[rising]) / w**2
    z[falling] = 2 * h * (2 * l + w - 2 * t[falling]) / w**2
    return z


class TestClampPH:
    def test_wide_hat_cut_to_one(self):
        p = clamp_ph(ContactParams.ph([1.0, 1.0], [0.5, 0.5], [1.4, 0.5]))
        h, l, w = p.ph_triplet(0)
        assert (h, l, w) == (1.0, 0.5, 1.0)

    def test_low_center_moved_up(self):
        p = clamp_ph(ContactParams.ph([1.0, 1.0], [0.1, 0.5], [0.5, 0.5]))
        _, l, w = p.ph_triplet(0)
        assert (l, w) == (0.25, 0.5)

    def test_high_center_moved_down(self):
        p = clamp_ph(ContactParams.ph([1.0, 1.0], [0.95, 0.5], [0.5, 0.5]))
        _, l, w = p.ph_triplet(0)
        assert (l, w) == (0.75, 0.5)

    def test_feasible_unchanged(self):
        p0 = ContactParams.ph([1.0, 2.0], [0.4, 0.6], [0.3, 0.2])
        p1 = clamp_ph(p0)
        assert np.array_equal(p0.theta, p1.theta)

    def test_nonpositive_floored(self):
        p = clamp_ph(ContactParams.ph([-1.0, 1.0], [0.5, 0.5], [0.0, 0.5]))
        h, _, w = p.ph_triplet(0)
        assert h == PH_FLOOR
        assert w == PH_FLOOR

    @given(
        h=st.floats(-2.0, 5.0),
        l=st.floats(-0.5, 1.5),
        w=st.floats(-0.5, 2.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_idempotent_and_feasible(self, h, l, w):
        p1 = clamp_ph(ContactParams.ph([h, h], [l, l], [w, w]))
        p2 = clamp_ph(p1)
        assert np.array_equal(p1.theta, p2.theta)
        hc, lc, wc = p1.ph_triplet(0)
        assert 0.0 < wc <= 1.0
        assert lc - wc / 2 >= -1e-15
        assert lc + wc / 2 <= 1.0 + 1e-15


class TestEdgeZetaIntegrals:
    def test_cem_constant_moments(self, small_disk, electrodes):
        params = ContactParams.cem(np.full(8, 2.0))  # zeta = 4 on electrodes
        out = edge_zeta_integrals(params, small_disk, electrodes)
        on = out.electrode >= 0
        loop = small_disk.boundary_loop
        lengths = np.linalg.norm(
            small_disk.nodes[loop[:, 1]] - small_disk.nodes[loop[:, 0]], axis=1
        )
        L = lengths[on]
        assert out.zeta[on] == pytest.approx(4.0 * L, rel=1e-12)
        assert out.zeta_phi[on, 0] == pytest.approx(4.0 * L / 2, rel=1e-12)
        assert out.zeta_phi_phi[on, 1] == pytest.approx(4.0 * L / 6, rel=1e-12)
        assert out.zeta_phi_phi[on, 0] == pytest.approx(4.0 * L / 3, rel=1e-12)

    def test_gap_edges_zero(self, small_disk, electrodes):
        params = ContactParams.cem(np.ones(8))
        out = edge_zeta_integrals(params, small_disk, electrodes)
        off = out.electrode < 0
        assert np.any(off)
        assert np.all(out.zeta[off] == 0.0)
        assert np.all(out.zeta_phi[off] == 0.0)
        assert np.all(out.zeta_phi_phi[off] == 0.0)

    def test_ph_net_equals_height_times_length(self, small_disk, electrodes):
        params = ContactParams.ph(
            np.linspace(0.5, 1.2, 8), np.full(8, 0.45), np.full(8, 0.6)
        )
        out = edge_zeta_integrals(params, small_disk, electrodes)
        for pos, elec in enumerate(electrodes):
            net = out.zeta[out.electrode == pos].sum()
            h, _, _ = params.ph_triplet(pos)
            assert net == pytest.approx(h * elec.length, rel=1e-12)


class TestDzetaDtheta:
    def test_pl_nodal_scaling(self, electrodes):
        theta = np.full(n_pl_params(electrodes), 3.0)
        params = ContactParams.pl(theta, electrodes)
        dens = dzeta_dtheta(params, 0)
        layout = params.pl_layouts[0]
        t_node = layout.t_nodes[1]
        assert dens.fn(np.array([t_node]))[0] == pytest.approx(6.0)

    def test_ph_dh_at_center(self, electrodes):
        params = ContactParams.ph([5.0] * 8, [0.5] * 8, [0.4] * 8)
        dens = dzeta_dtheta(params, 2)  # dh for electrode 3
        assert dens.electrode == 2
        # at the peak, zeta = 2h/w, so dzeta/dh = 2/w independent of h
        assert dens.fn(np.array([0.5 - 1e-12]))[0] == pytest.approx(2.0 / 0.4, rel=1e-6)

    def test_index_out_of_range(self, electrodes):
        params = ContactParams.ph([1.0] * 8, [0.5] * 8, [0.4] * 8)
        with pytest.raises(IndexError):
            dzeta_dtheta(params, 24)

    @pytest.mark.parametrize("family", [0, 1, 2])
    def test_ph_matches_finite_differences(self, electrodes, family):
        params = ContactParams.ph([0.8] * 8, [0.45] * 8, [0.5] * 8)
        m = 1
        k = family * 8 + m
        dens = dzeta_dtheta(params, k)
        # sample away from the hat breakpoints
        h, l, w = params.ph_triplet(m)
        breaks = np.array([l - w / 2, l, l + w / 2])
        t = np.linspace(0.05, 0.95, 20)
        t = t[np.min(np.abs(t[:, None] - breaks[None, :]), axis=1) > 0.01]
        step = 1e-6
        up = params.theta.copy()
        up[k] += step
        dn = params.theta.copy()
        dn[k] -= step
        fd = (
            eval_zeta(params.with_theta(up), electrodes[m], t)
            - eval_zeta(params.with_theta(dn), electrodes[m], t)
        ) / (2 * step)
        vals = dens.fn(t)
        scale = np.abs(fd).max()
        assert np.allclose(vals, fd, atol=1e-6 * scale, rtol=1e-6)

    def test_cem_support_indicator(self, electrodes):
        support = np.tile([0.3, 0.7], (8, 1))
        params = ContactParams.cem(np.full(8, 2.0), support=support)
        dens = dzeta_dtheta(params, 4)
        assert dens.electrode == 4
        assert dens.fn(np.array([0.5]))[0] == pytest.approx(4.0)
        assert dens.fn(np.array([0.1]))[0] == 0.0


class TestSummarize:
    def test_ph_net_and_center(self, electrodes):
        params = ContactParams.ph([0.7] * 8, [0.4] * 8, [0.3] * 8)
        summary = summarize(params, electrodes)
        for pos, elec in enumerate(electrodes):
            assert summary.net[pos] == pytest.approx(0.7 * elec.length, rel=1e-12)
            assert summary.center_of_mass[pos] == pytest.approx(
                elec.to_arclength(0.4), rel=1e-10
            )

    def test_cem_center_is_midpoint(self, electrodes):
        params = ContactParams.cem(np.ones(8))
        summary = summarize(params, electrodes)
        for pos, elec in enumerate(electrodes):
            mid = 0.5 * (elec.interval[0] + elec.interval[1])
            assert summary.center_of_mass[pos] == pytest.approx(mid, rel=1e-12)

    def test_pl_symmetric_layout_center(self, electrodes):
        theta = np.full(n_pl_params(electrodes), 0.8)
        params = ContactParams.pl(theta, electrodes)
        summary = summarize(params, electrodes)
        for pos, elec in enumerate(electrodes):
            # node layouts on this structured disk are symmetric
            mid = 0.5 * (elec.interval[0] + elec.interval[1])
            assert summary.center_of_mass[pos] == pytest.approx(mid, rel=1e-9)

    def test_zero_contact_center_absent(self, electrodes):
        theta = np.zeros(n_pl_params(electrodes))
        params = ContactParams.pl(theta, electrodes)
        summary = summarize(params, electrodes)
        assert np.all(summary.net == 0.0)
        assert np.all(np.isnan(summary.center_of_mass))
        assert np.isnan(summary.log_mean)

    def test_two_point_log_std(self, small_disk):
        from eitcontact.experiments import equispaced_intervals
        from eitcontact.mesh import locate_electrodes

        intervals = equispaced_intervals(small_disk.perimeter, 2, 0.042)
        electrodes = locate_electrodes(small_disk, intervals)
        g = 0.01
        levels = np.sqrt(
            np.array([g, g * np.e**2]) / np.array([e.length for e in electrodes])
        )
        params = ContactParams.cem(levels)
        summary = summarize(params, electrodes)
        assert summary.log_std == pytest.approx(np.sqrt(2.0), rel=1e-10)


class TestInitialContacts:
    @pytest.mark.parametrize("variant", ["cem", "pl", "ph"])
    def test_net_conductance(self, electrodes, variant):
        params = initial_contacts(variant, electrodes, net=0.001)
        summary = summarize(params, electrodes)
        assert summary.net == pytest.approx(np.full(8, 0.001), rel=1e-10)

    def test_ph_prior_mean_layout(self, electrodes):
        support = np.tile([0.3, 0.7], (8, 1))
        mu = ph_prior_mean(electrodes, support=support)
        assert np.all(mu[:8] == 0.0)
        assert np.all(mu[8:16] == 0.5)
        assert mu[16:] == pytest.approx(np.full(8, 0.4))


class TestContactsIO:
    @pytest.mark.parametrize("variant", ["cem", "pl", "ph"])
    def test_roundtrip(self, tmp_path, electrodes, variant):
        rng = np.random.default_rng(7)
        if variant == "cem":
            params = ContactParams.cem(
                rng.uniform(0.5, 2.0, 8), support=np.tile([0.2, 0.9], (8, 1))
            )
        elif variant == "ph":
            params = ContactParams.ph(
                rng.uniform(0.1, 1.0, 8), rng.uniform(0.3, 0.7, 8), rng.uniform(0.2, 0.5, 8)
            )
        else:
            params = ContactParams.pl(
                rng.uniform(0.0, 2.0, n_pl_params(electrodes)), electrodes
            )
        path = tmp_path / "contacts.csv"
        write_contacts(params, path)
        back = read_contacts(path, electrodes=electrodes)
        assert back.variant == variant
        assert np.allclose(back.theta, params.theta, rtol=0, atol=0)
        if variant == "cem":
            assert np.allclose(back.support, params.support)
