import numpy as np
import pytest

from eitcontact.contacts import ContactParams
from eitcontact.experiments import disk_mesh, equispaced_intervals
from eitcontact.forward import (
    AssemblyError,
    CurrentPatternSet,
    DomainConductivity,
    assemble,
    measurements,
    solve,
    zero_mean_basis,
)
from eitcontact.mesh import locate_electrodes, refine_uniform


@pytest.fixture(scope="module")
def setup(small_disk, small_disk_electrodes):
    contact = ContactParams.ph(
        np.full(8, 0.7), np.full(8, 0.5), np.full(8, 0.5)
    )
    cond = DomainConductivity.scalar(np.log(0.02))
    system = assemble(small_disk, small_disk_electrodes, cond, contact)
    currents = CurrentPatternSet(8, 1e-3)
    return system, currents


class TestCurrentPatterns:
    def test_patterns_sum_to_zero(self):
        I = CurrentPatternSet(16, 1e-3).matrix
        assert I.shape == (15, 16)
        assert np.allclose(I.sum(axis=1), 0.0)
        assert I[3, 0] == 1e-3 and I[3, 4] == -1e-3

    def test_zero_amplitude_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            CurrentPatternSet(8, 0.0)

    def test_zero_mean_basis_orthonormal(self):
        for M in (2, 5, 16):
            Q = zero_mean_basis(M)
            assert np.allclose(Q.T @ Q, np.eye(M - 1), atol=1e-14)
            assert np.allclose(Q.sum(axis=0), 0.0, atol=1e-14)


class TestAssemble:
    def test_zero_contact_electrode_rejected(self, small_disk, small_disk_electrodes):
        theta = np.ones(8)
        theta[2] = 0.0
        contact = ContactParams.cem(theta)
        cond = DomainConductivity.scalar(np.log(0.02))
        with pytest.raises(AssemblyError, match="electrode 3 has zero contact"):
            assemble(small_disk, small_disk_electrodes, cond, contact)

    def test_grounded_matrix_positive_definite(self, setup):
        system, _ = setup
        eigs = np.linalg.eigvalsh(system.matrix.toarray())
        assert eigs.min() > 0.0

    def test_cross_electrode_coupling_absent(self, small_disk, small_disk_electrodes):
        # disjoint electrodes: the raw electrode block is diagonal, so the
        # grounded block must equal Q^T diag(net) Q
        from eitcontact.contacts import ContactParams, summarize

        contact = ContactParams.cem(np.full(8, 1.3))
        cond = DomainConductivity.scalar(np.log(0.02))
        system = assemble(small_disk, small_disk_electrodes, cond, contact)
        net = summarize(contact, small_disk_electrodes).net
        N = small_disk.n_nodes
        block = system.matrix.toarray()[N:, N:]
        expected = system.Q.T @ (net[:, None] * system.Q)
        assert np.allclose(block, expected, rtol=1e-12, atol=1e-15)

    def test_nodal_kappa_length_checked(self, small_disk, small_disk_electrodes):
        cond = DomainConductivity.nodal(np.zeros(10))
        contact = ContactParams.cem(np.ones(8))
        with pytest.raises(AssemblyError, match="nodal kappa"):
            assemble(small_disk, small_disk_electrodes, cond, contact)


class TestSolve:
    def test_zero_mean_and_residual(self, setup):
        system, currents = setup
        sol = solve(system, currents)
        assert np.abs(sol.U.mean(axis=1)).max() < 1e-14
        assert sol.residual <= 1e-10

    def test_tiny_current_scales_to_zero(self, setup):
        system, _ = setup
        sol = solve(system, CurrentPatternSet(8, 1e-20))
        assert np.abs(sol.U).max() < 1e-15

    def test_linearity_in_amplitude(self, setup):
        system, currents = setup
        u1 = measurements(solve(system, currents))
        u2 = measurements(solve(system, CurrentPatternSet(8, 2e-3)))
        assert np.allclose(u2, 2.0 * u1, rtol=1e-12)

    def test_mirror_symmetry_two_electrodes(self):
        # unit disk, homogeneous, two diametrically opposite electrodes
        mesh = disk_mesh(radius=1.0, n_boundary=40, growth=1.25)
        P = mesh.perimeter
        width = 0.3
        intervals = [(0.0, width), (P / 2, P / 2 + width)]
        electrodes = locate_electrodes(mesh, intervals)
        contact = ContactParams.cem(np.ones(2))
        cond = DomainConductivity.scalar(0.0)
        sol = solve(
            assemble(mesh, electrodes, cond, contact), CurrentPatternSet(2, 1e-3)
        )
        U = sol.U[0]
        assert U[0] > 0.0
        assert U[0] == pytest.approx(-U[1], rel=1e-9)

    def test_reciprocity_random_draws(self, small_disk, small_disk_electrodes):
        rng = np.random.default_rng(42)
        currents = CurrentPatternSet(8, 1e-3)
        n_pl = sum(len(e.node_ids) - 2 for e in small_disk_electrodes)
        for _ in range(3):
            kappa = np.log(0.02) + 0.5 * rng.standard_normal(small_disk.n_nodes)
            contact = ContactParams.pl(
                rng.uniform(0.3, 1.5, n_pl), small_disk_electrodes
            )
            system = assemble(
                small_disk, small_disk_electrodes,
                DomainConductivity.nodal(kappa), contact,
            )
            sol = solve(system, currents)
            R = sol.U @ currents.matrix.T
            assert np.abs(R - R.T).max() <= 1e-10 * np.abs(R).max()

    def test_factorization_reused_across_pattern_sets(self, setup):
        system, currents = setup
        before = system.factorization_count
        solve(system, currents)
        solve(system, CurrentPatternSet(8, 2e-3))
        assert system.factorization_count == max(before, 1)

    def test_measurement_vector_layout(self, setup):
        system, currents = setup
        sol = solve(system, currents)
        vec = measurements(sol)
        assert len(vec) == 8 * 7
        # row (i, m) = i * M + m
        assert vec[2 * 8 + 5] == sol.U[2, 5]


class TestConvergence:
    def test_voltages_converge_under_refinement(self, small_disk, small_disk_electrodes):
        # Richardson-style comparison against a twice-refined reference
        snapped = [e.interval for e in small_disk_electrodes]
        contact = ContactParams.ph(np.full(8, 0.7), np.full(8, 0.45), np.full(8, 0.6))
        cond = DomainConductivity.scalar(np.log(0.02))
        currents = CurrentPatternSet(8, 1e-3)

        meshes = [small_disk]
        for _ in range(3):
            meshes.append(refine_uniform(meshes[-1]))
        reference = refine_uniform(meshes[-1])

        def voltages(mesh):
            electrodes = locate_electrodes(mesh, snapped)
            return measurements(
                solve(assemble(mesh, electrodes, cond, contact), currents)
            )

        ref = voltages(reference)
        errors = [np.abs(voltages(m) - ref).max() for m in meshes[:3]]
        assert errors[0] / errors[1] >= 2.0
        assert errors[1] / errors[2] >= 2.0
