import numpy as np
import pytest

from dmrifem import build_structured_mesh, geometry_tables, interface_facets
from dmrifem.assembly import (DofLayout, assemble_boundary, assemble_convection,
                              assemble_facet_mass, assemble_interface,
                              assemble_interface_gradient, assemble_mass,
                              assemble_stiffness, assemble_t2_mass,
                              assemble_weighted_mass, build_system, promote_diffusion)
from dmrifem.mesh import Mesh


def dense(A):
    return np.asarray(A.todense())


@pytest.fixture
def cell1d():
    m = Mesh(np.array([[0.0], [1.0]]), np.array([[0, 1]]))
    return m, geometry_tables(m), DofLayout.single(m), np.zeros(1, dtype=int)


@pytest.fixture
def pufem_interval():
    m = build_structured_mesh(0.0, 2.0, 2)
    geo = geometry_tables(m)
    phase = np.array([0, 1])
    layout = DofLayout.pufem(m, phase)
    iface = interface_facets(m, phase, geo)
    return m, geo, phase, layout, iface


class TestMass:
    def test_unit_interval_element(self, cell1d):
        m, geo, layout, phase = cell1d
        M = dense(assemble_mass(m, geo, layout, phase)).real
        assert M == pytest.approx(np.array([[2, 1], [1, 2]]) / 6.0)

    def test_row_sums_give_measure(self):
        m = build_structured_mesh((0, 0, 0), (2, 3, 4), (2, 2, 2))
        geo = geometry_tables(m)
        M = assemble_mass(m, geo, DofLayout.single(m), np.zeros(m.num_cells, dtype=int))
        total = np.ones(M.shape[0]) @ (M @ np.ones(M.shape[0]))
        assert total.real == pytest.approx(24.0, rel=1e-12)

    def test_pufem_block_diagonal(self, pufem_interval):
        m, geo, phase, layout, iface = pufem_interval
        M = dense(assemble_mass(m, geo, layout, phase))
        f0 = np.nonzero(layout.dof_field == 0)[0]
        f1 = np.nonzero(layout.dof_field == 1)[0]
        assert np.abs(M[np.ix_(f0, f1)]).max() == 0.0
        assert np.abs(M[np.ix_(f1, f0)]).max() == 0.0


class TestStiffness:
    def test_unit_interval(self, cell1d):
        m, geo, layout, phase = cell1d
        S = dense(assemble_stiffness(m, geo, layout, phase,
                                     promote_diffusion(1.0, 1, 1))).real
        assert S == pytest.approx(np.array([[1, -1], [-1, 1]], dtype=float))

    def test_constant_null_space(self):
        m = build_structured_mesh((0, 0), (3, 1), (6, 3))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        D = promote_diffusion(3e-3, m.num_cells, 2)
        S = assemble_stiffness(m, geo, layout, np.zeros(m.num_cells, dtype=int), D)
        assert np.abs(S @ np.ones(S.shape[0])).max() < 1e-12

    def test_anisotropic_quadratic_form_positive(self):
        m = build_structured_mesh((0, 0, 0), (5, 5, 5), (2, 2, 2))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        D = promote_diffusion(np.diag([3e-3, 1e-3, 3e-3]), m.num_cells, 3)
        S = assemble_stiffness(m, geo, layout, np.zeros(m.num_cells, dtype=int), D)
        rng = np.random.default_rng(11)
        for _ in range(5):
            v = rng.normal(size=S.shape[0])
            v -= v.mean()
            assert (v @ (S @ v)).real > 0.0

    def test_non_spd_rejected_with_cell_id(self, cell1d):
        m, geo, layout, phase = cell1d
        with pytest.raises(ValueError, match="cell 0"):
            assemble_stiffness(m, geo, layout, phase, np.array([[[-1.0]]]))

    def test_asymmetric_rejected(self):
        m = build_structured_mesh((0, 0), (1, 1), (1, 1))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        D = np.array([[[1.0, 0.3], [0.0, 1.0]]] * m.num_cells)
        with pytest.raises(ValueError, match="symmetric"):
            assemble_stiffness(m, geo, layout, np.zeros(m.num_cells, dtype=int), D)

    def test_manifold_segment_tangential(self):
        # straight segment along t in 3D: stiffness equals the flat 1D
        # stiffness scaled by t . D t
        t = np.array([1.0, 2.0, 2.0]) / 3.0
        L = 2.5
        m3 = Mesh(np.array([np.zeros(3), t * L]), np.array([[0, 1]]))
        geo3 = geometry_tables(m3)
        D3 = np.diag([3e-3, 1e-3, 2e-3])
        S3 = dense(assemble_stiffness(m3, geo3, DofLayout.single(m3),
                                      np.zeros(1, dtype=int),
                                      promote_diffusion(D3, 1, 3))).real
        m1 = Mesh(np.array([[0.0], [L]]), np.array([[0, 1]]))
        geo1 = geometry_tables(m1)
        tDt = float(t @ D3 @ t)
        S1 = dense(assemble_stiffness(m1, geo1, DofLayout.single(m1),
                                      np.zeros(1, dtype=int),
                                      promote_diffusion(tDt, 1, 1))).real
        assert S3 == pytest.approx(S1, rel=1e-12)


class TestWeightedMass:
    def test_zero_direction_gives_zero(self, cell1d):
        m, geo, layout, phase = cell1d
        J = assemble_weighted_mass(m, geo, layout, phase, affine=np.zeros(3))
        assert abs(J).max() == 0.0

    def test_constant_weight_scales_mass(self):
        m = build_structured_mesh((0, 0), (1, 2), (2, 3))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        phase = np.zeros(m.num_cells, dtype=int)
        M = dense(assemble_mass(m, geo, layout, phase))
        W = dense(assemble_weighted_mass(m, geo, layout, phase,
                                         cell_weights=np.full(m.num_cells, 2.5)))
        assert W == pytest.approx(2.5 * M)

    def test_affine_weight_exact_cubic(self):
        # w(x) = x on a single cell [0, h]: exact integrals of x phi_i phi_j
        h = 0.7
        m = Mesh(np.array([[0.0], [h]]), np.array([[0, 1]]))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        J = dense(assemble_weighted_mass(m, geo, layout, np.zeros(1, dtype=int),
                                         affine=np.array([1.0, 0.0, 0.0]))).real
        exact = h ** 2 * np.array([[1 / 12, 1 / 12], [1 / 12, 1 / 4]])
        assert J == pytest.approx(exact, rel=1e-14)

    def test_affine_weight_on_triangle_against_quadrature(self):
        from scipy.integrate import dblquad

        m = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        q = np.array([0.3, -0.2, 0.0])
        J = dense(assemble_weighted_mass(m, geo, layout, np.zeros(1, dtype=int),
                                         affine=q)).real
        basis = [lambda x, y: 1.0 - x - y, lambda x, y: x, lambda x, y: y]
        for a in range(3):
            for b in range(3):
                val, _ = dblquad(
                    lambda y, x, fa=basis[a], fb=basis[b]:
                        (q[0] * x + q[1] * y) * fa(x, y) * fb(x, y),
                    0.0, 1.0, 0.0, lambda x: 1.0 - x, epsabs=1e-12)
                assert J[a, b] == pytest.approx(val, abs=1e-10)

    def test_t2_mass(self, cell1d):
        m, geo, layout, phase = cell1d
        R = dense(assemble_t2_mass(m, geo, layout, phase, np.array([50.0]))).real
        M = dense(assemble_mass(m, geo, layout, phase)).real
        assert R == pytest.approx(M / 50.0)

    def test_nonpositive_t2_rejected(self, cell1d):
        m, geo, layout, phase = cell1d
        with pytest.raises(ValueError):
            assemble_t2_mass(m, geo, layout, phase, np.array([0.0]))


class TestInterface:
    def test_equal_fields_annihilated(self, pufem_interval):
        m, geo, phase, layout, iface = pufem_interval
        I = assemble_interface(m, geo, layout, iface, kappa=2.0)
        u = np.zeros(layout.ndof, dtype=complex)
        for k in (0, 1):
            for v in range(m.num_vertices):
                d = layout.vertex_dofs[k][v]
                if d >= 0:
                    u[d] = 3.0 + 1.0j * v
        assert np.abs(I @ u).max() == 0.0

    def test_kappa_zero_vanishes(self, pufem_interval):
        m, geo, phase, layout, iface = pufem_interval
        I = assemble_interface(m, geo, layout, iface, kappa=0.0)
        assert abs(I).max() == 0.0

    def test_single_facet_pattern(self, pufem_interval):
        # one interface vertex in 1D: the two coupled dofs carry the
        # kappa [[1, -1], [-1, 1]] pattern across fields
        m, geo, phase, layout, iface = pufem_interval
        kappa = 1.7
        I = dense(assemble_interface(m, geo, layout, iface, kappa)).real
        d0 = layout.vertex_dofs[0][1]
        d1 = layout.vertex_dofs[1][1]
        sub = I[np.ix_([d0, d1], [d0, d1])]
        assert sub == pytest.approx(kappa * np.array([[1, -1], [-1, 1]]))
        mask = np.ones(layout.ndof, bool)
        mask[[d0, d1]] = False
        assert np.abs(I[mask]).max() == 0.0

    def test_psd(self, pufem_interval):
        m, geo, phase, layout, iface = pufem_interval
        I = dense(assemble_interface(m, geo, layout, iface, kappa=1.0)).real
        eig = np.linalg.eigvalsh(0.5 * (I + I.T))
        assert eig.min() > -1e-14

    def test_requires_pufem(self, cell1d):
        m, geo, layout, phase = cell1d
        iface = interface_facets(m, phase)
        with pytest.raises(ValueError):
            assemble_interface(m, geo, layout, iface, kappa=1.0)


class TestInterfaceGradient:
    def test_combination_symmetric_and_block_diagonal(self):
        # 0.5 K1 + 2 K2 must reduce to w0 <u0,v0> - w1 <u1,v1>: symmetric,
        # no cross-field coupling (the individual matrices are neither)
        m = build_structured_mesh(0.0, 2.0, 2)
        geo = geometry_tables(m)
        phase = np.array([0, 1])
        layout = DofLayout.pufem(m, phase)
        iface = interface_facets(m, phase, geo)
        D = promote_diffusion(np.array([3e-3, 1e-3]), 2, 1)
        K1, K2 = assemble_interface_gradient(m, geo, layout, iface, D, [1.0, 0, 0])
        comb = dense(0.5 * K1 + 2.0 * K2).real
        assert comb == pytest.approx(comb.T)
        d0 = layout.vertex_dofs[0][1]
        d1 = layout.vertex_dofs[1][1]
        # w_k = D_k q . n0 with n0 = +1: field-0 block +w0, field-1 block -w1
        assert comb[d0, d0] == pytest.approx(3e-3)
        assert comb[d1, d1] == pytest.approx(-1e-3)
        assert comb[d0, d1] == pytest.approx(0.0, abs=1e-18)


class TestConvectionBoundary:
    def test_direction_orthogonal_to_axis(self, cell1d):
        m, geo, layout, phase = cell1d
        C = assemble_convection(m, geo, layout, phase,
                                promote_diffusion(1.0, 1, 1), [0.0, 1.0, 0.0])
        assert abs(C).max() == 0.0

    def test_constant_in_null_space(self):
        m = build_structured_mesh((0, 0), (2, 1), (4, 2))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        C = assemble_convection(m, geo, layout, np.zeros(m.num_cells, dtype=int),
                                promote_diffusion(2e-3, m.num_cells, 2), [1, 1, 0])
        assert np.abs(C @ np.ones(C.shape[0])).max() < 1e-15

    def test_divergence_theorem_oracle(self):
        # 1^T C u = 2 int g.D grad(u) = 2 * boundary term <u D g . n, 1>
        L, n = 3.0, 30
        m = build_structured_mesh(0.0, L, n)
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        phase = np.zeros(m.num_cells, dtype=int)
        D = promote_diffusion(3e-3, m.num_cells, 1)
        q = np.array([1.0, 0.0, 0.0])
        C = assemble_convection(m, geo, layout, phase, D, q)
        B = assemble_boundary(m, geo, layout, phase, m.boundary_facets, D, q)
        rng = np.random.default_rng(5)
        u = rng.normal(size=layout.ndof) + 1j * rng.normal(size=layout.ndof)
        ones = np.ones(layout.ndof)
        lhs = ones @ (C @ u)
        rhs = 2.0 * (ones @ (B @ u))
        assert lhs == pytest.approx(rhs, rel=1e-12)
        # explicit flux identity: int g.D u' dx = g D (u(L) - u(0)) for P1 u
        direct = 3e-3 * (u[-1] - u[0])
        assert ones @ (C @ u) == pytest.approx(2.0 * direct, rel=1e-12)

    def test_boundary_weights_1d(self, cell1d):
        m, geo, layout, phase = cell1d
        D = promote_diffusion(2.0, 1, 1)
        B = dense(assemble_boundary(m, geo, layout, phase, m.boundary_facets,
                                    D, [1.0, 0, 0])).real
        # outward normal is -1 at x=0 and +1 at x=1, point "mass" is 1
        assert B == pytest.approx(np.diag([-2.0, 2.0]))


class TestSystemStructure:
    @pytest.fixture
    def pufem_system(self):
        m = build_structured_mesh(0.0, 10.0, 20)
        geo = geometry_tables(m)
        phase = np.array([0] * 10 + [1] * 10)
        layout = DofLayout.pufem(m, phase)
        iface = interface_facets(m, phase, geo)
        return build_system(m, geo, phase, layout, 3e-3, 1e16, 1e-5, [1.0, 0, 0],
                            interface=iface, mode="strong"), layout

    def test_symmetric_constituents(self, pufem_system):
        sysm, layout = pufem_system
        for name in ("M", "S", "R", "Q", "I", "B"):
            A = getattr(sysm, name)
            assert abs(A - A.T).max() < 1e-14, name

    def test_volume_blocks_never_couple_fields(self, pufem_system):
        sysm, layout = pufem_system
        f0 = np.nonzero(layout.dof_field == 0)[0]
        f1 = np.nonzero(layout.dof_field == 1)[0]
        for name in ("M", "S", "R", "Q", "C", "B"):
            A = dense(getattr(sysm, name))
            assert np.abs(A[np.ix_(f0, f1)]).max() == 0.0, name

    def test_only_interface_couples(self, pufem_system):
        sysm, layout = pufem_system
        f0 = np.nonzero(layout.dof_field == 0)[0]
        f1 = np.nonzero(layout.dof_field == 1)[0]
        coupling = dense(sysm.I)[np.ix_(f0, f1)]
        assert np.abs(coupling).max() > 0.0

    def test_sparsity_patterns_symmetric(self, pufem_system):
        sysm, _ = pufem_system
        for name in ("M", "S", "R", "Q", "I", "C", "K1", "K2", "B"):
            A = getattr(sysm, name).tocsr()
            pattern = A.copy()
            pattern.data = np.ones_like(pattern.data)
            assert abs(pattern - pattern.T).max() == 0.0, name

    def test_signal_weights_total_measure(self, pufem_system):
        sysm, _ = pufem_system
        assert sysm.signal_weights.sum() == pytest.approx(10.0, rel=1e-12)


def test_matrix_market_dump(tmp_path, cell1d=None):
    from dmrifem.assembly import write_matrix_market

    m = build_structured_mesh(0.0, 1.0, 3)
    geo = geometry_tables(m)
    layout = DofLayout.single(m)
    M = assemble_mass(m, geo, layout, np.zeros(3, dtype=int))
    path = tmp_path / "mass.mtx"
    write_matrix_market(path, M, comment="P1 mass")
    from scipy.io import mmread

    back = mmread(path)
    assert abs(back.tocsr() - M).max() < 1e-15


class TestFacetMass:
    def test_exterior_facet_mass_1d(self, cell1d):
        m, geo, layout, phase = cell1d
        Bm = dense(assemble_facet_mass(m, geo, layout, phase, m.boundary_facets)).real
        assert Bm == pytest.approx(np.eye(2))

    def test_edge_facet_mass_2d(self):
        m = build_structured_mesh((0, 0), (1, 1), (1, 1))
        geo = geometry_tables(m)
        layout = DofLayout.single(m)
        phase = np.zeros(m.num_cells, dtype=int)
        left = [f for f in m.boundary_facets
                if np.all(m.vertices[m.facets[f]][:, 0] == 0.0)]
        Bm = dense(assemble_facet_mass(m, geo, layout, phase, left)).real
        sub = Bm[np.ix_([0, 2], [0, 2])]
        assert sub == pytest.approx(np.array([[2, 1], [1, 2]]) / 6.0)
