"""Mechanics assembly, boundary data, linear solver and the Newton driver."""

import numpy as np
import pytest
import scipy.sparse as sp

from cellforge.geometry import Ball, Box, HalfSpace, HoleListPlate
from cellforge.material import (
    ElasticParams,
    HardeningParams,
    Material,
    MaterialPointState,
    ThermalExpansion,
)
from cellforge.mesh import GridSpec, activate_dofs, build_base_mesh, eval_solution, refine_cells
from cellforge.quadrature import NnmfConfig, QuadratureSettings
from cellforge.solver import (
    FACE_DEPTH,
    DirichletBC,
    LinearSolveError,
    LoadProgram,
    MechanicsSetup,
    NewtonConfig,
    NewtonDivergence,
    Traction,
    assemble,
    build_discretization,
    linear_solve,
    parse_face,
    project_face,
    run_load_steps,
    strain_energy,
    traction_vector,
)

E, NU = 70.0, 0.3
ELASTIC = Material(ElasticParams(E, NU))
PLASTIC = Material(ElasticParams(E, NU), HardeningParams.linear(0.243, 0.2))
STRETCH = 0.01
PATCH_TOL = 1e-10
ALIGNED_CUT = 0.5 + 29.0 / 64.0


def discretize(lower, upper, counts, degrees, domain=None, scheme="nnmf", refine=(), settings=None):
    mesh = build_base_mesh(GridSpec.from_box(lower, upper, counts), degrees, schedule="constant")
    if refine:
        mesh = refine_cells(mesh, refine)
    dofmap = activate_dofs(mesh, len(counts))
    domain = domain if domain is not None else Box(lower, upper)
    return build_discretization(mesh, dofmap, domain, 1e-8, settings or QuadratureSettings(scheme=scheme))


def uniaxial_program(dim, increments=1, monitors=None):
    bcs = [DirichletBC("x-", 0, 0.0), DirichletBC("y-", 1, 0.0), DirichletBC("x+", 0, STRETCH)]
    if dim == 3:
        bcs.append(DirichletBC("z-", 2, 0.0))
    return LoadProgram(increments=increments, dirichlet=bcs, monitors=monitors or {"right": ("x+", 0)})


def hole_plate_setup(increments=5):
    domain = HoleListPlate((0.0, 0.0), (2.0, 2.0), ((0.0, 0.0, 1.0),))
    disc = discretize((0, 0), (2, 2), (4, 4), 2, domain)
    program = LoadProgram(increments=increments, dirichlet=[
        DirichletBC("x-", 0, 0.0), DirichletBC("y-", 1, 0.0), DirichletBC("y+", 1, 0.02)],
        monitors={"top": ("y+", 1), "bottom": ("y-", 1)})
    return disc, program


def translation(dofmap, comp):
    """Coefficients of a unit rigid translation: vertex modes only."""
    t = np.zeros(dofmap.ndofs)
    for (level, c), (off, n) in dofmap.components.items():
        if all(ci % 2 == 0 for ci in c):
            t[off * dofmap.ncomp + comp] = 1.0
    return t


def value_at(disc, u, x):
    return eval_solution(disc.dofmap, u, x)[0]


class TestAssembly:
    def test_zero_displacement_zero_force(self):
        disc = discretize((0, 0), (1, 1), (2, 2), 2)
        f, K = assemble(disc, ELASTIC, MaterialPointState.zeros(disc.nq), np.zeros(disc.dofmap.ndofs))
        assert not f.any()
        K = K.toarray()
        np.testing.assert_allclose(K, K.T, atol=1e-14 * np.abs(K).max())
        assert np.linalg.eigvalsh(K).min() > -1e-10 * np.abs(K).max()

    def test_rigid_modes_in_kernel(self):
        disc = discretize((0, 0), (1, 1), (2, 2), 3)
        _, K = assemble(disc, ELASTIC, MaterialPointState.zeros(disc.nq), np.zeros(disc.dofmap.ndofs))
        dm = disc.dofmap
        r = np.zeros(dm.ndofs)
        # rigid rotation (-y, x) expressed by the bilinear vertex modes
        for (level, c), (off, n) in dm.components.items():
            if all(ci % 2 == 0 for ci in c):
                x, y = c[0] / 4.0, c[1] / 4.0
                r[2 * off], r[2 * off + 1] = -y, x
        assert np.abs(K @ r).max() <= 1e-12 * np.abs(K).max()

    def test_internal_force_is_gradient_of_energy(self):
        disc = discretize((0, 0), (1, 1), (2, 1), 2)
        rng = np.random.default_rng(4)
        u = rng.normal(size=disc.dofmap.ndofs) * 1e-3
        f, K = assemble(disc, ELASTIC, MaterialPointState.zeros(disc.nq), u)
        setup = MechanicsSetup(ELASTIC)
        h = 1e-6
        for i in rng.choice(disc.dofmap.ndofs, 5, replace=False):
            e = np.zeros_like(u)
            e[i] = h
            fd = (strain_energy(disc, setup, u + e) - strain_energy(disc, setup, u - e)) / (2 * h)
            assert f[i] == pytest.approx(fd, rel=1e-6, abs=1e-10)
        assert strain_energy(disc, setup, u) == pytest.approx(0.5 * u @ (K @ u), rel=1e-12)

    def test_vector_map_required(self):
        mesh = build_base_mesh(GridSpec.from_box((0, 0), (1, 1), (1, 1)), 1)
        disc = build_discretization(mesh, activate_dofs(mesh, 1), Box((0, 0), (1, 1)), 1e-8)
        with pytest.raises(ValueError):
            assemble(disc, ELASTIC, MaterialPointState.zeros(disc.nq), np.zeros(disc.dofmap.ndofs))


class TestBoundaryData:
    def test_parse_face(self):
        assert parse_face("z+") == (2, 1)
        assert parse_face((1, 0)) == (1, 0)
        with pytest.raises(ValueError):
            parse_face("w+")

    def test_face_projection_reproduces_polynomial(self):
        disc = discretize((0, 0), (1, 2), (2, 3), 3)
        ids, coef = project_face(disc.dofmap, 0, 1, lambda x: x[:, 1] ** 2 - x[:, 1])
        u = np.zeros(disc.dofmap.ndofs // 2)
        u[ids] = coef
        from cellforge.mesh import eval_field
        ys = np.linspace(0, 2, 9)
        vals = eval_field(activate_dofs(disc.mesh, 1), u, np.column_stack([np.ones_like(ys), ys]))[0]
        np.testing.assert_allclose(np.ravel(vals), ys**2 - ys, atol=1e-12)

    def test_traction_resultant(self):
        disc = discretize((0, 0), (2, 1), (2, 2), 2)
        f = traction_vector(disc.dofmap, Traction("x+", (3.0, -1.0)))
        assert f @ translation(disc.dofmap, 0) == pytest.approx(3.0, rel=1e-14)
        assert f @ translation(disc.dofmap, 1) == pytest.approx(-1.0, rel=1e-14)

    def test_traction_restricted_to_physical_face(self):
        domain = HalfSpace((0.0, 1.0), 0.7313)
        disc = discretize((0, 0), (2, 1), (2, 2), 2, domain)
        f = traction_vector(disc.dofmap, Traction("x+", (1.0, 0.0)), domain)
        # the cut face leaf has length 0.5 and is bisected FACE_DEPTH times
        assert f @ translation(disc.dofmap, 0) == pytest.approx(0.7313, abs=0.5 / 2**FACE_DEPTH)

    def test_traction_on_aligned_cut_face_is_exact(self):
        domain = HalfSpace((0.0, 1.0, 0.0), 0.75)
        disc = discretize((0, 0, 0), (2, 1, 1), (1, 2, 1), 2, domain)
        f = traction_vector(disc.dofmap, Traction("x+", (0.0, 0.0, 2.0)), domain)
        assert f @ translation(disc.dofmap, 2) == pytest.approx(1.5, rel=1e-13)

    def test_program_validation(self):
        with pytest.raises(ValueError):
            LoadProgram(increments=0)
        with pytest.raises(ValueError):
            LoadProgram(rate=-1.0)
        with pytest.raises(ValueError):
            LoadProgram(rate=1.0).time_step()
        assert LoadProgram(increments=4, rate=0.5, dirichlet=[DirichletBC("x+", 0, 2.0)]).time_step() == 1.0


class TestLinearSolve:
    def test_spd_example(self):
        K = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
        np.testing.assert_allclose(linear_solve(K, [1.0, 2.0]), [1 / 11, 7 / 11], rtol=1e-14)

    def test_laplacian(self):
        n = 50
        K = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
        x = np.random.default_rng(0).normal(size=n)
        np.testing.assert_allclose(linear_solve(K, K @ x), x, rtol=1e-10)

    def test_indefinite_rejected(self):
        with pytest.raises(LinearSolveError):
            linear_solve(sp.csr_matrix(np.diag([1.0, -1.0])), [1.0, 1.0])

    def test_singular_rejected(self):
        with pytest.raises(LinearSolveError):
            linear_solve(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), [1.0, 0.0])

    def test_empty(self):
        assert linear_solve(sp.csr_matrix((0, 0)), np.zeros(0)).size == 0


class TestElasticPatch:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_uniaxial_box(self, dim):
        lower, upper = (0.0,) * dim, (2.0,) + (1.0,) * (dim - 1)
        disc = discretize(lower, upper, (2,) + (1,) * (dim - 1), 2)
        res = run_load_steps(disc, MechanicsSetup(ELASTIC), uniaxial_program(dim))
        ex = STRETCH / 2.0
        if dim == 2:  # plane strain
            lateral, sxx = -NU / (1 - NU) * ex, E / (1 - NU**2) * ex
        else:
            lateral, sxx = -NU * ex, E * ex
        x = np.array([1.3, 0.4, 0.7][:dim])
        u = value_at(disc, res.u, x)
        assert u[0] == pytest.approx(ex * x[0], abs=PATCH_TOL)
        assert u[1] == pytest.approx(lateral * x[1], abs=PATCH_TOL)
        assert res.steps[-1].reactions["right"] == pytest.approx(sxx, rel=1e-10)
        assert res.steps[-1].iterations == 1

    @pytest.mark.parametrize("scheme", ["nnmf", "ast"])
    def test_cut_patch(self, scheme):
        # the free cut edge is parallel to the load, so the uniform state is exact
        domain = HalfSpace((0.0, 1.0), ALIGNED_CUT)
        disc = discretize((0, 0), (2, 1), (4, 2), 2, domain, scheme=scheme, refine=(0, 5))
        res = run_load_steps(disc, MechanicsSetup(ELASTIC), uniaxial_program(2))
        ex = STRETCH / 2.0
        for x in [(0.3, 0.2), (1.1, 0.7), (1.9, 0.9)]:
            u = value_at(disc, res.u, np.array(x))
            assert u[0] == pytest.approx(ex * x[0], abs=PATCH_TOL)
            assert u[1] == pytest.approx(-NU / (1 - NU) * ex * x[1], abs=PATCH_TOL)

    def test_free_thermal_expansion(self):
        gamma, dT = 1.2e-5, 150.0
        mat = Material(ElasticParams(E, NU), expansion=ThermalExpansion(gamma), T0=300.0)
        disc = discretize((0, 0, 0), (1, 1, 1), (1, 1, 1), 1)
        program = LoadProgram(dirichlet=[DirichletBC("x-", 0), DirichletBC("y-", 1), DirichletBC("z-", 2)])
        res = run_load_steps(disc, MechanicsSetup(mat, np.full(disc.nq, 300.0 + dT)), program)
        u = value_at(disc, res.u, np.array([1.0, 1.0, 1.0]))
        np.testing.assert_allclose(u, gamma * dT, rtol=1e-10)

    def test_strain_energy_of_uniform_state(self):
        disc = discretize((0, 0, 0), (2, 1, 1), (2, 1, 1), 2)
        res = run_load_steps(disc, MechanicsSetup(ELASTIC), uniaxial_program(3))
        ex = STRETCH / 2.0
        assert strain_energy(disc, MechanicsSetup(ELASTIC), res.u) == pytest.approx(0.5 * E * ex**2 * 2.0, rel=1e-10)


class TestNewton:
    def test_reaction_balance(self):
        disc, program = hole_plate_setup()
        res = run_load_steps(disc, MechanicsSetup(PLASTIC), program)
        for rec in res.steps:
            top, bottom = rec.reactions["top"], rec.reactions["bottom"]
            assert top > 0
            assert abs(top + bottom) <= 1e-6 * abs(top)

    def test_deterministic(self):
        disc, program = hole_plate_setup(increments=3)
        a = run_load_steps(disc, MechanicsSetup(PLASTIC), program)
        b = run_load_steps(disc, MechanicsSetup(PLASTIC), program)
        assert np.array_equal(a.u, b.u)
        assert [s.residuals for s in a.steps] == [s.residuals for s in b.steps]

    def test_quadratic_convergence(self):
        disc, program = hole_plate_setup()
        res = run_load_steps(disc, MechanicsSetup(PLASTIC), program, NewtonConfig(tol=1e-12))
        orders = []
        for rec in res.steps:
            r = [v for v in rec.residuals if v > 1e-13 * rec.residuals[0]]
            for a, b, c in zip(r, r[1:], r[2:]):
                if c < 1e-3 * a:
                    orders.append(np.log(c / b) / np.log(b / a))
        assert orders and max(orders) >= 1.8

    def test_plastic_zone_starts_at_hole(self):
        disc, program = hole_plate_setup()
        res = run_load_steps(disc, MechanicsSetup(PLASTIC), program)
        pts = disc.points()
        r = np.hypot(pts[:, 0], pts[:, 1])
        phys = disc.alphas() >= 1.0
        k = np.argmax(np.where(phys, res.states.ebar, -1.0))
        assert res.states.ebar[k] > 0
        assert r[k] < 1.3

    def test_iteration_limit_reported(self):
        disc, program = hole_plate_setup(increments=1)
        with pytest.raises(NewtonDivergence) as info:
            run_load_steps(disc, MechanicsSetup(PLASTIC), program, NewtonConfig(max_iter=1))
        assert info.value.step == 1

    def test_unsupported_dofs_stay_zero(self):
        domain = Ball((0.0, 0.0), 1.2)
        disc = discretize((0, 0), (2, 2), (2, 2), 2, domain)
        program = LoadProgram(dirichlet=[DirichletBC("x-", 0), DirichletBC("y-", 1)],
                              tractions=[Traction("x+", (0.1, 0.0))])
        res = run_load_steps(disc, MechanicsSetup(ELASTIC), program)
        held = disc.unsupported()
        assert len(held) > 0
        assert not res.u[held].any()


class TestQuadratureBackends:
    def test_nnmf_matches_ast_stiffness(self):
        domain = Ball((0.0, 0.0), 1.3)
        nnmf = discretize((0, 0), (2, 2), (2, 2), 2, domain,
                          settings=QuadratureSettings(scheme="nnmf", nnmf=NnmfConfig(moment_depth=8)))
        ast = discretize((0, 0), (2, 2), (2, 2), 2, domain, settings=QuadratureSettings(scheme="ast", ast_depth=8))
        u = np.zeros(nnmf.dofmap.ndofs)
        Ka = assemble(nnmf, ELASTIC, MaterialPointState.zeros(nnmf.nq), u)[1].toarray()
        Kb = assemble(ast, ELASTIC, MaterialPointState.zeros(ast.nq), u)[1].toarray()
        assert np.linalg.norm(Ka - Kb) <= 1e-4 * np.linalg.norm(Kb)
        assert nnmf.nq < 0.1 * ast.nq
