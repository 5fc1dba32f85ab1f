"""End-to-end acceptance checks.

Each test prints one ``CRITERION n: PASS|FAIL`` line with the measured
quantities, then asserts.  Run with ``pytest tests/test_acceptance.py -v``.
"""
import logging

import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from protonfem.adaptivity import estimate, mark
from protonfem.analytic import error_norms, exact_dose
from protonfem.assembly import TransportCoefficients, assemble_system, energy_norm, quadratic_form
from protonfem.cli import runner
from protonfem.cli.config import PRESET_SCENARIOS, Scenario
from protonfem.dose import (EnergyQuadrature, _load, dose_integrand_samples, dose_element_constant, dose_galerkin, dose_vi,
                            mass_matrix, project_galerkin, project_vi)
from protonfem.fespace import FeSpace, interpolate
from protonfem.materials import WATER_BORTFELD, MaterialField, stopping_power
from protonfem.mesh import Domain, build_spatial_grid, build_structured, refine
from protonfem.problem import solve_transport
from protonfem.solvers import complementarity_violation

log = logging.getLogger(__name__)

LEVELS = (32, 64, 128, 256)
pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def _study(name):
    sc = Scenario.preset(name)
    ex, co = sc.exact(), sc.coefficients()
    out = []
    for n in LEVELS:
        prob = sc.problem([n, n])
        V = FeSpace(prob.mesh)
        A, b = assemble_system(V, co)
        psi, rep = solve_transport(V, prob)
        l2, en = error_norms(psi, ex, co)
        out.append(dict(n=n, h=prob.mesh.diameters().max(), dofs=V.n_nodes, psi=psi, A=A, b=b,
                        energy=en, l2=l2, rep=rep))
    return sc, out


@pytest.fixture(scope="module")
def supg_study():
    return _study("example1-supg")


@pytest.fixture(scope="module")
def vi_study():
    return _study("example1-vi")


def test_criterion_1_supg_rate(supg_study, report):
    _, rows = supg_study
    h = [r["h"] for r in rows]
    e = [r["energy"] for r in rows]
    slope = runner.fitted_slope(h, e)
    pair = [f"{s:.2f}" for s in runner.pairwise_slopes(h, e)[1:]]
    ok = report(1, slope >= 1.4, f"LS slope {slope:.3f} (need >= 1.4); pairwise {pair}; "
                                 f"errors {[f'{x:.3e}' for x in e]}")
    assert ok


def test_criterion_2_vi_bounds(vi_study, report):
    sc, rows = vi_study
    g_sup = sc.g_sup
    worst, details = 0.0, []
    ok = True
    for r in rows:
        u = r["psi"].coefficients
        viol = complementarity_violation(u, r["A"] @ u - r["b"], 0.0, g_sup)
        tol = 1e-8 * np.abs(r["b"]).max()
        ok &= bool(u.min() >= 0 and u.max() <= g_sup and viol <= tol)
        details.append(f"{r['n']}^2 min {u.min():.3g} max/g_sup {u.max() / g_sup:.6f} "
                       f"compl/tol {viol / tol:.2e}")
    assert report(2, ok, "; ".join(details))


def test_criterion_3_supg_negativity(supg_study, report):
    sc, rows = supg_study
    psi = next(r["psi"] for r in rows if r["n"] == 64)
    grid = sc.dose_grid()
    D = dose_galerkin(psi, sc.materials(), sc.energy_rule(psi.space.mesh), FeSpace(grid))
    depth = grid.vertices[:, 0]
    peak = depth[np.argmax(D.values)]
    beyond = D.values[depth > peak]
    fmin = psi.coefficients.min()
    ok = bool(fmin < 0 and beyond.size and beyond.min() < 0)
    log.info("SUPG 64^2 fluence min %.4e, dose min beyond peak %.4e", fmin, beyond.min())
    assert report(3, ok, f"fluence min {fmin:.4e}; Galerkin dose min beyond peak ({peak:.3f} cm) "
                         f"{beyond.min():.4e} (peak dose {D.values.max():.4e})")


def _coercivity_cases():
    sc = Scenario.preset("example1-supg")
    co2 = sc.coefficients()
    m2a = sc.mesh([8, 8])
    m2b = refine(sc.mesh([6, 6]), [0, 3, 7, 12, 20])
    d3 = Domain([(0.0, 2.0), (-1.0, 1.0)], (1.0, 70.0), (1.0, 0.0))
    m3 = build_structured(d3, (3, 3, 3))
    mat3 = MaterialField.homogeneous(WATER_BORTFELD, (1.0, 0.0))
    return [("2D 8x8", m2a, co2), ("2D red-green", m2b, co2)] + [
        (f"3D eps={eps}", m3, TransportCoefficients((1.0, 0.0), mat3, epsilon=eps)) for eps in (0.0, 0.01)]


def test_criterion_4_coercivity(report):
    rng = np.random.default_rng(4)
    failures, trials = 0, 0
    per_case = []
    for label, mesh, co in _coercivity_cases():
        V = FeSpace(mesh)
        A, _ = assemble_system(V, co)
        case_worst = np.inf
        for _ in range(50):
            u = rng.normal(size=V.n_nodes)
            q = quadratic_form(A, u)
            en2 = energy_norm(V, co, u) ** 2
            margin = (q - en2) / en2
            trials += 1
            if q < en2 - 1e-8 * en2:
                failures += 1
            case_worst = min(case_worst, margin)
        per_case.append(f"{label}: min (A(u,u)-|||u|||^2)/|||u|||^2 = {case_worst:.3e}")
    assert report(4, failures == 0, f"{failures}/{trials} trials below bound; " + "; ".join(per_case))


def _pde_residual(ex, pts, h):
    ez, eE = np.array([h, 0.0]), np.array([0.0, h])
    dz = (ex(pts + ez) - ex(pts - ez)) / (2 * h)
    Sp = lambda q: stopping_power(ex.material, q[:, 1]) * ex(q)
    dE = (Sp(pts + eE) - Sp(pts - eE)) / (2 * h)
    return np.abs(dz - dE) / (np.abs(dz) + np.abs(dE))


def test_criterion_5_consistency(report):
    sc = Scenario.preset("example1-supg")
    ex, co = sc.exact(), sc.coefficients()
    hs, rs = [], []
    for n in LEVELS:
        V = FeSpace(sc.mesh([n, n]))
        A, b = assemble_system(V, co)
        r = b - A @ interpolate(V, ex).coefficients
        rs.append(np.sqrt(r @ spsolve(mass_matrix(V).tocsc(), r)))
        hs.append(V.diameters.max())
    slope = runner.fitted_slope(hs, rs)
    # characteristic points inside the beam
    rng = np.random.default_rng(5)
    mat = ex.material
    s = rng.normal(62.0, 0.93, 400)
    z = rng.uniform(0.0, 3.0, 400)
    E = s**mat.p - z / mat.alpha
    keep = E > 1.5**mat.p
    pts = np.column_stack([z[keep], E[keep] ** (1 / mat.p)])[:100]
    r1, r2 = _pde_residual(ex, pts, 1e-3), _pde_residual(ex, pts, 5e-4)
    ratio = float(np.median(r1 / r2))
    ok = bool(slope >= 1.0 and len(pts) == 100 and r1.max() < 1e-3 and ratio >= 2.0)
    assert report(5, ok, f"interpolant residual slope {slope:.3f} (need >= 1); "
                         f"PDE FD residual max {r1.max():.2e} at h=1e-3, median halving ratio {ratio:.2f}")


def test_criterion_6_adaptive_efficiency(vi_study, report):
    _, rows = vi_study
    target, uniform_dofs = rows[-1]["energy"], rows[-1]["dofs"]
    sc = Scenario.preset("example1-adaptive")
    prob = sc.problem()
    theta = sc.config["adaptivity"]["theta"]
    mesh, hit, history = prob.mesh, None, []
    # solve-estimate-mark-refine until the finest uniform error is matched
    # or the adaptive mesh is as large as the uniform one
    while True:
        V = FeSpace(mesh)
        psi, _ = solve_transport(V, prob)
        _, err = error_norms(psi, prob.exact, prob.coeffs)
        history.append((V.n_nodes, err))
        if err <= target:
            hit = (len(history) - 1, V.n_nodes, err)
            break
        if V.n_nodes >= uniform_dofs:
            break
        mesh = refine(mesh, mark(estimate(V, prob.coeffs, psi), theta))
    ok = hit is not None and hit[1] < 0.5 * uniform_dofs
    got = f"{hit[1]} dofs at level {hit[0]} (error {hit[2]:.4e})" if hit else "never reached"
    trace = ", ".join(f"{d}:{e:.3e}" for d, e in history)
    assert report(6, ok, f"uniform 256^2: {uniform_dofs} dofs, error {target:.4e}; adaptive: {got}; "
                         f"ratio {hit[1] / uniform_dofs if hit else float('nan'):.3f}; levels {trace}")


def _dose_l2_error(D, ex, rho):
    V = FeSpace(D.mesh)
    x, w, basis = V.cell_quadrature(6)
    pts = x.reshape(-1, V.dim)
    exact = exact_dose(ex, pts, rho=rho).reshape(w.shape)
    approx = np.einsum("mi,qi->mq", D.values[V.cells], basis)
    return float(np.sqrt((w * (approx - exact) ** 2).sum())), float(np.sqrt((w * exact**2).sum()))


def test_criterion_7_dose_projections(vi_study, report):
    sc, rows = vi_study
    mats = sc.materials()
    parts = []
    # (a) element-constant and (b) VI dose from the VI fluence
    psi = next(r["psi"] for r in rows if r["n"] == 64)
    eq = EnergyQuadrature.from_mesh(psi.space.mesh)
    grid = build_spatial_grid([(0.0, 4.0)], [64])
    d_el = dose_element_constant(psi, mats, eq, grid)
    ok_a = bool(d_el.values.min() >= 0)
    V = FeSpace(grid)
    d_vi = dose_vi(psi, mats, eq, V)
    b = _load(V, lambda p: dose_integrand_samples(psi, mats, eq, p))
    viol = complementarity_violation(d_vi.values, mass_matrix(V) @ d_vi.values - b, 0.0, np.inf)
    ok_b = bool(d_vi.values.min() >= 0 and viol <= 1e-8 * np.abs(b).max())
    parts.append(f"(a) element min {d_el.values.min():.3e}")
    parts.append(f"(b) VI min {d_vi.values.min():.3e}, compl {viol:.2e}")
    # (c) a narrow nonnegative spike whose L2 projection undershoots
    Vc = FeSpace(build_spatial_grid([(0.0, 1.0)], [6]))
    spike = lambda p: np.exp(-((np.asarray(p)[:, 0] - 0.45) / 0.02) ** 2)
    g = project_galerkin(Vc, spike, degree=12)
    v = project_vi(Vc, spike, degree=12)
    ok_c = bool(g.values.min() < 0 and v.values.min() >= 0)
    parts.append(f"(c) spike Galerkin min {g.values.min():.3e}, VI min {v.values.min():.3e}")
    # (d) paired refinement of fluence mesh and dose grid
    ex = sc.exact()
    hs, errs = [], []
    for r in rows:
        eq = EnergyQuadrature.from_mesh(r["psi"].space.mesh)
        grid = build_spatial_grid([(0.0, 4.0)], [r["n"]])
        D = dose_galerkin(r["psi"], mats, eq, FeSpace(grid))
        err, ref = _dose_l2_error(D, ex, mats.material_at([0.0]).rho)
        hs.append(r["h"])
        errs.append(err / ref)
    rate = runner.fitted_slope(hs, errs)
    ok_d = rate >= 1.0
    parts.append(f"(d) Galerkin dose rel. L2 errors {[f'{e:.3e}' for e in errs]}, rate {rate:.3f}")
    assert report(7, ok_a and ok_b and ok_c and ok_d, "; ".join(parts))


def _example3(eps):
    raw = {k: v for k, v in PRESET_SCENARIOS["example3"].items() if k != "scatter"}
    raw["scatter"] = {"epsilon": eps}
    return Scenario.from_dict(raw)


def test_criterion_8_angular_diffusion(report):
    peaks, m2 = [], []
    z = np.linspace(-1.0, 1.0, 401)
    for eps in (0.0, 0.005, 0.01, 0.1):
        sc = _example3(eps)
        prob = sc.problem()
        psi, _ = solve_transport(FeSpace(prob.mesh), prob)
        D = runner.make_dose(sc, psi)
        x_pk = D.peak_location()[0]
        col = D.evaluate(np.column_stack([np.full_like(z, x_pk), z]))
        mass = np.trapezoid(col, z)
        zbar = np.trapezoid(col * z, z) / mass
        m2.append(np.trapezoid(col * (z - zbar) ** 2, z) / mass)
        peaks.append(D.values.max())
    ratio = [p / peaks[0] for p in peaks]
    ok = bool(np.all(np.diff(ratio) < 0) and np.all(np.diff(m2) > 0))
    assert report(8, ok, f"peak ratio {[f'{r:.4f}' for r in ratio]}; "
                         f"second moment {[f'{m:.4e}' for m in m2]}")


def test_criterion_9_orbital(tmp_path, report):
    sc = Scenario.preset("example4-orbital")
    s = runner.run(sc, tmp_path)
    ok = bool(s.fluence_min >= 0 and s.fluence_max <= s.g_sup and 2.7 <= s.dose_peak_depth <= 3.7)
    assert report(9, ok, f"fluence min {s.fluence_min:.3e}, max/g_sup {s.fluence_max / s.g_sup:.6f}, "
                         f"dose peak depth {s.dose_peak_depth:.3f} cm")
