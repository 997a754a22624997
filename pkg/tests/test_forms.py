import json

import numpy as np
import pytest

from bvmr.bv_time import BVModulus, PiecewiseAffine
from bvmr.forms import (AffineFamily, Mesh1D, NonAutonomousForm, build_diagonal, build_elliptic_1d, build_form,
                        build_robin_1d, build_scalar, export_matrix_csv, mollify_form, operator_apply_H,
                        probe_bv, probe_constants)
from bvmr.gelfand import GelfandSpace
from bvmr.stepper import solve_linear

TS = np.linspace(0.0, 1.0, 101)


def test_two_element_elliptic_by_hand():
    # one interior node, hat function of width 1/2: stiffness 4, mass 1/3
    form, _ = build_elliptic_1d(Mesh1D(2), 1.0)
    assert np.allclose(form.assemble(0.3), [[13.0 / 3.0]])
    assert np.allclose(form.space.gram_H, [[1.0 / 3.0]])


def test_scalar_form_constants_and_sides():
    a = PiecewiseAffine.steps([0.5], [1.0, 2.0])
    form = build_scalar(a)
    assert (form.M, form.alpha) == (2.0, 1.0)
    assert form.jump_times == (0.5,)
    assert form.assemble(0.5, "left")[0, 0] == 1.0
    assert form.assemble(0.5)[0, 0] == 2.0
    assert form.modulus.total_variation() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        build_scalar(PiecewiseAffine.steps([0.5], [1.0, -1.0]))


def test_elliptic_declared_constants_cover_probe():
    coef = PiecewiseAffine.steps([0.25, 0.5], [1.0, 0.5, 3.0])
    form, _ = build_elliptic_1d(Mesh1D(8), [coef, 2.0], x_breaks=[0.0, 0.5, 1.0])
    M_hat, a_hat = probe_constants(form, TS, sides=("left", "right"))
    assert M_hat <= form.M * (1 + 1e-12)
    assert a_hat >= form.alpha * (1 - 1e-12)
    assert probe_bv(form, TS) >= -1e-12


def test_robin_constants_are_exact_probes():
    mesh = Mesh1D(6, "robin")
    form = build_robin_1d(mesh, PiecewiseAffine.steps([0.5], [1.0, 3.0]), PiecewiseAffine.affine(1.0, 1.0))
    M_hat, a_hat = probe_constants(form, TS, sides=("left", "right"))
    assert M_hat <= form.M * (1 + 1e-12)
    assert a_hat >= form.alpha * (1 - 1e-12)
    assert probe_bv(form, TS) >= -1e-12


def test_robin_without_shift_or_boundary_is_rejected():
    with pytest.raises(ValueError, match="coercive"):
        build_robin_1d(Mesh1D(4, "robin"), 0.0, 0.0, shift=0.0)
    with pytest.raises(ValueError):
        build_robin_1d(Mesh1D(4), 1.0, 1.0)


def test_advection_matrix_on_polynomials():
    mesh = Mesh1D(5, "robin")
    x = mesh.dof_coordinates()
    assert np.allclose(mesh.advection() @ np.ones_like(x), 0.0)
    assert np.allclose(mesh.advection() @ x, mesh.mass() @ np.ones_like(x))


def test_nodal_gradient_exact_for_linear():
    mesh = Mesh1D(7, "robin")
    x = mesh.dof_coordinates()
    assert np.allclose(mesh.nodal_gradient(3.0 * x - 1.0), 3.0)


def test_piece_indicator_partitions_elements():
    mesh = Mesh1D(8)
    ind = mesh.piece_indicator([0.0, 0.25, 1.0])
    assert np.array_equal(ind[0] + ind[1], np.ones(8))
    assert ind[0].sum() == 2
    with pytest.raises(ValueError):
        mesh.piece_indicator([0.0, 0.6, 0.5, 1.0])


def test_operator_apply_H_is_riesz_representative():
    form, _ = build_elliptic_1d(Mesh1D(6), 1.0)
    u = np.sin(np.pi * form.mesh.dof_coordinates())
    z = operator_apply_H(form, 0.2, u)
    assert np.allclose(form.space.gram_H @ z, form.assemble(0.2) @ u)


def test_diagonal_form():
    form = build_diagonal([1.0, PiecewiseAffine.steps([0.5], [2.0, 4.0])])
    assert np.allclose(form.assemble(0.75), np.diag([1.0, 4.0]))
    assert (form.M, form.alpha) == (4.0, 1.0)


def test_mollified_form_keeps_constants():
    form = build_scalar(PiecewiseAffine.steps([0.5], [1.0, 2.0]))
    for n in (4, 16):
        fn = mollify_form(form, n)
        M_hat, a_hat = probe_constants(fn, TS)
        assert abs(M_hat - form.M) < 1e-12 and abs(a_hat - form.alpha) < 1e-12
        assert fn.jump_times == ()
        assert fn.lipschitz is not None
        assert probe_bv(fn, TS) >= -1e-12


def test_generic_form_mollification_matches_affine():
    a = PiecewiseAffine.steps([0.5], [1.0, 2.0])
    affine = build_scalar(a)
    generic = NonAutonomousForm(GelfandSpace.identity(1), lambda t, side="raw": np.array([[a(t, side)]]),
                                2.0, 1.0, BVModulus(T=1.0, jumps=((0.5, 1.0),)), 1.0)
    fa, fg = mollify_form(affine, 8), mollify_form(generic, 8)
    for t in (0.4, 0.5, 0.55, 0.9):
        assert fg.assemble(t)[0, 0] == pytest.approx(fa.assemble(t)[0, 0], abs=1e-9)


def test_affine_family_jump_times():
    fam = AffineFamily([(PiecewiseAffine.steps([0.3], [1.0, 2.0]), np.eye(2)),
                        (PiecewiseAffine([0.0, 0.6, 1.0], [0.0, 1.0], [1.0, 0.0]), np.eye(2))], 1.0)
    # the ramp reaches 0.6 at t = 0.6 and restarts at 1.0
    assert fam.jump_times == (0.3, 0.6)


def test_build_form_roundtrip():
    form, _ = build_elliptic_1d(Mesh1D(6), [PiecewiseAffine.steps([0.5], [1.0, 2.0]), 1.5],
                                drift=0.5, x_breaks=[0.0, 0.5, 1.0])
    again, pert = build_form(json.loads(json.dumps(form.spec)))
    for t in (0.1, 0.5, 0.9):
        assert np.array_equal(again.assemble(t), form.assemble(t))
    # h = drift^2 + (potential - 1)^2 with the default potential 0
    assert pert is not None and pert.h_l1(1.0) == pytest.approx(1.25)
    with pytest.raises(ValueError, match="unknown builder"):
        build_form({"builder": "nope"})


def test_crank_nicolson_rejected_for_jumps():
    form = build_scalar(PiecewiseAffine.steps([0.5], [1.0, 2.0]))
    with pytest.raises(ValueError, match="Lipschitz"):
        solve_linear(form, 10, u0=[1.0], scheme="crank_nicolson")


def test_export_matrix_csv(tmp_path):
    path = tmp_path / "S.csv"
    export_matrix_csv(np.array([[1.0, 2.0], [3.0, 4.0]]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "c0,c1" and lines[2] == "3.0,4.0"
