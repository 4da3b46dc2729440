"""Model text format, the bundled HIV model, and the jet engine."""

from pathlib import Path

import pytest

from odeident import expr as E
from odeident import model as M

CORPUS = Path(__file__).parent / "corpus"
REPO_MODEL = Path(__file__).parent.parent / "models" / "hiv.ode"

hiv = M.hiv_model()
TU, TI, V = hiv.states
lam, rho, delta, N, c = hiv.const_params
eta = hiv.tv_params[0]


def _expr(text: str) -> E.Expression:
    return E.parse_expression(text, hiv.symbol_table())


# ----------------------------------------------------------------- parser

def test_hiv_model_shape():
    assert len(hiv.states) == 3
    assert len(hiv.const_params) == 5
    assert len(hiv.tv_params) == 1
    assert len(hiv.outputs) == 2
    assert hiv.output_names == ("y1", "y2")


def test_repo_model_file_matches_builtin():
    m = M.parse_model(REPO_MODEL.read_text())
    assert m.name == hiv.name
    assert [s.name for s in m.states] == [s.name for s in hiv.states]
    for a, b in zip(m.rhs, hiv.rhs):
        assert E.equivalent(a, b)
    for (na, ea), (nb, eb) in zip(m.outputs, hiv.outputs):
        assert na == nb and E.equivalent(ea, eb)


def test_hiv_rhs_and_outputs():
    assert E.equivalent(hiv.rhs_of(V), _expr("N*delta*T_I - c*V"))
    assert E.equivalent(hiv.rhs_of(TU), _expr("lambda - rho*T_U - eta*T_U*V"))
    assert E.equivalent(hiv.output_named("y1"), _expr("T_U + T_I"))
    assert E.equivalent(hiv.output_named("y2"), _expr("V"))


def test_print_parse_round_trip():
    again = M.parse_model(M.print_model(hiv))
    for a, b in zip(again.rhs, hiv.rhs):
        assert E.is_zero(E.sub(a, b))
    for (na, ea), (nb, eb) in zip(again.outputs, hiv.outputs):
        assert na == nb and E.is_zero(E.sub(ea, eb))


def test_empty_text_is_syntax_error():
    with pytest.raises(E.ParseError):
        M.parse_model("")
    with pytest.raises(E.ParseError):
        M.parse_model("# only a comment\n\n")


def test_ode_for_undeclared_state():
    text = "model m\nstates x\node x = x\node Q = x\noutput o = x\n"
    with pytest.raises(E.UndeclaredSymbol) as err:
        M.parse_model(text)
    assert err.value.name == "Q"
    assert err.value.line == 4


def test_missing_ode_line():
    text = "model m\nstates x y\node x = y\noutput o = x\n"
    with pytest.raises(M.MissingOdeForState) as err:
        M.parse_model(text)
    assert err.value.names == ["y"]


def test_duplicate_declarations():
    with pytest.raises(E.DuplicateDeclaration):
        M.parse_model("model m\nstates x x\node x = x\n")
    with pytest.raises(E.DuplicateDeclaration):
        M.parse_model("model m\nstates x\nparams x\node x = x\n")
    with pytest.raises(E.DuplicateDeclaration):
        M.parse_model("model m\nstates x\node x = x\node x = 2*x\n")
    with pytest.raises(E.DuplicateDeclaration):
        M.parse_model("model m\nstates x\node x = x\noutput x = x\n")
    with pytest.raises(E.DuplicateDeclaration):
        M.parse_model("model a\nmodel b\nstates x\node x = x\n")


def test_undeclared_symbol_in_rhs_position():
    text = "model m\nstates x\node x = x + ghost\n"
    with pytest.raises(E.UndeclaredSymbol) as err:
        M.parse_model(text)
    assert err.value.line == 3
    assert err.value.col == 13


def test_unknown_directive():
    with pytest.raises(E.ParseError):
        M.parse_model("model m\nstates x\nfoo bar\node x = x\n")


def test_output_may_not_use_derivatives():
    text = "model m\nstates x\ntvparams u\node x = u*x\noutput o = u'\n"
    with pytest.raises(E.ParseError):
        M.parse_model(text)


def test_corpus_round_trips():
    files = sorted(CORPUS.glob("*.ode"))
    assert len(files) == 10
    for path in files:
        m = M.parse_model(path.read_text())
        again = M.parse_model(M.print_model(m))
        assert again.name == m.name
        assert [s.name for s in again.states] == [s.name for s in m.states]
        for a, b in zip(again.rhs, m.rhs):
            assert E.is_zero(E.sub(a, b)), path.name
        for (na, ea), (nb, eb) in zip(again.outputs, m.outputs):
            assert na == nb and E.is_zero(E.sub(ea, eb)), path.name


# ------------------------------------------------------------------- jets

def test_jet_entry_zero_is_the_output():
    jet = M.output_jet(hiv, 1, 0)
    assert jet.entries[0] == hiv.output_named("y1")


def test_jet_first_derivative_of_virus_output():
    jet = M.output_jet(hiv, 2, 1)
    assert E.equivalent(jet.entries[1], _expr("N*delta*T_I - c*V"))


def test_jet_first_derivative_of_cell_output():
    # oracle: the sum of the first two right-hand sides, where the
    # infection terms cancel
    jet = M.output_jet(hiv, 1, 1)
    oracle = E.add(hiv.rhs_of(TU), hiv.rhs_of(TI))
    assert E.is_zero(E.sub(jet.entries[1], oracle))
    assert E.equivalent(jet.entries[1], _expr("lambda - rho*T_U - delta*T_I"))


def test_jet_eta_cancellation_in_first_cell_derivative():
    rc = E.normalize(M.output_jet(hiv, 1, 1).entries[1])
    assert all(s.kind != E.TV_DERIV for s in rc.free_symbols())


def test_jet_consistency_symbolic_to_order_six():
    for i in (1, 2):
        jet = M.output_jet(hiv, i, 6)
        for k in range(6):
            derived = M.total_time_derivative(hiv, jet.entries[k], M.DYNAMICS)
            assert E.is_zero(E.sub(jet.entries[k + 1], derived))


def test_jet_symbol_discipline():
    for i in (1, 2):
        jet = M.output_jet(hiv, i, 6)
        for k, e in enumerate(jet.entries):
            syms = E.free_symbols(e)
            assert all(s.kind != E.OUTPUT_DERIV for s in syms)
            tv_orders = [s.order for s in syms if s.kind == E.TV_DERIV]
            assert all(o <= k - 1 for o in tv_orders)


def test_jet_rejects_negative_order():
    with pytest.raises(ValueError):
        M.output_jet(hiv, 1, -1)


# ------------------------------------------- total time derivative modes

def test_dynamics_mode_state():
    got = M.total_time_derivative(hiv, E.sym(V), M.DYNAMICS)
    assert E.equivalent(got, _expr("N*delta*T_I - c*V"))


def test_dynamics_mode_chains_eta():
    e = E.sym(eta) * E.sym(V)
    got = M.total_time_derivative(hiv, e, M.DYNAMICS)
    want = E.sym(eta.derivative()) * E.sym(V) + E.sym(eta) * hiv.rhs_of(V)
    assert E.is_zero(E.sub(got, want))


def test_output_mode_product_rule():
    y1 = E.sym(M.output_symbol(hiv, 1))
    y2 = E.sym(M.output_symbol(hiv, 2))
    dy1 = E.sym(M.output_symbol(hiv, 1, 1))
    dy2 = E.sym(M.output_symbol(hiv, 2, 1))
    got = M.total_time_derivative(hiv, y1 * y2, M.OUTPUT_SYMBOLS)
    assert E.is_zero(E.sub(got, dy1 * y2 + y1 * dy2))


def test_output_mode_constant_param_is_zero():
    got = M.total_time_derivative(hiv, E.sym(lam), M.OUTPUT_SYMBOLS)
    assert got == E.ZERO


def test_mixed_symbols_rejected():
    y1 = E.sym(M.output_symbol(hiv, 1))
    with pytest.raises(M.MixedModeSymbols):
        M.total_time_derivative(hiv, y1 + E.sym(TU), M.OUTPUT_SYMBOLS)
    with pytest.raises(M.MixedModeSymbols):
        M.total_time_derivative(hiv, y1 + E.sym(TU), M.DYNAMICS)
    with pytest.raises(M.MixedModeSymbols):
        M.total_time_derivative(hiv, E.sym(TU), M.OUTPUT_SYMBOLS)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        M.total_time_derivative(hiv, E.sym(V), "bogus")
