import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmeflow.expr import ExpressionError, compile_expression
from pmeflow.fields import GridSpec
from pmeflow.model import (GrowthModel, NutrientModel, PressureLaw, SpeciesState, UnsupportedLawError,
                           fractions, growth_preset, mix_growth, pressure_from_density, total_growth,
                           u_field, validate_assumptions)


def test_pressure_law():
    law = PressureLaw(3.0)
    assert np.allclose(pressure_from_density(np.array([0.0, 0.5, 2.0]), law), [0.0, 0.125, 8.0])
    assert np.allclose(law.energy(np.array([1.0])), [0.25])
    with pytest.raises(ValueError):
        PressureLaw(0.5)
    hs = PressureLaw(math.inf)
    assert hs.incompressible and hs.to_config() == "inf"
    with pytest.raises(UnsupportedLawError):
        pressure_from_density(np.ones(3), hs)


def test_expressions():
    g = compile_expression("g0 * (1 - p / p_h) + min(n, 2) - exp(-p)", {"g0": 2.0, "p_h": 4.0})
    p, n = np.array([0.0, 2.0]), np.array([3.0, 1.0])
    assert np.allclose(g(p, n), 2 * (1 - p / 4) + np.minimum(n, 2) - np.exp(-p))
    assert g(1.0, 0.0).shape == ()
    for bad in ("p ** 2", "foo + p", "__import__('os')", "p +", "exp(p, n)"):
        with pytest.raises(ExpressionError):
            compile_expression(bad)


def test_growth_presets_and_bound():
    m = GrowthModel.from_specs([{"preset": "linear-homeostatic", "g0": 2.0}, {"expr": "-1"}], p_h=1.0)
    assert m.species == 2
    # sup |G| over p in [0, p_h + 1]: the linear law reaches 2 at p = 0 and p = 2
    assert m.bound == pytest.approx(2.0)
    g = m.evaluate(np.array([0.0, 1.0]), np.zeros(2))
    assert np.allclose(g, [[2.0, 0.0], [-1.0, -1.0]])
    with pytest.raises(KeyError):
        growth_preset("logistic")


def test_assumption_checks():
    good = validate_assumptions(GrowthModel.from_specs([{"preset": "linear-homeostatic"}], p_h=1.0))
    assert all(good[k].passed for k in ("G1", "G2", "G3", "G4"))
    flat = validate_assumptions(GrowthModel.from_specs([{"preset": "constant", "value": 0.0}], p_h=1.0))
    assert not flat["G2"].passed
    # a law growing with pressure fails G4 and the witness names the offending species
    bad = validate_assumptions(GrowthModel.from_specs([{"preset": "constant", "value": -1.0},
                                                       {"expr": "-1 + 3 * p"}], p_h=1.0))
    assert not bad["G4"].passed and bad["G4"].witness[0] in (1, 2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 1000), ell=st.integers(1, 4))
def test_fractions_partition_unity(seed, ell):
    rng = np.random.default_rng(seed)
    rho_i = rng.random((ell, 20)) * (rng.random(20) > 0.3)
    c, mask = fractions(rho_i)
    assert np.allclose(c[:, mask].sum(axis=0), 1.0)
    assert np.all(c[:, ~mask] == 0)
    g = rng.standard_normal((ell, 20))
    mixed = mix_growth(g, rho_i)
    assert np.all(mixed >= g.min(axis=0) - 1e-12) and np.all(mixed <= g.max(axis=0) + 1e-12)


def test_state_and_invariants():
    grid = GridSpec.uniform(1, -1.0, 1.0, 16)
    x = grid.axes()[0]
    rho = np.stack([np.maximum(0.5 - np.abs(x), 0), np.maximum(0.5 - np.abs(x - 0.3), 0)])
    s = SpeciesState.from_densities(grid, rho, law=PressureLaw(2.0))
    assert s.species == 2 and s.invariant_violations(p_h=1.0) == []
    assert s.field_names() == ["rho", "p", "n", "rho_1", "rho_2"]
    bad = s.evolve(p=s.p + 1e-3)
    assert any("rho^gamma" in v for v in bad.invariant_violations())
    hot = SpeciesState.from_densities(grid, 2 * rho, law=PressureLaw(2.0))
    assert any("exceeds p_h" in v for v in hot.invariant_violations(p_h=0.1))


def test_u_field_of_parabola():
    grid = GridSpec.uniform(1, -2.0, 2.0, 64)
    x = grid.axes()[0]
    law = PressureLaw(2.0)
    p = 1.0 - x**2
    s = SpeciesState(grid, 0.0, np.sqrt(np.maximum(p, 0))[None], p, np.zeros(64), law)
    model = GrowthModel.from_specs([{"preset": "constant", "value": 0.5}], p_h=1.0)
    assert np.allclose(total_growth(s, model).values, 0.5)
    u = u_field(s, model).values
    assert np.allclose(u, -2.0 * (-2.0 + 0.5), atol=1e-9)


def test_nutrient_consumption():
    nm = NutrientModel(1.0, (2.0, 0.5))
    rho_i = np.ones((2, 5))
    assert np.allclose(nm.consumption(rho_i), 2.5)
    assert np.all(NutrientModel(1.0, ()).consumption(rho_i) == 0)
