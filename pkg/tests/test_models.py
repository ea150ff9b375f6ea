import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from branchimm.models import (ByPopulationLevel, FiniteSet, LatticeKernel,
                              MarkovChainEnv, MomentSeries, PopulationState,
                              RateDistribution, RateParams, SingleSite,
                              SpatialField, Torus, environment_from_dict,
                              space_from_dict, validate, validate_environment)


def test_validate_well_formed_model():
    report = validate(RateParams(beta=1, mu=2, k=3), SingleSite())
    assert report.ok
    assert report.problems == ()


def test_validate_negative_rate():
    report = validate(RateParams(beta=-1, mu=2, k=3), SingleSite())
    assert any("beta negative" in p for p in report.problems)


def test_validate_kernel_normalization():
    kern = LatticeKernel.from_dict_support(1, {1: 0.5, -1: 0.4})
    assert any("kernel weights sum" in p for p in kern.problems())


def test_kernel_asymmetry_detected():
    kern = LatticeKernel(dim=1, support=(((1,), 0.6), ((-1,), 0.4)))
    assert any("asymmetric" in p for p in kern.problems())


def test_kernel_zero_offset_rejected():
    kern = LatticeKernel(dim=1, support=(((0,), 1.0),))
    assert any("zero offset" in p for p in kern.problems())


def test_nearest_neighbor_kernel():
    kern = LatticeKernel.nearest_neighbor(2)
    assert kern.problems() == []
    assert kern.total_weight() == pytest.approx(1.0)
    assert kern.max_offset() == 1


def test_torus_wraparound_guard():
    kern = LatticeKernel.nearest_neighbor(1)
    assert Torus(side=2, dim=1, kernel=kern).problems()
    assert not Torus(side=3, dim=1, kernel=kern).problems()


def test_finite_set_checks():
    a = np.array([[0.0, 1.0], [2.0, 0.0]])
    space = FiniteSet.from_matrix(a, symmetric=True)
    assert any("not symmetric" in p for p in space.problems())
    ok = FiniteSet.from_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), symmetric=True)
    assert ok.problems() == []


def test_population_state_invariants():
    s = PopulationState(time=1.0, counts=(1, 2, 0))
    assert s.total == 3
    with pytest.raises(ValueError):
        PopulationState(time=0.0, counts=(-1,))


def test_moment_series_invariants():
    with pytest.raises(ValueError):
        MomentSeries(grid=(1.0, 1.0), values=(0.0, 0.0), stderr=(0.0, 0.0),
                     label="m1")
    with pytest.raises(ValueError):
        MomentSeries(grid=(1.0, 2.0), values=(0.0, 0.0), stderr=(0.0, -1.0),
                     label="m1")


def test_environment_bounds_checked():
    env = ByPopulationLevel(beta=RateDistribution("uniform", 0.5, 2.0),
                            mu=RateDistribution("constant", 1.0),
                            k=RateDistribution("constant", 1.0),
                            c_minus=0.6, c_plus=2.0)
    assert any("outside" in p for p in env.problems())
    ok = ByPopulationLevel(beta=RateDistribution("uniform", 0.5, 2.0),
                           mu=RateDistribution("constant", 1.0),
                           k=RateDistribution("constant", 1.0),
                           c_minus=0.5, c_plus=2.0)
    assert validate_environment(ok).ok


def test_spatial_field_band_checked():
    torus = Torus(side=4, dim=1, kernel=LatticeKernel.nearest_neighbor(1))
    env = SpatialField(space=torus, beta=(1.0,) * 4, mu=(2.0,) * 4,
                       k_breaks=(0.0,), k_values=((0.1,) * 4,),
                       delta1=0.5, delta2=1.5)
    assert any("band" in p for p in env.problems())


rate_params = st.builds(
    RateParams,
    beta=st.floats(0, 5, allow_nan=False),
    mu=st.floats(0, 5, allow_nan=False),
    k=st.floats(0, 5, allow_nan=False),
    kappa=st.floats(0, 3, allow_nan=False),
)


@settings(max_examples=50, deadline=None)
@given(rate_params)
def test_rate_params_round_trip(params):
    dumped = yaml.safe_dump(params.to_dict())
    assert RateParams.from_dict(yaml.safe_load(dumped)) == params


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3))
def test_kernel_round_trip(dim, reach):
    items = {}
    for axis in range(dim):
        for r in range(1, reach + 1):
            off = tuple(r if a == axis else 0 for a in range(dim))
            neg = tuple(-c for c in off)
            items[off] = float(r)
            items[neg] = float(r)
    total = sum(items.values())
    kern = LatticeKernel.from_dict_support(
        dim, {o: w / total for o, w in items.items()})
    assert kern.problems() == []
    dumped = yaml.safe_dump(kern.to_dict())
    assert LatticeKernel.from_dict(yaml.safe_load(dumped)) == kern


def test_space_round_trip():
    spaces = [
        SingleSite(),
        FiniteSet.from_matrix(np.array([[0.0, 0.5], [0.5, 0.0]]), symmetric=True),
        Torus(side=8, dim=1, kernel=LatticeKernel.nearest_neighbor(1)),
    ]
    for space in spaces:
        dumped = yaml.safe_dump(space.to_dict())
        assert space_from_dict(yaml.safe_load(dumped)) == space


def test_environment_round_trip():
    envs = [
        ByPopulationLevel(beta=RateDistribution("two_point", 0.5, 2.0, p=0.3),
                          mu=RateDistribution("constant", 1.0),
                          k=RateDistribution("uniform", 0.5, 1.5),
                          c_minus=0.5, c_plus=2.0),
        MarkovChainEnv(beta=(1.0, 1.0), mu=(2.0, 3.0), k=(1.0, 2.0),
                       switch_rates=((0.0, 1.0), (0.5, 0.0))),
        SpatialField(space=Torus(side=4, dim=1,
                                 kernel=LatticeKernel.nearest_neighbor(1)),
                     beta=(1.0,) * 4, mu=(2.0,) * 4, k_breaks=(0.0, 2.0),
                     k_values=((1.0,) * 4, (1.2,) * 4), delta1=0.9, delta2=1.3),
    ]
    for env in envs:
        dumped = yaml.safe_dump(env.to_dict())
        assert environment_from_dict(yaml.safe_load(dumped)) == env
