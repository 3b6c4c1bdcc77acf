import numpy as np
import pytest
from scipy import special, stats

from medimux.families import FAMILIES, binary, get_family
from medimux.mixins.latent_family import LatentFamilyMixin

eta = np.linspace(-4, 4, 17)


def test_linear_mean_is_identity():
    assert np.array_equal(get_family("linear").mean(eta), eta)
    assert not get_family("linear").binary


def test_logit_mean_is_expit():
    assert np.allclose(get_family("logit").mean(eta), special.expit(eta))


def test_probit_mean_is_normal_cdf():
    assert np.allclose(get_family("probit").mean(eta), stats.norm.cdf(eta))


@pytest.mark.parametrize("name", ["logit", "probit"])
def test_binary_families_have_unit_latent_scale(name):
    family = FAMILIES[name]
    assert family.binary
    assert family.sigma3 == 1.0
    assert family.name == name


def test_logit_fisher_weights():
    y = (eta > 0).astype(float)
    weights, _ = get_family("logit").working_response(eta, y)
    mu = special.expit(eta)
    assert np.allclose(weights, mu * (1 - mu))


def test_logit_observed_weights_match_fisher_weights():
    # canonical link: observed and expected information coincide
    y = (eta > 0).astype(float)
    fisher, _ = get_family("logit").working_response(eta, y)
    observed = get_family("logit").observed_weights(eta, y)
    assert np.allclose(observed, fisher)


def test_log_likelihood_of_perfect_fit_is_near_zero():
    y = np.array([0.0, 1.0])
    ll = get_family("probit").log_likelihood(np.array([-10.0, 10.0]), y)
    assert -1e-20 < ll <= 0


def test_unknown_family():
    with pytest.raises(ValueError):
        get_family("poisson")


def test_mixin_requires_static_variables():
    with pytest.raises(NotImplementedError, match="latent, pdf_slope"):
        type("BrokenFamily", (LatentFamilyMixin,), {"name": "broken"})


def test_create_families_rebuilds_from_config(monkeypatch):
    monkeypatch.setattr(binary, "LogitFamily", binary.LogitFamily)
    monkeypatch.setattr(binary, "ProbitFamily", binary.ProbitFamily)
    configs = [
        {**config, "name": f"{config['name']}-v2"} for config in binary.family_configs
    ]
    monkeypatch.setattr(binary, "family_configs", configs)
    binary.create_families()
    assert binary.LogitFamily.name == "logit-v2"
    assert binary.ProbitFamily.name == "probit-v2"
    assert issubclass(binary.LogitFamily, LatentFamilyMixin)
