import pytest

from fedjcpba import config
from fedjcpba.errors import ParseError, UnknownKey, ValidationError


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = config.load_scenario(path)
    assert cfg == config.default_scenario()
    assert cfg.population.n_clients == 8
    assert cfg.link.total_bandwidth_hz == 1e8
    assert cfg.link.path_loss_db == 60
    assert (cfg.link.server_power_w, cfg.link.client_power_w) == (10, 0.2)
    assert cfg.population.f0_flops == 1e12
    assert cfg.population.memory_range_gb == [4.0, 8.0]
    assert cfg.model.preset == "gpt2-medium"


def test_inverted_beta_bounds():
    with pytest.raises(ValidationError) as err:
        config.loads("constraints:\n  beta_min: 0.9\n  beta_max: 0.5\n")
    assert err.value.key == "constraints.beta_min"


def test_unknown_key_named():
    with pytest.raises(UnknownKey) as err:
        config.loads("link:\n  bandwith_hz: 1e6\n")
    assert err.value.key == "link.bandwith_hz"
    with pytest.raises(UnknownKey):
        config.loads("colour: red\n")


def test_exponent_strings_accepted():
    cfg = config.loads("link:\n  total_bandwidth_hz: 2e8\n  noise_power_w: 1e-12\n")
    assert cfg.link.total_bandwidth_hz == 2e8
    assert cfg.link.noise_power_w == 1e-12


@pytest.mark.parametrize("text,key", [
    ("population:\n  n_clients: 0\n", "population.n_clients"),
    ("population:\n  n_clients: two\n", "population.n_clients"),
    ("simulation:\n  policy: greedy\n", "simulation.policy"),
    ("model:\n  preset: llama\n", "model.preset"),
    ("model:\n  adapter_layers: [22, 23]\n", "model.adapter_layers"),
    ("population:\n  speed_range: [2.0, 1.0]\n", "population.speed_range"),
    ("link:\n  total_bandwidth_hz: -1\n", "link.total_bandwidth_hz"),
])
def test_validation_errors_name_key(text, key):
    with pytest.raises(ValidationError) as err:
        config.loads(text)
    assert err.value.key == key


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        config.loads("link: [unclosed\n")
    with pytest.raises(ParseError):
        config.load_scenario(tmp_path / "missing.yaml")


def test_round_trip():
    cfg = config.loads("population:\n  n_clients: 3\nsimulation:\n  seed: 7\n"
                       "model:\n  emulator_layers: [0, 20]\n  adapter_layers: [21, 23]\n")
    again = config.loads(cfg.to_yaml())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_digest_sensitive_to_content():
    a = config.default_scenario()
    b = config.loads("simulation:\n  seed: 1\n")
    assert a.digest() != b.digest()
    assert len(a.digest()) == 16


def test_explicit_descriptor():
    cfg = config.loads("model:\n  preset: null\n  n_layers: 4\n  d_model: 64\n"
                       "  n_heads: 4\n  d_ff: 256\n  vocab_size: 100\n  n_positions: 32\n"
                       "  seq_len: 16\n  adapter_n_layers: 1\n")
    desc = cfg.model.descriptor()
    assert (desc.n_layers, desc.d_model, desc.head_dim) == (4, 64, 16)
    assert cfg.model.partition().n_adapter == 1


def test_explicit_descriptor_missing_field():
    with pytest.raises(ValidationError) as err:
        config.loads("model:\n  preset: null\n  n_layers: 4\n")
    assert err.value.key.startswith("model.")
