import pytest

from config_utils import load_config, load_env, parse_config_file, parse_env
from models import BenchConfig, ConfigError


def test_defaults():
    cfg = load_config(env={})
    assert cfg.t_count == 19  # event frames per sample in the published setup
    assert cfg.k == 64  # best row of the Top-K ablation
    assert cfg.template == 3  # best prompt in the template comparison
    assert cfg.max_candidates == 10  # best row of the similar-word count ablation
    assert cfg.m_count == 256
    assert cfg.margin == 0.0
    assert cfg.endpoint is None
    assert cfg == BenchConfig()


def test_precedence(tmp_path):
    path = tmp_path / "bench.cfg"
    path.write_text("# ablation settings\nk = 32\nt_count = 10  # fewer frames\nmargin = 0.5\n")
    env = {"ESTR_K": "16", "ESTR_SEED": "9", "HOME": "/root"}

    from_file = load_config(str(path), env={})
    assert (from_file.k, from_file.t_count, from_file.margin) == (32, 10, 0.5)

    with_env = load_config(str(path), env=env)
    assert (with_env.k, with_env.seed, with_env.t_count) == (16, 9, 10)

    with_flags = load_config(str(path), flags={"k": 8, "seed": None}, env=env)
    assert (with_flags.k, with_flags.seed) == (8, 9)


def test_int_flag_into_float_field():
    assert load_config(flags={"margin": 1}, env={}).margin == 1.0


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config key 'kk'"):
        parse_config_file("kk = 3\n")
    with pytest.raises(ConfigError, match="ESTR_BOGUS"):
        parse_env({"ESTR_BOGUS": "1"})


@pytest.mark.parametrize(
    "text, message",
    [
        ("k = many\n", "k expects int"),
        ("k\n", "expected 'key = value'"),
        ("template = 4\n", "template must be"),
        ("k = 300\n", "k must be in"),
        ("noise_rate = 2\n", "noise_rate"),
    ],
)
def test_bad_values(tmp_path, text, message):
    path = tmp_path / "c.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=message):
        load_config(str(path), env={})


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/bench.cfg", env={})


def test_endpoint_from_env():
    cfg = load_config(env={"ESTR_ENDPOINT": "http://127.0.0.1:5000/"})
    assert cfg.endpoint == "http://127.0.0.1:5000/"


def test_load_env_reads_dotenv(tmp_path, monkeypatch):
    # register the variable with monkeypatch so teardown removes what load_dotenv sets
    monkeypatch.setenv("ESTR_T_COUNT", "0")
    monkeypatch.delenv("ESTR_T_COUNT")
    (tmp_path / ".env").write_text("ESTR_T_COUNT=7\n")
    load_env(str(tmp_path))
    assert load_config().t_count == 7
