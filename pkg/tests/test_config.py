import pytest

from hypokinetic.config import SCHEMA, Config, ConfigError, default_config_text, load_config, parse_config


class TestParse:
    def test_defaults_round_trip(self):
        cfg = parse_config(default_config_text())
        assert cfg.values == Config().values

    def test_values_typed(self):
        cfg = parse_config("[grid]\nnx = 8\nlx = 1.5\n[time]\ncollision_rule = implicit  # comment\n")
        assert cfg["grid"]["nx"] == 8 and isinstance(cfg["grid"]["nx"], int)
        assert cfg["grid"]["lx"] == 1.5
        assert cfg["time"]["collision_rule"] == "implicit"
        assert cfg["grid"]["nv"] == SCHEMA["grid"]["nv"][1]

    @pytest.mark.parametrize("text,needle", [
        ("[grid]\nnz = 4\n", "nz"),
        ("[mesh]\nnx = 4\n", "mesh"),
        ("[grid]\nnx = four\n", "nx"),
        ("[scaling]\nkn = 2\n", "kn"),
        ("[model]\nmodel = boltzmann\n", "model"),
        ("[uq]\nlmax = 11\n", "lmax"),
        ("[uq]\ncollocation_nodes = 8\n", "collocation_nodes"),
        ("nx = 4\n", "malformed"),
    ])
    def test_rejects_and_names_key(self, text, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config(text)

    def test_override(self):
        cfg = Config()
        cfg.override("scaling", "kn", "0.1")
        assert cfg["scaling"]["kn"] == 0.1
        with pytest.raises(ConfigError):
            cfg.override("scaling", "knudsen", 0.1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")
        assert load_config(None).values == Config().values


class TestValidate:
    def test_scenario_built(self):
        cfg = parse_config("[grid]\nnx = 8\nnv = 8\n[scaling]\nscaling = parabolic\nkn = 0.1\n[sigma]\nkind = affine\nsigma1 = 0.5\n")
        scen = cfg.validate()
        assert (scen.nx, scen.nv, scen.kn, scen.scaling) == (8, 8, 0.1, "parabolic")
        assert scen.sigma.kind == "affine"

    def test_constant_sigma_is_affine(self):
        assert Config().sigma_model().c1([0.0]) == 0.0

    @pytest.mark.parametrize("text,needle", [
        ("[sigma]\nkind = affine\nsigma1 = 2.0\n", "sigma"),
        ("[sigma]\nz0 = 3\n", "z0"),
        ("[sigma]\nz_min = 1\nz_max = 0\n", "z_min"),
        ("[grid]\nnx = 7\n", "nx"),
        ("[scaling]\nkn = 0.5\n", "kinetic"),
    ])
    def test_invalid_combinations(self, text, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config(text).validate()
