import pytest

from pffrac import scenarios as scn


def test_shear_preset_values():
    cfg = scn.preset("shear")
    assert cfg.lam == 1.2115e5
    assert cfg.mu == 8.077e4
    assert cfg.g_c == 2.7
    assert cfg.kappa == 1e-10
    assert cfg.dt == 1e-4
    assert cfg.t_end == 0.0125
    assert cfg.n_steps == 125


def test_tension_preset_values():
    cfg = scn.preset("tension")
    assert cfg.dt == 1e-5
    assert cfg.t_end == 0.00676
    assert cfg.n_steps == 676
    assert cfg.lam == 1.2115e5 and cfg.mu == 8.077e4


def test_realized_h_start_and_epsilon():
    shear = scn.preset("shear")
    assert shear.pre_refinements == 5
    assert shear.h_start == pytest.approx(10 / (4 * 2 ** 5))   # 0.078125
    assert shear.epsilon == pytest.approx(2 * 0.078125)
    assert shear.strip == pytest.approx(4 * 0.078125)
    tension = scn.preset("tension")
    assert tension.pre_refinements == 6
    assert tension.h_start == pytest.approx(10 / (4 * 2 ** 6))  # 0.0390625
    assert tension.epsilon == pytest.approx(2 * 0.0390625)


def test_unknown_preset():
    with pytest.raises(scn.ConfigError):
        scn.preset("bending")


def test_dt_must_divide_t_end():
    with pytest.raises(scn.ConfigError):
        scn.ScenarioConfig(name="shear", dt=3e-4, t_end=0.0125)


def test_times_grid():
    cfg = scn.ScenarioConfig(name="shear", dt=2.5e-3, t_end=0.0125)
    times = cfg.times()
    assert len(times) == 6
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(0.0125)


def test_overrides_rederive_epsilon():
    cfg = scn.preset("shear")
    out = scn.apply_overrides(cfg, "pre_refinements = 3\n")
    assert out.h_start == pytest.approx(0.3125)
    assert out.epsilon == pytest.approx(0.625)
    assert out.strip == pytest.approx(1.25)
    out2 = scn.apply_overrides(cfg, "eps_factor = 0.5")
    assert out2.epsilon == pytest.approx(0.5 * cfg.h_start)


def test_overrides_explicit_epsilon_wins():
    cfg = scn.preset("shear")
    out = scn.apply_overrides(cfg, "pre_refinements = 3\nepsilon = 0.2\n")
    assert out.epsilon == 0.2
    assert out.h_start == pytest.approx(0.3125)


def test_unknown_key_rejected():
    with pytest.raises(scn.ConfigError):
        scn.apply_overrides(scn.preset("shear"), "meshsize = 3\n")


def test_comments_and_blank_lines_ok():
    out = scn.apply_overrides(scn.preset("shear"),
                              "# comment\n\ntheta = 0.7\n")
    assert out.theta == 0.7


def test_load_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("name = tension\ncycles = 3\ndt = 2e-5\nt_end = 1e-4\n")
    cfg = scn.load_config_file(p)
    assert cfg.name == "tension"
    assert cfg.cycles == 3
    assert cfg.n_steps == 5


def test_material_conversion():
    prm = scn.preset("shear").material()
    assert prm.mu == 8.077e4
    assert prm.epsilon == pytest.approx(0.15625)
