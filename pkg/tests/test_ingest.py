import pytest

from tdrestore.ingest import (
    CaseFileError, bundled_files, bundled_path, load_bundled, load_case, parse_feeder,
    parse_scenario, parse_transmission, serialize_feeder, serialize_scenario,
    serialize_transmission, DEFAULT_LOAD_PROFILE, DEFAULT_PV_PROFILE,
)
from tdrestore.netmodel import validate_case

TN_HEAD = '[base]\ns_base_MVA = 100.0\n'


def test_transmission_file():
    tn = parse_transmission(bundled_path("ieee14_case_study_1.toml"))
    assert len(tn.buses) == 14
    assert [g.bus for g in tn.generators] == [1, 2, 3, 6, 8]


def test_generator_tables():
    g1 = {g.bus: g for g in load_bundled("case_study_1").transmission.generators}
    assert (g1[2].p_max, g1[2].q_max, g1[2].q_min) == (140.0, 50.0, -40.0)
    assert (g1[1].p_max, g1[1].q_max) == (332.4, 10.0)
    g2 = {g.bus: g for g in load_bundled("case_study_2").transmission.generators}
    assert g2[2].p_max == 48.28
    assert (g2[1].p_max, g2[6].q_max) == (114.62, 12.63)


@pytest.mark.parametrize("name,dg,ess", [
    ("d1.toml", (4.0, 3.2), (50.0, 25.0)),
    ("d2.toml", (1.0, 0.8), (12.5, 6.25)),
    ("d3.toml", (14.0, 9.0), (50.0, 25.0)),
])
def test_feeder_der_data(name, dg, ess):
    f = parse_feeder(bundled_path(name))
    assert [d.node for d in f.dgs] == [1, 8]
    assert all((d.p_max, d.q_max) == dg for d in f.dgs)
    assert [(e.node, e.e_max, e.s_max) for e in f.esss] == [(3, *ess)]
    assert [(p.node, p.p_max) for p in f.pvs] == [(11, 3.0)]
    assert len(f.nodes) == 13 and len(f.lines) == 12


def test_scenarios():
    s1, _ = parse_scenario(bundled_path("case_study_1.toml"))
    assert (s1.w_t, s1.w_d, s1.central_gen_penalty, s1.critical_fraction) == (1, 1, 1e7, 0.5)
    s2, _ = parse_scenario(bundled_path("case_study_2.toml"))
    assert (s2.w_t, s2.w_d) == (2, 1)


def test_default_profiles(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text("[scenario]\nperiods = 6\n")
    _, prof = parse_scenario(p)
    assert prof["transmission"].load_profile == DEFAULT_LOAD_PROFILE
    assert prof["transmission"].pv_profile == DEFAULT_PV_PROFILE


def test_profile_length_must_match(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('[scenario]\nperiods = 2\n[profiles]\nload = "1, 1, 1"\npv = "0, 0"\n')
    with pytest.raises(CaseFileError, match="expected periods"):
        parse_scenario(p)


def test_empty_bus_list(tmp_path):
    p = tmp_path / "t.toml"
    p.write_text(TN_HEAD + '[bus]\ncolumns = ["id"]\nrows = []\n'
                 '[branch]\ncolumns = ["from", "to", "r_pu", "x_pu"]\nrows = []\n')
    with pytest.raises(CaseFileError, match="empty bus list"):
        parse_transmission(p)


def test_dangling_branch(tmp_path):
    p = tmp_path / "t.toml"
    p.write_text(TN_HEAD + '[bus]\ncolumns = ["id"]\nrows = [[1], [2]]\n'
                 '[branch]\ncolumns = ["from", "to", "r_pu", "x_pu"]\nrows = [[1, 99, 0.0, 0.1]]\n')
    with pytest.raises(CaseFileError, match="unknown bus 99"):
        parse_transmission(p)


def test_unknown_column_rejected(tmp_path):
    p = tmp_path / "t.toml"
    p.write_text(TN_HEAD + '[bus]\ncolumns = ["id", "colour"]\nrows = [[1, 2]]\n'
                 '[branch]\ncolumns = ["from", "to", "r_pu", "x_pu"]\nrows = []\n')
    with pytest.raises(CaseFileError):
        parse_transmission(p)


def test_feeder_without_substation(tmp_path):
    p = tmp_path / "f.toml"
    p.write_text('[feeder]\nid = "X"\n[node]\ncolumns = ["id"]\nrows = [[1]]\n')
    with pytest.raises(CaseFileError, match="boundary"):
        parse_feeder(p)


def test_missing_file():
    with pytest.raises(CaseFileError, match="cannot read"):
        parse_transmission("does/not/exist.toml")


def test_unknown_bundle():
    with pytest.raises(KeyError):
        load_bundled("case_study_9")


@pytest.mark.parametrize("case_id", ["case_study_1", "case_study_2"])
def test_round_trip(tmp_path, case_id):
    files = bundled_files(case_id)
    tn = parse_transmission(files.transmission_path)
    (tmp_path / "tn.toml").write_text(serialize_transmission(tn))
    assert parse_transmission(tmp_path / "tn.toml") == tn
    paths = []
    for fp in files.feeder_paths:
        f = parse_feeder(fp)
        out = tmp_path / fp.name
        out.write_text(serialize_feeder(f))
        assert parse_feeder(out) == f
        paths.append(out)
    sc, prof = parse_scenario(files.scenario_path)
    (tmp_path / "sc.toml").write_text(serialize_scenario(sc, prof))
    assert parse_scenario(tmp_path / "sc.toml") == (sc, prof)
    again = load_case(tmp_path / "tn.toml", paths, tmp_path / "sc.toml")
    assert again == load_bundled(case_id)


def test_bundled_cases_differ_only_in_gen_limits_and_weights():
    c1, c2 = load_bundled("case_study_1"), load_bundled("case_study_2")
    assert c1.transmission.buses == c2.transmission.buses
    assert c1.transmission.branches == c2.transmission.branches
    assert c1.feeders == c2.feeders
    assert c1.profiles == c2.profiles
    assert c1.transmission.generators != c2.transmission.generators
    assert (c1.scenario.w_t, c2.scenario.w_t) == (1.0, 2.0)
    assert validate_case(c1).ok and validate_case(c2).ok
