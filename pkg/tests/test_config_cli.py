import json

import numpy as np
import pytest

from cissim.cli import main, run
from cissim.config import ConfigError, RunConfig, bundled_configs, load_config, parse_config
from cissim.constants import G_E
from cissim.results import SpectrumResult


def small_fig4(tmp_path, plots=False, **over):
    cfg = json.loads(load_config("fig4_singlet").dumps())
    cfg["experiment"].update(n_b=12, n_t=21, t_stop_ns=200.0, b_start_mT=349.3, b_stop_mT=350.0)
    cfg["experiment"]["orientation"]["n_points"] = 32
    cfg["output"].update(dir=str(tmp_path / "out"), plots=plots)
    for k, v in over.items():
        cfg[k] = v
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def test_bundled_configs_all_load():
    names = bundled_configs()
    assert len(names) >= 10
    for n in names:
        load_config(n)


def test_fig2a_parameter_set():
    cfg = load_config("fig2a_polarized")
    s = cfg.build_system()
    exp = cfg.experiment
    assert exp.freq_GHz == 34.0 and exp.fwhm_mT == 2.35
    r_da = np.linalg.norm(s.center("A").position - s.center("D").position)
    r_aq = np.linalg.norm(s.center("Q").position - s.center("A").position)
    assert (r_da, r_aq) == (25.0, 8.0)
    assert s.center("A").g_tensor[0, 0] - s.center("D").g_tensor[0, 0] == pytest.approx(0.002)
    assert (s.center("A").g_tensor[0, 0] + s.center("D").g_tensor[0, 0]) / 2 == pytest.approx(G_E)
    np.testing.assert_allclose(np.diag(s.center("Q").g_tensor), [1.98, 1.98, 1.96])


def test_empty_file_parse_error(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text("")
    with pytest.raises(ConfigError, match="parse error at line 1, column 1"):
        load_config(p)


def test_t2_guard(tmp_path):
    cfg = json.loads(load_config("fig4_singlet").dumps())
    cfg["dissipation"]["t2_us"] = 5.0
    with pytest.raises(ConfigError, match="physicality guard"):
        parse_config(json.dumps(cfg))


def test_unknown_key_rejected():
    cfg = json.loads(load_config("fig4_singlet").dumps())
    cfg["experiment"]["colour"] = "red"
    with pytest.raises(ConfigError, match="experiment.trepr.colour"):
        parse_config(json.dumps(cfg))


def test_nmr_needs_nucleus():
    cfg = json.loads(load_config("fig2b_nmr_p0").dumps())
    cfg["system"]["nuclei"] = []
    cfg["state"].pop("nucleus")
    with pytest.raises(ConfigError, match="nucleus"):
        parse_config(json.dumps(cfg))


@pytest.mark.parametrize("name", ["fig2a_psi_u", "fig2b_nmr_p05", "fig3_transfer_singlet", "fig4_polarized"])
def test_round_trip(name):
    cfg = load_config(name)
    again = parse_config(cfg.dumps())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_defaults_echoed():
    text = json.dumps({
        "system": {"centers": [{"label": "D", "g": 2.0}, {"label": "A", "g": 2.0, "position": [0, 0, 20]}]},
        "state": {"kind": "singlet"},
        "experiment": {"kind": "trepr", "b_start_mT": 349, "b_stop_mT": 351, "n_b": 5, "t_stop_ns": 100, "n_t": 3,
                       "freq_GHz": 9.8},
    })
    dumped = json.loads(parse_config(text).dumps())
    assert dumped["schema_version"] == 1
    assert dumped["experiment"]["b1_mT"] == 0.01
    assert dumped["threads"] == 1


def test_rerun_byte_identical(tmp_path):
    p = small_fig4(tmp_path, plots=True)
    a = main(["run", "--config", str(p), "--out", str(tmp_path / "a")])
    b = main(["run", "--config", str(p), "--out", str(tmp_path / "b")])
    assert a == b == 0
    for name in ("fig4_singlet_map.csv", "fig4_singlet_spectrum.csv", "fig4_singlet_map.json",
                 "fig4_singlet_map.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_threads_identical(tmp_path):
    p = small_fig4(tmp_path)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "t1"), "--threads", "1"]) == 0
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "t8"), "--threads", "8"]) == 0
    for name in ("fig4_singlet_map.csv", "fig4_singlet_spectrum.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t8" / name).read_bytes()


def test_csv_layout_and_round_trip(tmp_path):
    p = small_fig4(tmp_path)
    run(load_config(p), tmp_path / "o")
    csv = tmp_path / "o" / "fig4_singlet_map.csv"
    lines = csv.read_text().splitlines()
    assert any(l.startswith("# sign_convention:") for l in lines)
    first = next(l for l in lines if not l.startswith("#"))
    assert "e" in first.split(",")[0] and len(first.split(",")[-1].split("e")[0].replace("-", "")) == 18
    spec = SpectrumResult.from_csv(csv)
    assert spec.data.shape == (21, 12)
    js = SpectrumResult.from_json(tmp_path / "o" / "fig4_singlet_map.json")
    np.testing.assert_array_equal(js.data, spec.data)


def test_orientations_override(tmp_path):
    p = small_fig4(tmp_path)
    run(load_config(p), tmp_path / "o", orientations=16)
    meta = json.loads((tmp_path / "o" / "fig4_singlet_map.json").read_text())["metadata"]
    assert meta["n_orientations"] == 16


def test_exit_code_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert main(["run", "--config", str(p)]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["status"] == "error" and err["kind"] == "config"
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2


def test_exit_code_numerical(tmp_path, capsys, monkeypatch):
    import cissim.cli as cli
    from cissim.liouville import PropagationError

    def boom(*a, **k):
        raise PropagationError("non-finite density matrix entries")

    monkeypatch.setattr(cli, "trepr_map", boom)
    assert main(["run", "--config", str(small_fig4(tmp_path))]) == 3
    assert json.loads(capsys.readouterr().err.strip())["kind"] == "numerical"


def test_validate_and_transitions(capsys):
    assert main(["validate", "--config", "fig2a_singlet"]) == 0
    assert json.loads(capsys.readouterr().out)["experiment"]["freq_GHz"] == 34.0
    assert main(["transitions", "--config", "fig2b_nmr_p0"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    nmr = sorted(r["gap_MHz"] for r in rows if r["observable"] == "sum I_x" and r["weight"] > 0.1)
    assert nmr[0] == pytest.approx(35.0, abs=0.1) and nmr[-1] == pytest.approx(45.0, abs=0.1)


def test_transfer_run_and_plot(tmp_path):
    cfg = json.loads(load_config("fig3_transfer_polarized").dumps())
    cfg["experiment"]["readout"].update(n_b=40, oversample=1, n_t=31)
    cfg["output"]["dir"] = str(tmp_path)
    written = run(parse_config(json.dumps(cfg)), plots=True)
    summary = json.loads((tmp_path / "fig3_transfer_polarized_transfer.json").read_text())
    assert summary["after"]["Q"] == pytest.approx(1.0) and summary["after"]["A"] == pytest.approx(0.0, abs=1e-12)
    svg = [w for w in written if str(w).endswith(".svg")]
    assert svg and svg[0].read_text().startswith("<?xml")
    assert main(["plot", str(tmp_path / "fig3_transfer_polarized_spectrum.csv"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "fig3_transfer_polarized_spectrum.svg").exists()
