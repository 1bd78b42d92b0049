import json

import numpy as np
import pytest

import parareach as pr
from parareach.cli import main


def run(args):
    return main(args)


class TestExamples:
    def test_list(self, capsys):
        assert run(["examples"]) == 0
        out = capsys.readouterr().out.split()
        assert {"ex1-stable", "ex1-escape", "ex1-family", "sec5"} <= set(out)

    def test_show_parses(self, capsys):
        assert run(["examples", "--show", "sec5"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["seed_paraboloid"]["g"] == -0.015
        sys5 = pr.system_from_json(payload["system"])
        assert (sys5.n, sys5.m, sys5.p) == (2, 2, 1)

    def test_unknown_preset(self, capsys):
        assert run(["examples", "--show", "nope"]) == 1


class TestPropagate:
    def test_stable_run(self, tmp_path):
        out = tmp_path / "run"
        assert run(["propagate", "--example", "ex1-stable",
                    "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        E10 = manifest["final"]["E"][0][0]
        assert E10 == pytest.approx(2 + np.sqrt(2), abs=2e-5)
        assert manifest["escape_time"] is None
        header = (out / "tvp.csv").read_text().splitlines()[0]
        assert header == "t,E_00,f_0,g"

    def test_escape_exit_code(self, tmp_path):
        out = tmp_path / "run"
        assert run(["propagate", "--example", "ex1-escape",
                    "--out", str(out)]) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["escape_time"] == pytest.approx(2.4929, abs=1e-3)

    def test_missing_system_file(self, tmp_path, capsys):
        assert run(["propagate", "--system", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "nope.json" in err

    def test_custom_system_file(self, tmp_path):
        sys_path = tmp_path / "sys.json"
        sys1 = pr.make_system([[-1.0]], [[1.0]], [[0.0]],
                              np.diag([1.0, 1.0, -2.0]))
        sys_path.write_text(json.dumps(sys1.to_json()))
        out = tmp_path / "run"
        assert run(["propagate", "--system", str(sys_path),
                    "--e0", "[[1.0]]", "--g0", "-0.06",
                    "--t-end", "10", "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["final"]["E"][0][0] == pytest.approx(2 + np.sqrt(2), abs=2e-5)

    def test_requires_seed_coefficient(self, tmp_path, capsys):
        sys_path = tmp_path / "sys.json"
        sys1 = pr.make_system([[-1.0]], [[1.0]], [[0.0]],
                              np.diag([1.0, 1.0, -2.0]))
        sys_path.write_text(json.dumps(sys1.to_json()))
        assert run(["propagate", "--system", str(sys_path),
                    "--out", str(tmp_path)]) == 1

    def test_json_format(self, tmp_path):
        out = tmp_path / "run"
        assert run(["propagate", "--example", "ex1-stable", "--format", "json",
                    "--out", str(out)]) == 0
        payload = json.loads((out / "tvp.json").read_text())
        assert payload["columns"][0] == "t"


class TestRoundTrip:
    def test_system_json_bit_for_bit(self, tmp_path):
        sys1 = pr.make_system([[-1.0 / 3]], [[np.pi]], [[0.12345678901234567]],
                              np.diag([1.0, 0.7, -2.0 / 3]))
        text1 = json.dumps(sys1.to_json())
        sys2 = pr.system_from_json(json.loads(text1))
        text2 = json.dumps(sys2.to_json())
        assert text1 == text2
        np.testing.assert_array_equal(sys1.M, sys2.M)


class TestReach:
    def test_family_preset(self, tmp_path):
        out = tmp_path / "run"
        assert run(["reach", "--example", "ex1-family", "--time", "1.62",
                    "--out", str(out)]) == 0
        manifest = json.loads((out / "family_manifest.json").read_text())
        np.testing.assert_allclose(manifest["gammas"], [1.0, 1.6, 2.2, 2.7, 3.3])
        assert manifest["assumptions"]["falling_ok"] in (True, False)
        slice_text = (out / "slice_t1p62.csv").read_text()
        assert slice_text.splitlines()[0] == "x_0,xq_max,argmin_gamma"
        assert (out / "tube.csv").exists()

    def test_explicit_gammas_tighten(self, tmp_path):
        out1 = tmp_path / "solo"
        out2 = tmp_path / "family"
        assert run(["reach", "--example", "ex1-escape", "--gammas", "1",
                    "--time", "1.62", "--out", str(out1)]) == 0
        assert run(["reach", "--example", "ex1-escape",
                    "--gammas", "1,1.6,2.2,2.7,3.3",
                    "--time", "1.62", "--out", str(out2)]) == 0

        def xq_col(path):
            lines = (path / "slice_t1p62.csv").read_text().strip().splitlines()[1:]
            return np.array([float(ln.split(",")[1]) for ln in lines])

        solo, fam = xq_col(out1), xq_col(out2)
        assert np.all(fam <= solo + 1e-12)
        assert np.max(solo - fam) > 1e-6

    def test_members_one(self, tmp_path):
        out = tmp_path / "run"
        assert run(["reach", "--example", "ex1-stable", "--members", "1",
                    "--time", "0.91", "--out", str(out)]) == 0
        manifest = json.loads((out / "family_manifest.json").read_text())
        assert manifest["gammas"] == [1.0]


class TestVerify:
    def test_clean_run(self, tmp_path):
        out = tmp_path / "run"
        assert run(["verify", "--example", "ex1-stable", "--n", "400",
                    "--seed", "42", "--time", "0.91", "--members", "4",
                    "--out", str(out)]) == 0
        report = json.loads((out / "verify_report.json").read_text())
        assert report["n_violations"] == 0
        assert report["worst_margin"] < 1e-8
        assert (out / "endpoints.csv").exists()
        assert (out / "coverage.json").exists()

    def test_zero_draws_config_error(self, tmp_path):
        assert run(["verify", "--example", "ex1-stable", "--n", "0",
                    "--out", str(tmp_path)]) == 1

    def test_tampered_slice_detected(self, ex1_system, ex1_stable_seed,
                                     ex1_cfg):
        # harness self-test: negating the slice's budget headroom must turn
        # previously inside endpoints into detected violations
        fam = pr.build_family(ex1_stable_seed, ex1_system, 6e-5, 4, ex1_cfg)
        cfg = pr.OracleConfig(n_trajectories=200, segments=4, w_scale=0.5,
                              seed=4, t_end=1.0)
        trajs = pr.sample_admissible(ex1_system, ex1_stable_seed, cfg,
                                     family=fam, sample_times=[1.0])
        xs = np.stack([tr.x_samples[-1] for tr in trajs])
        xqs = np.array([tr.xq_samples[-1] for tr in trajs])
        slc = pr.reach_slice(fam, 1.0, xs)
        honest = xqs - slc.xq_max
        tampered = xqs - (-slc.xq_max)
        assert np.all(honest <= 1e-8)
        assert np.count_nonzero(tampered > 1e-8) > 0
