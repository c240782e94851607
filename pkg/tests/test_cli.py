import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from sharing_club import __version__
from sharing_club.cli import build_parser, main
from sharing_club.specfiles import bundled
from tests.test_specfiles import music_club_spec, zipf_spec


class CliCase(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)
        self.out = self.dir / "out"

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def spec(self, name: str, content: dict) -> str:
        path = self.dir / name
        path.write_text(json.dumps(content, indent=2), encoding="utf-8")
        return str(path)

    def run_cli(self, *args: str) -> tuple[int, str]:
        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr):
            code = main(["--quiet", "--out-dir", str(self.out), *args])
        return code, stderr.getvalue()

    def read_table(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.out / name, comment="#")


class TestParser(unittest.TestCase):
    def test_defaults(self):
        args = build_parser().parse_args(["simulate", "club.json"])
        self.assertEqual(args.seed, 0)
        self.assertEqual(args.seeds, 1)
        self.assertEqual(args.payload_mode, "fixed_multinomial")
        self.assertFalse(args.self_supply)
        self.assertEqual(args.format, "csv")

    def test_lists(self):
        args = build_parser().parse_args(["sweep", "z.json", "--betas", "0.5", "1.0", "--s-maxes", "10", "20"])
        self.assertEqual(args.betas, [0.5, 1.0])
        self.assertEqual(args.s_maxes, [10, 20])
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(["sweep", "z.json", "--s-maxes", "ten"])

    def test_negative_values(self):
        args = build_parser().parse_args(["sweep", "z.json", "--delta-fractions", "-0.5", "0", "0.5"])
        self.assertEqual(args.delta_fractions, [-0.5, 0.0, 0.5])

    def test_resolution(self):
        self.assertEqual(build_parser().parse_args(["phase", "club.json", "--resolution", "2"]).resolution, 2)
        for bad in ("1", "0", "many"):
            with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
                build_parser().parse_args(["phase", "club.json", "--resolution", bad])
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(["sweep", "z.json", "--bifurcation-points", "1"])

    def test_version(self):
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout), self.assertRaises(SystemExit):
            build_parser().parse_args(["--version"])
        self.assertIn(__version__, stdout.getvalue())

    def test_quiet_and_verbose_exclusive(self):
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            build_parser().parse_args(["--quiet", "--verbose", "phase", "club.json"])


class TestAnalyze(CliCase):
    def test_music_club(self):
        code, _ = self.run_cli("analyze", str(bundled("music_club.json")))
        self.assertEqual(code, 0)
        report = json.loads((self.out / "analysis.json").read_text())
        self.assertEqual(report["verdict"], "growth")
        self.assertTrue(report["empty_club_unstable"])
        self.assertAlmostEqual(report["critical_k_rho"], 0.808, delta=2e-3)
        self.assertEqual(len(report["fixed_points"]), 2)
        upper = report["fixed_points"][-1]
        self.assertTrue(upper["stable"])
        self.assertAlmostEqual(upper["n_eq"], 5.1, delta=0.05)
        self.assertAlmostEqual(upper["p_bar"], 0.845, delta=0.005)
        self.assertEqual(set(report["supply"]), {"Pop", "Classical", "Oldies", "World", "Alternative"})
        self.assertNotIn("contributors", report)
        self.assertTrue((self.out / "analysis.json.manifest.json").exists())

    def test_verdicts(self):
        for rho, expected in ((0.404, "critical"), (0.25, "stable empty club")):
            code, _ = self.run_cli("analyze", self.spec(f"club_{rho}.json", music_club_spec(rho=rho)))
            self.assertEqual(code, 0)
            report = json.loads((self.out / "analysis.json").read_text())
            self.assertEqual(report["verdict"], expected, f"rho={rho}")

    def test_free_riders(self):
        spec = music_club_spec()
        spec["peers"][5]["K"] = 0
        code, _ = self.run_cli("analyze", self.spec("riders.json", spec))
        self.assertEqual(code, 0)
        report = json.loads((self.out / "analysis.json").read_text())
        self.assertEqual(report["contributors"]["N"], 5.0)
        self.assertAlmostEqual(report["contributors"]["k_rho"], report["k_rho"] * 6 / 5)

    def test_composite_requests(self):
        code, _ = self.run_cli("analyze", str(bundled("zipf_bistable_d2.json")))
        self.assertEqual(code, 0)
        report = json.loads((self.out / "analysis.json").read_text())
        self.assertEqual(report["verdict"], "stable empty club")
        self.assertEqual([p["stable"] for p in report["fixed_points"]], [True, False, True])
        self.assertLess(report["critical"]["N_crit"], 200)

    def test_not_utf8(self):
        path = self.dir / "latin1.json"
        path.write_bytes(b'{"kind": "zipf_perfect", "note": "caf\xe9"}')
        code, stderr = self.run_cli("analyze", str(path))
        self.assertEqual(code, 1)
        self.assertIn("not UTF-8 text at byte 37", stderr)

    def test_fractional_chunks(self):
        code, _ = self.run_cli("analyze", self.spec("half.json", zipf_spec(k=1.5, rho=1.0)))
        self.assertEqual(code, 0)
        report = json.loads((self.out / "analysis.json").read_text())
        self.assertAlmostEqual(report["k_rho"], 1.5, delta=1e-12)

    def test_bad_spec(self):
        code, stderr = self.run_cli("analyze", self.spec("bad.json", music_club_spec(rho=2.0)))
        self.assertEqual(code, 1)
        self.assertTrue(stderr.startswith("error: "))
        self.assertIn("bad.json", stderr)
        self.assertFalse((self.out / "analysis.json").exists())

    def test_solver_failure(self):
        spec = {"types": ["a", "b"], "rho": 1.0, "d": 2,
                "peers": [{"K": 1, "M": 1.0, "g": [1.0, 0.0], "h": [0.0, 1.0]}] * 3}
        code, stderr = self.run_cli("analyze", self.spec("disjoint.json", spec))
        self.assertEqual(code, 2)
        self.assertIn("no critical population", stderr)


class TestPhase(CliCase):
    def test_csv(self):
        code, _ = self.run_cli("phase", str(bundled("music_club.json")), "--resolution", "11")
        self.assertEqual(code, 0)
        lines = (self.out / "phase.csv").read_text().splitlines()
        self.assertRegex(lines[0], r"^# scenario [0-9a-f]{64}$")
        self.assertEqual(lines[1], "n_frac,p_bar,phase")
        self.assertEqual(len(lines), 13)

    def test_json(self):
        with contextlib.redirect_stderr(io.StringIO()):
            code = main(["--quiet", "--format", "json", "--out-dir", str(self.out), "phase",
                         str(bundled("music_club.json")), "--resolution", "5"])
        self.assertEqual(code, 0)
        table = json.loads((self.out / "phase.json").read_text())
        self.assertEqual(len(table["scenario"]), 64)
        self.assertEqual(len(table["rows"]), 5)
        self.assertEqual(set(table["rows"][0]), {"n_frac", "p_bar", "phase"})


class TestSimulate(CliCase):
    def test_zero_rounds(self):
        code, _ = self.run_cli("simulate", str(bundled("music_club.json")), "--rounds", "0")
        self.assertEqual(code, 0)
        frame = self.read_table("trajectory.csv")
        self.assertEqual(len(frame), 1)
        self.assertEqual(frame["size"].iloc[0], 3)

    def test_reproducible(self):
        args = ("simulate", str(bundled("music_club.json")), "--rounds", "50", "--seeds", "3", "--seed", "17")
        names = ["trajectory.csv", "ensemble.csv", "trajectory.csv.manifest.json", "ensemble.csv.manifest.json"]
        self.assertEqual(self.run_cli(*args)[0], 0)
        first = {name: (self.out / name).read_bytes() for name in names}
        self.assertEqual(self.run_cli(*args)[0], 0)
        for name in names:
            self.assertEqual((self.out / name).read_bytes(), first[name], f"{name} changed between runs.")

        manifest = json.loads(first["ensemble.csv.manifest.json"])
        self.assertEqual(manifest["seed"], 17)
        self.assertEqual(manifest["version"], __version__)
        self.assertEqual(manifest["outputs"], ["ensemble.csv", "trajectory.csv"])
        self.assertEqual(len(self.read_table("ensemble.csv")), 51)

    def test_fractional_chunks(self):
        code, stderr = self.run_cli("simulate", self.spec("half.json", zipf_spec(k=1.5)), "--rounds", "5")
        self.assertEqual(code, 1)
        self.assertIn("whole number of chunks", stderr)
        self.assertFalse((self.out / "trajectory.csv").exists())

    def test_invalid_config(self):
        code, stderr = self.run_cli("simulate", str(bundled("music_club.json")), "--rounds", "10", "--burn-in", "10")
        self.assertEqual(code, 1)
        self.assertIn("Burn-in", stderr)


class TestSweep(CliCase):
    axes = ("--betas", "0.6", "1.0", "--s-maxes", "20", "40", "--delta-fractions", "-0.5", "0", "0.5",
            "--eq-betas", "0.8", "--nk-rho", "1", "10", "100")

    def test_simple_requests(self):
        code, _ = self.run_cli("sweep", self.spec("zipf.json", zipf_spec()), *self.axes)
        self.assertEqual(code, 0)
        self.assertEqual(len(self.read_table("ncrit_vs_beta.csv")), 4)
        shifts = self.read_table("ncrit_vs_delta.csv")
        self.assertEqual(list(shifts["delta"]), [-25, 0, 25])
        self.assertEqual(len(self.read_table("neq_vs_Nkrho.csv")), 3)
        self.assertFalse((self.out / "bifurcation.csv").exists())

    def test_composite_requests(self):
        code, _ = self.run_cli("sweep", self.spec("zipf.json", zipf_spec(d=2, rho=1.0)), *self.axes,
                               "--bifurcation-points", "5")
        self.assertEqual(code, 0)
        frame = self.read_table("bifurcation.csv")
        self.assertEqual(list(frame.columns), ["N", "n_eq", "p_bar", "stable", "marginal"])
        self.assertEqual(frame["N"].nunique(), 5)

    def test_needs_scenario(self):
        code, stderr = self.run_cli("sweep", str(bundled("music_club.json")))
        self.assertEqual(code, 1)
        self.assertIn("needs a scenario file", stderr)
