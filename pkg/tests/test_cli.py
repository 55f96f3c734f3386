"""Tests for the pystratq command line."""

import contextlib
import csv
import io
import json
import tempfile
import unittest
from pathlib import Path

from pystratq.cli import main


def run_cli(*argv: str) -> tuple[int, str, str]:
    """Run the CLI in-process and capture its output.

    Args:
        *argv: Command-line arguments after the program name.

    Returns:
        tuple: (exit code, stdout, stderr)
    """
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


def parse_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


class TestEquilibriumCommand(unittest.TestCase):
    """Test cases for the equilibrium subcommand."""

    def test_lambda_sweep(self):
        """Test one row per λ with NA where no equilibrium exists."""
        code, out, _ = run_cli("equilibrium", "--N", "20", "--lambda", "0.5:6:12")
        self.assertEqual(code, 0)
        rows = parse_csv(out)
        self.assertEqual(rows[0]["lam"], "0.5")
        self.assertEqual(rows[0]["equilibria"], "1")
        self.assertEqual(rows[-1]["lam"], "6")
        self.assertEqual(rows[-1]["equilibria"], "0")
        self.assertEqual(rows[-1]["mu"], "NA")

    def test_json_format(self):
        """Test --format json emits a list of row objects."""
        code, out, _ = run_cli("equilibrium", "--N", "2", "--lambda", "1", "--format", "json")
        self.assertEqual(code, 0)
        rows = json.loads(out)
        self.assertEqual(rows[0]["N"], 2)
        self.assertIn("mu", rows[0])

    def test_bad_cost(self):
        """Test an invalid cost spec exits with status 2."""
        code, _, err = run_cli("equilibrium", "--N", "2", "--lambda", "1", "--cost", "poly:1:0.5")
        self.assertEqual(code, 2)
        self.assertIn("error", err)

    def test_non_integer_server_sweep(self):
        """Test an N sweep off the integers exits with status 2."""
        code, _, _ = run_cli("equilibrium", "--N", "2:3:3", "--lambda", "1")
        self.assertEqual(code, 2)


class TestOutputFiles(unittest.TestCase):
    """Test cases for --out and the run record."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_byte_identical_reruns(self):
        """Test two runs with the same arguments write identical files."""
        outputs = []
        for name in ("a.csv", "b.csv"):
            path = self.dir / name
            code, _, _ = run_cli("equilibrium", "--N", "5:20:4", "--lambda", "1", "--out", str(path))
            self.assertEqual(code, 0)
            outputs.append(path.read_bytes())
        self.assertEqual(outputs[0], outputs[1])

    def test_run_record(self):
        """Test <out>.json records the subcommand, sweeps and versions."""
        path = self.dir / "eq.csv"
        run_cli("equilibrium", "--N", "20", "--lambda", "0.5", "--out", str(path), "--seed", "3")
        record = json.loads((self.dir / "eq.csv.json").read_text())
        self.assertEqual(record["run_spec"]["subcommand"], "equilibrium")
        self.assertEqual(record["run_spec"]["seed"], 3)
        self.assertEqual(record["run_spec"]["cost"], "poly:1:2")
        self.assertIn("numpy", record["versions"])

    def test_run_record_on_stderr(self):
        """Test a run without --out reports its run record as one JSON line on stderr."""
        code, out, err = run_cli("equilibrium", "--N", "2", "--lambda", "1", "--seed", "4")
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("lam,"))
        line = next(x for x in err.splitlines() if x.startswith("run record: "))
        record = json.loads(line.removeprefix("run record: "))
        self.assertEqual(record["run_spec"]["seed"], 4)
        self.assertIsNone(record["run_spec"]["out"])

    def test_record_option(self):
        """Test --record chooses the run record path with or without --out."""
        code, _, err = run_cli("equilibrium", "--N", "2", "--lambda", "1", "--record", str(self.dir / "stdout.json"))
        self.assertEqual(code, 0)
        self.assertNotIn("run record", err)
        self.assertEqual(json.loads((self.dir / "stdout.json").read_text())["run_spec"]["subcommand"], "equilibrium")
        path = self.dir / "eq.csv"
        run_cli("equilibrium", "--N", "2", "--lambda", "1", "--out", str(path), "--record", str(self.dir / "named.json"))
        self.assertTrue((self.dir / "named.json").exists())
        self.assertFalse((self.dir / "eq.csv.json").exists())

    def test_config_file(self):
        """Test costs can come from a config document."""
        config = self.dir / "cost.json"
        config.write_text('{"cost": {"family": "polynomial", "c_E": 0.7, "p": 2}, "seed": 9}')
        path = self.dir / "eq.csv"
        code, _, _ = run_cli("equilibrium", "--N", "2", "--lambda", "1", "--config", str(config), "--out", str(path))
        self.assertEqual(code, 0)
        record = json.loads((self.dir / "eq.csv.json").read_text())
        self.assertEqual(record["run_spec"]["cost"], "poly:0.7:2")
        self.assertEqual(record["run_spec"]["seed"], 9)

    def test_invalid_config_file(self):
        """Test an invalid config exits with status 2."""
        config = self.dir / "cost.json"
        config.write_text('{"cost": {"family": "polynomial", "c_E": 1, "p": 0.5}}')
        code, _, err = run_cli("equilibrium", "--N", "2", "--lambda", "1", "--config", str(config))
        self.assertEqual(code, 2)
        self.assertIn("greater_than_equal", err)


class TestOtherCommands(unittest.TestCase):
    """Test cases for the routing, staffing, collapse, poa and simulate subcommands."""

    def test_routing_sweep(self):
        """Test μ* falls and E[T] rises along a negative-to-positive r sweep."""
        code, out, _ = run_cli("routing", "--lambda", "0.25", "--r", "-3:1.5:10")
        self.assertEqual(code, 0)
        rows = [r for r in parse_csv(out) if r["mu"] != "NA"]
        self.assertGreaterEqual(len(rows), 5)
        rates = [float(r["mu"]) for r in rows]
        times = [float(r["mean_response"]) for r in rows]
        self.assertTrue(all(b < a for a, b in zip(rates, rates[1:], strict=False)))
        self.assertTrue(all(b > a for a, b in zip(times, times[1:], strict=False)))

    def test_routing_needs_single_lambda(self):
        """Test a λ sweep is refused for routing."""
        code, _, _ = run_cli("routing", "--lambda", "0.1:0.3:3", "--r", "0")
        self.assertEqual(code, 2)

    def test_staffing(self):
        """Test λ = 2 stages N^ao = 9."""
        code, out, _ = run_cli("staffing", "--lambda", "2")
        self.assertEqual(code, 0)
        (row,) = parse_csv(out)
        self.assertEqual(row["n_ao"], "9")
        self.assertNotEqual(row["n_opt"], "NA")

    def test_collapse(self):
        """Test every exact row matches the product form."""
        code, out, _ = run_cli("collapse", "--lambda", "2", "--rates", "1,1.5,2.3")
        self.assertEqual(code, 0)
        rows = parse_csv(out)
        self.assertEqual(len(rows), 12)
        self.assertTrue(all(float(r["max_deviation"]) < 1e-9 for r in rows))

    def test_poa_table(self):
        """Test the default q table."""
        code, out, _ = run_cli("poa", "--table")
        self.assertEqual(code, 0)
        rows = parse_csv(out)
        self.assertEqual([r["q"] for r in rows], ["1.001", "1.01", "1.1"])
        self.assertAlmostEqual(float(rows[0]["f_poa"]), 2.517, delta=0.01)
        self.assertAlmostEqual(float(rows[1]["f_poa"]), 1.931, delta=0.01)

    def test_poa_curve(self):
        """Test the curve has one row per μ."""
        code, out, _ = run_cli("poa", "--curve", "--mu", "0.1:2:20")
        self.assertEqual(code, 0)
        self.assertEqual(len(parse_csv(out)), 20)

    def test_simulate(self):
        """Test one row per server plus a raw replication file."""
        with tempfile.TemporaryDirectory() as tmp:
            raw = Path(tmp) / "raw.csv"
            args = ["--lambda", "1", "--rates", "1,2", "--policy", "lisf", "--horizon", "2000", "--replications", "3"]
            code, out, _ = run_cli("simulate", *args, "--raw", str(raw))
            self.assertEqual(code, 0)
            rows = parse_csv(out)
            self.assertEqual([r["server"] for r in rows], ["0", "1"])
            self.assertEqual(rows[0]["policy"], "lisf")
            self.assertEqual(len(raw.read_text().splitlines()), 4)


if __name__ == "__main__":
    unittest.main()
