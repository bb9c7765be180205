"""End-to-end checks of the crtdr command line.

Usage: cli_tests.py <crtdr> <make_fixture> <schema> <workdir> <case>
"""

import csv
import json
import pathlib
import shutil
import subprocess
import sys


def run(*args, expect=0):
    proc = subprocess.run([str(a) for a in args], capture_output=True, text=True)
    if proc.returncode != expect:
        sys.exit(f"expected exit {expect}, got {proc.returncode}\nstdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
    if expect != 0:
        # Error paths write to stderr only.
        if proc.stdout.strip():
            sys.exit(f"error path wrote to stdout:\n{proc.stdout}")
        if not proc.stderr.strip():
            sys.exit("error path printed nothing to stderr")
    return proc


def check(cond, message):
    if not cond:
        sys.exit(message)


def write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2))
    return path


class Cases:
    def __init__(self, cli, fixture, schema, work):
        self.cli = cli
        self.schema = json.loads(pathlib.Path(schema).read_text())
        self.work = work
        self.data = work / "trial.csv"
        run(fixture, self.data, 40, 17)

    def config(self, name, **extra):
        doc = {"data": str(self.data), "randomization_probability": 0.5, "full_enrollment": True, "seed": 3}
        doc.update(extra)
        return write_json(self.work / f"{name}.json", doc)

    def validate(self, report):
        import jsonschema

        jsonschema.validate(report, self.schema)

    def analyze_dr_pm(self):
        cfg = self.config("drpm", estimator="dr-pm")
        out = self.work / "drpm"
        proc = run(self.cli, "analyze", "--config", cfg, "--out", out, "--sensitivity")
        check("delta_hat" in proc.stdout, "analyze printed no estimate")
        report = json.loads((out / "report.json").read_text())
        self.validate(report)
        est = report["estimate"]
        check(est["ci_low"] < est["delta_hat"] < est["ci_high"], "estimate outside its CI")
        check(len(report["sensitivity"]["tipping"]["points"]) == 5, "default delta grid has 5 points")
        check((out / "tipping.csv").exists() and (out / "sensitivity_grid.csv").exists(), "sensitivity files missing")

    def analyze_all_estimators(self):
        for name in ["unadjusted", "ipw", "dr-ml"]:
            cfg = self.config(name, estimator=name)
            out = self.work / name
            run(self.cli, "analyze", "--config", cfg, "--out", out)
            report = json.loads((out / "report.json").read_text())
            self.validate(report)
            check(report["estimate"]["estimator"] == name, f"{name}: wrong estimator tag")

    def analyze_reproducible(self):
        docs = []
        for tag in ["a", "b"]:
            cfg = self.config("repro", estimator="dr-ml")
            out = self.work / f"repro_{tag}"
            run(self.cli, "analyze", "--config", cfg, "--out", out)
            doc = json.loads((out / "report.json").read_text())
            doc.pop("timestamp")
            docs.append(doc)
        check(docs[0] == docs[1], "reports differ beyond the timestamp")

    def missing_treatment_column(self):
        text = self.data.read_text().replace("treatment", "arm", 1)
        bad = self.work / "no_treatment.csv"
        bad.write_text(text)
        cfg = write_json(self.work / "no_treatment.json",
                         {"data": str(bad), "randomization_probability": 0.5, "full_enrollment": True, "seed": 1})
        proc = run(self.cli, "analyze", "--config", cfg, "--out", self.work / "no_treatment", expect=2)
        check("treatment" in proc.stderr, "message does not name the treatment column")

    def odds_ratio_continuous(self):
        cfg = self.config("odds", estimator="dr-pm", scale="odds-ratio")
        proc = run(self.cli, "analyze", "--config", cfg, "--out", self.work / "odds", expect=3)
        check("odds-ratio" in proc.stderr, "message does not mention the scale")

    def unknown_config_key(self):
        cfg = self.config("typo", estimater="dr-pm")
        proc = run(self.cli, "analyze", "--config", cfg, "--out", self.work / "typo", expect=2)
        check("estimater" in proc.stderr, "message does not name the unknown key")

    def sensitivity_hand_report(self):
        report = write_json(self.work / "hand_report.json",
                            {"estimate": {"delta_hat": 1.0, "se": 0.2, "scale": "difference"}})
        cfg = write_json(self.work / "hand_cfg.json", {"sensitivity": {"components": {
            "nonparticipation": 0.0, "missing_outcome_treated": 0.2, "missing_outcome_control": 0.2}}})
        out = self.work / "hand"
        run(self.cli, "sensitivity", "--config", cfg, "--report", report, "--out", out)
        rows = list(csv.DictReader((out / "tipping.csv").open()))
        check([float(r["delta_diff"]) for r in rows] == [0, 1, 2, 3, 4], "default delta grid")
        for r in rows:
            gamma = float(r["gamma_contrast"])
            check(abs(gamma - 3.04) < 5e-3, f"tipping point {gamma} != 3.04")
        grid = list(csv.DictReader((out / "sensitivity_grid.csv").open()))
        check(len(grid) > 0, "empty sensitivity grid")

    def sensitivity_covering_zero(self):
        report = write_json(self.work / "null_report.json",
                            {"estimate": {"delta_hat": 0.1, "se": 0.2, "scale": "difference"}})
        cfg = write_json(self.work / "null_cfg.json", {"sensitivity": {"components": {
            "nonparticipation": 0.3, "missing_outcome_treated": 0.2, "missing_outcome_control": 0.1}}})
        out = self.work / "null"
        run(self.cli, "sensitivity", "--config", cfg, "--report", report, "--out", out)
        rows = list(csv.DictReader((out / "tipping.csv").open()))
        check(rows and all(float(r["gamma_contrast"]) == 0.0 for r in rows), "tipping points are not all zero")

    def sensitivity_ratio_scale(self):
        report = write_json(self.work / "ratio_report.json",
                            {"estimate": {"delta_hat": 1.5, "se": 0.2, "scale": "risk-ratio"}})
        cfg = write_json(self.work / "ratio_cfg.json", {"sensitivity": {"components": {
            "nonparticipation": 0.0, "missing_outcome_treated": 0.2, "missing_outcome_control": 0.2}}})
        proc = run(self.cli, "sensitivity", "--config", cfg, "--report", report, "--out", self.work / "ratio", expect=2)
        check("scale" in proc.stderr, "message does not mention the scale")

    def simulate_smoke(self):
        scenario = write_json(self.work / "sim.json",
                              {"m": 30, "p_m": 0.1, "replicates": 2, "seed": 5, "estimators": ["dr-pm"]})
        outputs = []
        for tag in ["a", "b"]:
            out = self.work / f"sim_{tag}"
            run(self.cli, "simulate", "--scenario", scenario, "--out", out)
            raw = (out / "raw_replicates.csv").read_bytes()
            outputs.append(raw)
            rows = list(csv.DictReader(raw.decode().splitlines()))
            check(len(rows) == 2, f"expected 2 raw rows, got {len(rows)}")
            check((out / "metrics.csv").exists(), "metrics.csv missing")
        check(outputs[0] == outputs[1], "raw CSV differs between identical runs")

    def simulate_bad_scenario(self):
        scenario = write_json(self.work / "sim_bad.json", {"m": 30, "estimators": ["no-such-estimator"], "replicates": 1})
        run(self.cli, "simulate", "--scenario", scenario, "--out", self.work / "sim_bad", expect=2)


def main():
    cli, fixture, schema, work, case = sys.argv[1:6]
    work = pathlib.Path(work) / case
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    cases = Cases(pathlib.Path(cli), pathlib.Path(fixture), schema, work)
    getattr(cases, case)()
    print(f"{case}: ok")


if __name__ == "__main__":
    main()
