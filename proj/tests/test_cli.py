"""End-to-end checks of the survfuse binary. Usage: test_cli.py <path-to-survfuse>"""

import csv
import hashlib
import json
import math
import random
import subprocess
import sys
import tempfile
import unittest
import xml.etree.ElementTree as ET
from pathlib import Path

BIN = None

H = (0.65, 0.70, 0.29)
E = (0.07, 0.99, 0.11)


def run(*args, ok=True):
    p = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True)
    if ok and p.returncode != 0:
        raise AssertionError(f"{args} failed ({p.returncode}):\n{p.stderr}")
    return p


def write_stained_ppm(path, h, w, seed):
    # Beer-Lambert rendering of random H and E concentrations, all tissue
    rng = random.Random(seed)
    px = bytearray()
    for _ in range(h * w):
        ch, ce = rng.uniform(0.3, 1.5), rng.uniform(0.2, 1.0)
        for k in range(3):
            px.append(max(0, min(255, round(240 * math.exp(-(ch * H[k] + ce * E[k]))))))
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + bytes(px))


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Preprocess(unittest.TestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp(prefix="survfuse_cli_"))

    def test_empty_input_warns_and_succeeds(self):
        (self.tmp / "in").mkdir()
        p = run("preprocess", "--input", self.tmp / "in", "--out", self.tmp / "out")
        self.assertIn("warning", p.stderr)
        self.assertEqual((self.tmp / "out" / "patch_manifest.csv").read_text(), "filename,source_image,row,col\n")

    def test_one_image_tiles_into_four_patches(self):
        (self.tmp / "in").mkdir()
        write_stained_ppm(self.tmp / "in" / "slide.ppm", 448, 448, 1)
        run("preprocess", "--input", self.tmp / "in", "--out", self.tmp / "out")
        rows = read_csv(self.tmp / "out" / "patch_manifest.csv")
        self.assertEqual(len(rows), 4)
        self.assertEqual({(r["row"], r["col"]) for r in rows}, {("0", "0"), ("0", "224"), ("224", "0"), ("224", "224")})
        for r in rows:
            self.assertTrue((self.tmp / "out" / r["filename"]).exists())
            self.assertEqual(r["source_image"], "slide.ppm")
        report = json.loads((self.tmp / "out" / "preprocess_report.json").read_text())
        self.assertEqual(report["schema_version"], 1)
        self.assertEqual(report["config"]["patch_size"], "224")
        self.assertEqual(report["errors"], [])

    def test_corrupt_file_is_isolated(self):
        (self.tmp / "in").mkdir()
        write_stained_ppm(self.tmp / "in" / "good.ppm", 240, 240, 2)
        (self.tmp / "in" / "bad.png").write_bytes(b"\x89PNG broken")
        p = run("preprocess", "--input", self.tmp / "in", "--out", self.tmp / "out", "--patch-size", 112)
        self.assertIn("bad.png", p.stderr)
        self.assertEqual(len(read_csv(self.tmp / "out" / "patch_manifest.csv")), 4)
        report = json.loads((self.tmp / "out" / "preprocess_report.json").read_text())
        self.assertEqual([e["image"] for e in report["errors"]], ["bad.png"])

    def test_all_files_failing_is_fatal(self):
        (self.tmp / "in").mkdir()
        (self.tmp / "in" / "bad.ppm").write_bytes(b"P6\n9 9\n255\nxx")
        self.assertNotEqual(run("preprocess", "--input", self.tmp / "in", "--out", self.tmp / "out", ok=False).returncode, 0)

    def test_target_profile_json(self):
        (self.tmp / "in").mkdir()
        write_stained_ppm(self.tmp / "in" / "s.ppm", 224, 224, 3)
        prof = dict(h_r=0.65, h_g=0.70, h_b=0.29, e_r=0.07, e_g=0.99, e_b=0.11, max_h=1.9, max_e=1.0)
        (self.tmp / "p.json").write_text(json.dumps(prof))
        run("preprocess", "--input", self.tmp / "in", "--out", self.tmp / "out", "--target-profile", self.tmp / "p.json")
        report = json.loads((self.tmp / "out" / "preprocess_report.json").read_text())
        self.assertAlmostEqual(report["target_profile"]["max_h"], 1.9)


class Pipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp(prefix="survfuse_pipe_"))
        run("synth", "--n", 80, "--seed", 7, "--out", cls.tmp / "syn")
        run("train", "--manifest", cls.tmp / "syn" / "manifest.csv", "--seed", 7, "--out", cls.tmp / "models",
            "--max-epochs", 3)
        run("evaluate", "--manifest", cls.tmp / "syn" / "manifest.csv", "--models", cls.tmp / "models",
            "--out", cls.tmp / "eval")

    def test_synth_is_reproducible(self):
        run("synth", "--n", 200, "--seed", 7, "--out", self.tmp / "a")
        run("synth", "--n", 200, "--seed", 7, "--out", self.tmp / "b")
        for f in ["manifest.csv", "ground_truth.csv", "embeddings/SYN-0200.fmat"]:
            self.assertEqual(digest(self.tmp / "a" / f), digest(self.tmp / "b" / f))
        self.assertEqual(len(read_csv(self.tmp / "a" / "manifest.csv")), 200)

    def test_seed_is_required(self):
        p = run("synth", "--n", 50, "--out", self.tmp / "x", ok=False)
        self.assertNotEqual(p.returncode, 0)
        self.assertIn("--seed", p.stderr)

    def test_train_artifacts(self):
        m = self.tmp / "models"
        for v in ["multimodal", "imaging_genetic", "imaging"]:
            for k in range(1, 6):
                self.assertTrue((m / "checkpoints" / f"{v}_fold{k}.ckpt").exists())
        log = read_csv(m / "train_log.csv")
        self.assertTrue(all(int(r["epoch"]) <= 3 for r in log))
        self.assertEqual(len(read_csv(m / "folds.csv")), 80)
        self.assertEqual(json.loads((m / "train_report.json").read_text())["schema_version"], 1)

    def test_report_fields_per_fold(self):
        report = json.loads((self.tmp / "eval" / "report.json").read_text())
        self.assertEqual(report["schema_version"], 1)
        self.assertEqual(report["seed"], 7)
        self.assertEqual([v["variant"] for v in report["variants"]],
                         ["multimodal", "imaging_genetic", "imaging", "clinical"])
        for v in report["variants"]:
            self.assertEqual(len(v["folds"]), 5)
            for f in v["folds"]:
                for key in ["c_index", "ibs_5y", "ibs_10y", "logrank_p"]:
                    self.assertIn(key, f)
        self.assertEqual(report["config"]["max_epochs"], "3")

    def test_cv_table_layout(self):
        with open(self.tmp / "eval" / "cv_table.csv") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "cv_fold,multimodal,imaging_genetic,imaging,clinical")
        self.assertEqual([l.split(",")[0] for l in lines[1:]], ["1", "2", "3", "4", "5", "mean", "sd"])

    def test_evaluate_is_byte_reproducible(self):
        run("evaluate", "--manifest", self.tmp / "syn" / "manifest.csv", "--models", self.tmp / "models",
            "--out", self.tmp / "eval2")
        for f in ["report.json", "cv_table.csv", "risks.csv"]:
            self.assertEqual(digest(self.tmp / "eval" / f), digest(self.tmp / "eval2" / f))

    def test_km_from_risks(self):
        p = run("km", "--risks", self.tmp / "eval" / "risks.csv", "--out", self.tmp / "km")
        self.assertIn("log-rank", p.stdout)
        ET.parse(self.tmp / "km" / "km.svg")
        groups = {r["group"] for r in read_csv(self.tmp / "km" / "km.csv")}
        self.assertEqual(groups, {"high", "low"})

    def test_km_single_group_plots_without_logrank(self):
        src = self.tmp / "one.csv"
        src.write_text("time,event,group\n1,1,all\n2,1,all\n3,0,all\n")
        p = run("km", "--risks", src, "--out", self.tmp / "km1")
        self.assertIn("warning", p.stderr)
        ET.parse(self.tmp / "km1" / "km.svg")
        rows = read_csv(self.tmp / "km1" / "km.csv")
        self.assertAlmostEqual(float(rows[0]["surv"]), 2 / 3, places=12)
        self.assertAlmostEqual(float(rows[1]["surv"]), 1 / 3, places=12)

    def test_config_errors_name_key_and_line(self):
        cfg = self.tmp / "bad.cfg"
        cfg.write_text("# run settings\nlr = 0.01\nbatch_size = zero\n")
        p = run("synth", "--seed", 1, "--out", self.tmp / "y", "--config", cfg, ok=False)
        self.assertEqual(p.returncode, 2)
        self.assertIn("bad.cfg:3", p.stderr)
        self.assertIn("batch_size", p.stderr)
        p = run("synth", "--seed", 1, "--out", self.tmp / "y", "--set", "n_patient=40", ok=False)
        self.assertEqual(p.returncode, 2)
        self.assertIn("n_patient", p.stderr)

    def test_flags_override_config_file(self):
        cfg = self.tmp / "n.cfg"
        cfg.write_text("n_patients = 30\n")
        run("synth", "--seed", 1, "--out", self.tmp / "z", "--config", cfg, "--n", 25)
        self.assertEqual(len(read_csv(self.tmp / "z" / "manifest.csv")), 25)
        run("synth", "--seed", 1, "--out", self.tmp / "z2", "--config", cfg)
        self.assertEqual(len(read_csv(self.tmp / "z2" / "manifest.csv")), 30)


if __name__ == "__main__":
    BIN = sys.argv.pop(1)
    unittest.main(verbosity=2)
