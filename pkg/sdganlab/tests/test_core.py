from unittest import TestCase
from unittest.mock import patch
import json
import os
import shutil

import numpy as np

from sdganlab.backend import TrainingRun
from sdganlab.core import Cell, Configuration, Organizer, parse_config
from sdganlab.exceptions import ConfigError, DivergenceError
from sdganlab.history import HistoryHandler
from sdganlab.in_out import load_checkpoint

CONFIG_FILE = os.path.join(os.path.dirname(__file__), "data",
                           "config_tiny.toml")
TEMP_DIR = os.path.join(os.path.dirname(__file__), ".temp", "core")


def tiny_config(name, **kwargs):
    return Configuration(CONFIG_FILE, output_dir=os.path.join(TEMP_DIR, name),
                         **kwargs)


def read_file(*path):
    with open(os.path.join(*path)) as f:
        return f.read()


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True, skip_header=1)


class TestParseConfig(TestCase):
    def test_defaults(self):
        cfg = parse_config("")
        self.assertEqual(cfg, Configuration())
        self.assertEqual(cfg.training.beta_ema, 0.999)
        self.assertEqual(cfg.sd.kind, "feature")
        self.assertEqual(cfg.non_default_values(), {})

    def test_values(self):
        cfg = parse_config("seeds = [3, 4]\n[sd]\nkind = 'l1'\nalpha = 0.5\n")
        self.assertEqual(cfg.seeds, [3, 4])
        self.assertEqual(cfg.sd.kind, "l1")
        self.assertEqual(cfg.non_default_values(),
                         {"seeds": [3, 4], "sd.kind": "l1", "sd.alpha": 0.5})

    def test_json(self):
        cfg = parse_config('{"mode": "dirac_study", "dirac": {"alpha": 0.1}}')
        self.assertEqual(cfg.mode, "dirac_study")
        self.assertEqual(cfg.dirac.alpha, 0.1)

    def test_error_names_key(self):
        cases = {
            "[sd]\nalpha = -1.0\n": "sd.alpha",
            "[sd]\nweight = 1.0\n": "sd.weight",
            "mode = 'sample'\n": "mode",
            "epochs = 3\n": "epochs",
            "seeds = [1, 1]\n": "seeds",
            "[training]\nbeta_ema = 1.0\n": "training.beta_ema",
            "[training]\ncheckpoint_fractions = [0.5, 0.2]\n":
                "training.checkpoint_fractions",
            "[training]\nlatent_dim = 3\n": "model.generator_layers",
            "[data]\nkind = 'grid_of_gaussians'\n": "data",
            "[rank]\nk = 10\nk_inner = 6\n": "rank.k_inner",
            "[finetune.data]\nn_mode = 4\n": "finetune.data.n_mode",
            "[dirac]\neta_phi = 1.0\n": "dirac",
            "[dirac]\neta_phi_grid = [1.5]\n": "dirac.eta_phi_grid",
            "[dirac]\nalpha_grid = [0.0, -1.0]\n": "dirac.alpha_grid",
            "[finetune.data]\nmode_std = -1.0\n": "finetune.data.mode_std",
            "[finetune.data]\nkind = 'grid_of_gaussians'\n": "finetune.data",
            "[rank]\nk = 1\nk_inner = 2\n": "rank.k_inner",
        }
        for text, key in cases.items():
            with self.assertRaises(ConfigError) as cm:
                parse_config(text)
            self.assertTrue(str(cm.exception).startswith(key),
                            msg="{!r}: {}".format(text, cm.exception))

    def test_dirac_table(self):
        cfg = parse_config("mode = 'dirac_study'\n[dirac]\n"
                           "update = 'alternating'\neta_phi_grid = [0.5]\n")
        self.assertEqual(cfg.dirac.update, "alternating")
        self.assertEqual(cfg.dirac.eta_phi_grid, [0.5])
        self.assertEqual(cfg.non_default_values(), {
            "mode": "dirac_study", "dirac.update": "alternating",
            "dirac.eta_phi_grid": [0.5]})

    def test_malformed(self):
        for text in ("[sd\nalpha = 1", "{\"mode\": "):
            with self.assertRaises(ConfigError):
                parse_config(text)

    def test_round_trip(self):
        cfg = Configuration(CONFIG_FILE)
        cfg.ablation.augment = [False]
        cfg.finetune.data = {"kind": "grid_of_gaussians", "n_modes": 9}
        for fmt in ("toml", "json"):
            self.assertEqual(parse_config(cfg.dumps(fmt)), cfg)

    def test_config_hash(self):
        cfg = Configuration(CONFIG_FILE)
        same = Configuration(CONFIG_FILE, output_dir="elsewhere", threads=8)
        self.assertEqual(cfg.config_hash, same.config_hash)
        self.assertEqual(len(cfg.config_hash), 64)
        same.sd.alpha = 2.
        self.assertNotEqual(cfg.config_hash, same.config_hash)

    def test_kwargs(self):
        self.assertEqual(Configuration(seeds=[5]).seeds, [5])
        with self.assertRaises(ConfigError):
            Configuration(sd_alpha=1.)
        with self.assertRaises(ConfigError):
            Configuration().output_folder


class TestCells(TestCase):
    def test_train(self):
        cfg = parse_config("[sd]\nkind = 'l2'\naugment = false\n")
        self.assertEqual(cfg.cells(), [Cell("sd-l2-noaug", "l2", 1., False)])

    def test_baseline_name(self):
        self.assertEqual(Cell.make("feature", 0, True).name, "baseline-aug")

    def test_ablation_grid(self):
        cfg = parse_config("mode = 'ablate'\n")
        names = [cell.name for cell in cfg.cells()]
        self.assertEqual(names, [
            "baseline-aug", "sd-l1-aug", "sd-l2-aug", "sd-feature-aug",
            "baseline-noaug", "sd-l1-noaug", "sd-l2-noaug", "sd-feature-noaug"])
        self.assertEqual(cfg.cells()[0].alpha, 0.)


class OrganizerTestCase(TestCase):
    """
    Run the organizer on dummy directories in .temp/core.
    """
    def setUp(self):
        os.makedirs(TEMP_DIR)

    def tearDown(self):
        shutil.rmtree(TEMP_DIR)


class TestDiracStudy(OrganizerTestCase):
    def test_files(self):
        cfg = tiny_config("dirac", mode="dirac_study")
        paths = Organizer(cfg=cfg).run()
        self.assertEqual(set(paths), {
            "discrete_standard", "discrete_ema", "discrete_sd_no_ema",
            "discrete_sd_ema", "ode_standard", "ode_sd", "stability"})
        self.assertTrue(read_file(paths["ode_sd"]).startswith(
            "# config_hash: {}\nt,theta,psi,phi,radius\n".format(
                cfg.config_hash)))

        discrete = read_csv(paths["discrete_sd_ema"])
        self.assertEqual(len(discrete), 201)
        np.testing.assert_array_equal(discrete["t"], np.arange(201))

        ode = read_csv(paths["ode_standard"])
        self.assertEqual(len(ode), 11)
        self.assertAlmostEqual(ode["t"][-1], 1.)
        np.testing.assert_allclose(ode["radius"],
                                   np.hypot(ode["theta"], ode["psi"]))

        stability = read_csv(paths["stability"])
        self.assertEqual(len(stability), 6)
        np.testing.assert_array_equal(stability["routh_pass"],
                                      stability["alpha"] > 0)
        np.testing.assert_allclose(stability["margin"],
                                   stability["expected_margin"],
                                   rtol=1e-9, atol=1e-15)

    def test_log(self):
        cfg = tiny_config("dirac", mode="dirac_study")
        Organizer(cfg=cfg).run()
        log = read_file(cfg.output_folder, "log.txt")
        self.assertIn("Starting Dirac-GAN study", log)
        self.assertIn("4 of 6 cells pass", log)
        self.assertIn("discrete_sd_ema: 200 steps, final radius", log)
        self.assertIn("theta amplitude", log)

    def test_converged_variant_is_logged(self):
        cfg = tiny_config("dirac", mode="dirac_study")
        cfg.dirac.steps = 5000
        Organizer(cfg=cfg).run()
        log = read_file(cfg.output_folder, "log.txt")
        sd_ema = [line for line in log.splitlines()
                  if line.startswith("discrete_sd_ema:")]
        self.assertEqual(len(sd_ema), 1)
        self.assertTrue(sd_ema[0].endswith(", converged"))


class TestTraining(OrganizerTestCase):
    def test_records(self):
        cfg = tiny_config("train")
        records = Organizer(cfg=cfg).run()
        self.assertEqual([r.name for r in records],
                         ["sd-feature-aug_seed0", "sd-feature-aug_seed1"])
        history = HistoryHandler(cfg.output_folder)
        self.assertEqual(history.get_record_names(),
                         ["sd-feature-aug_seed0", "sd-feature-aug_seed1"])
        self.assertEqual(history.get_config_hash("sd-feature-aug_seed0"),
                         cfg.config_hash)

        data = history.get_record_data("sd-feature-aug_seed0")
        np.testing.assert_array_equal(data["step"], [0, 20, 40, 60])
        self.assertTrue(np.isnan(data["loss_D"][0]))
        self.assertTrue(np.all(np.isfinite(data["frechet_feature"])))
        np.testing.assert_array_equal(data["diverged"], 0)

        for record in records:
            self.assertFalse(record.diverged)
            self.assertEqual(len(record.trajectory_variance), 2)
            self.assertGreater(record.trajectory_variance[0], 0.)
        ckpt = load_checkpoint(os.path.join(
            cfg.output_folder, "saved_models",
            "sd-feature-aug_seed1_step0000030.json"))
        self.assertEqual((ckpt.step, ckpt.seed), (30, 1))
        series = Organizer(cfg=cfg).io.load_series("sd-feature-aug_seed0")
        self.assertEqual(series.fractions, (0.5, 1.))

        summary = history.get_summary()
        self.assertEqual(summary["config_hash"], cfg.config_hash)
        stats = summary["cells"]["sd-feature-aug"]
        self.assertEqual(stats["seeds"], [0, 1])
        self.assertEqual(stats["diverged"], 0)
        self.assertEqual(set(stats["frechet_data"]), {"mean", "median"})

    def test_deterministic(self):
        results = []
        for name in ("a", "b"):
            cfg = tiny_config(name, seeds=[3])
            Organizer(cfg=cfg).run()
            results.append((
                read_file(cfg.output_folder, "train_log",
                          "sd-feature-aug_seed3.csv"),
                read_file(cfg.output_folder, "saved_models",
                          "sd-feature-aug_seed3_step0000060.json"),
                read_file(cfg.output_folder, "summary.json")))
        self.assertEqual(results[0], results[1])

    def test_worker_processes(self):
        sequential = tiny_config("sequential")
        parallel = tiny_config("parallel", threads=2)
        for cfg in (sequential, parallel):
            Organizer(cfg=cfg).run()
        for seed in (0, 1):
            name = "sd-feature-aug_seed{}.csv".format(seed)
            self.assertEqual(
                read_file(sequential.output_folder, "train_log", name),
                read_file(parallel.output_folder, "train_log", name))

    def test_existing_runs_are_skipped(self):
        cfg = tiny_config("train", seeds=[0])
        first = Organizer(cfg=cfg).run()[0]
        with self.assertWarns(UserWarning):
            second = Organizer(cfg=cfg).run()[0]
        self.assertEqual(first.rows, second.rows)

    def test_other_config_in_folder(self):
        cfg = tiny_config("train", seeds=[0])
        cfg.training.steps = 20
        Organizer(cfg=cfg).run()
        cfg.sd.alpha = 0.5
        with self.assertRaises(ConfigError):
            Organizer(cfg=cfg).run()

    def test_divergence_is_isolated(self):
        original = TrainingRun.train_step

        def flaky(run):
            if run.seed == 1 and run.step == 10:
                raise DivergenceError("loss_D is nan in step 11")
            return original(run)

        cfg = tiny_config("train")
        with patch.object(TrainingRun, "train_step", autospec=True,
                          side_effect=flaky):
            with self.assertWarns(UserWarning):
                ok, diverged = Organizer(cfg=cfg).run()
        self.assertFalse(ok.diverged)
        self.assertTrue(diverged.diverged)
        self.assertIn("step 11", diverged.message)
        self.assertIsNone(diverged.trajectory_variance)
        self.assertEqual(diverged.rows[-1]["step"], 11)
        self.assertEqual(diverged.rows[-1]["diverged"], 1)

        stats = HistoryHandler(cfg.output_folder).get_summary()["cells"][
            "sd-feature-aug"]
        self.assertEqual(stats["diverged"], 1)
        self.assertEqual(stats["trajectory_variance"]["mean"],
                         ok.trajectory_variance[0])

    def test_failed_run_keeps_the_others(self):
        original = TrainingRun.train_step

        def broken(run):
            if run.seed == 0 and run.step == 5:
                raise ValueError("covariance is not positive definite")
            return original(run)

        cfg = tiny_config("train")
        with patch.object(TrainingRun, "train_step", autospec=True,
                          side_effect=broken):
            with self.assertRaises(ValueError):
                Organizer(cfg=cfg).run()
        history = HistoryHandler(cfg.output_folder)
        self.assertEqual([r.seed for r in history.get_records()], [1])
        stats = history.get_summary()["cells"]["sd-feature-aug"]
        self.assertEqual(stats["seeds"], [1])
        log = read_file(cfg.output_folder, "log.txt")
        self.assertIn("Run sd-feature-aug_seed0 failed", log)

    def test_ablation(self):
        cfg = tiny_config("ablate", mode="ablate", seeds=[0])
        cfg.training.steps = 20
        cfg.ablation.loss_kinds = ["l2"]
        cfg.ablation.augment = [False]
        records = Organizer(cfg=cfg).run()
        self.assertEqual([r.cell for r in records],
                         ["baseline-noaug", "sd-l2-noaug"])
        self.assertTrue(all(r.rows[-1]["alpha"] == a
                            for r, a in zip(records, (0., 1.))))
        summary = HistoryHandler(cfg.output_folder).get_summary()
        self.assertEqual(set(summary["cells"]), {"baseline-noaug",
                                                 "sd-l2-noaug"})


class TestFromCheckpoint(OrganizerTestCase):
    def setUp(self):
        super().setUp()
        self.train_cfg = tiny_config("train", seeds=[0])
        self.train_cfg.sd.alpha = 0.
        Organizer(cfg=self.train_cfg).run()
        self.ckpt_path = os.path.join(self.train_cfg.output_folder,
                                      "saved_models",
                                      "baseline-aug_seed0_step0000030.json")

    def test_finetune_continues_baseline(self):
        cfg = tiny_config("finetune", mode="finetune", seeds=[0])
        cfg.sd.alpha = 0.
        records = Organizer(cfg=cfg).run(self.ckpt_path)
        self.assertEqual([r.cell for r in records], ["finetune-baseline-aug"])
        self.assertEqual(records[0].rows[0]["step"], 30)
        self.assertEqual(records[0].rows[-1]["step"], 60)

        trained = load_checkpoint(os.path.join(
            self.train_cfg.output_folder, "saved_models",
            "baseline-aug_seed0_step0000060.json"))
        finetuned = load_checkpoint(os.path.join(
            cfg.output_folder, "saved_models",
            "finetune-baseline-aug_seed0_step0000060.json"))
        for net in ("generator", "discriminator", "ema"):
            for a, b in zip(getattr(trained, net), getattr(finetuned, net)):
                np.testing.assert_array_equal(a[0], b[0])
                np.testing.assert_array_equal(a[1], b[1])

    def test_finetune_compare(self):
        cfg = tiny_config("finetune", mode="finetune", seeds=[0])
        cfg.finetune.data = {"kind": "grid_of_gaussians", "n_modes": 9,
                             "radius_or_spacing": 1.}
        records = Organizer(cfg=cfg).run(self.ckpt_path)
        self.assertEqual([r.cell for r in records],
                         ["finetune-baseline-aug", "finetune-sd-feature-aug"])
        self.assertTrue(all(0 <= r.rows[-1]["modes_hit"] <= 9 for r in records))

    def test_finetune_keeps_configured_lr(self):
        cfg = tiny_config("finetune", mode="finetune", seeds=[0])
        cfg.sd.alpha = 0.
        cfg.training.lr_G = 5e-4
        with patch.object(TrainingRun, "set_optimizer_state", autospec=True,
                          side_effect=TrainingRun.set_optimizer_state) as mock:
            Organizer(cfg=cfg).run(self.ckpt_path)
        run = mock.call_args[0][0]
        self.assertEqual(run.opts[0].lr, 5e-4)
        self.assertEqual(run.opts[1].lr, 1e-3)
        self.assertGreater(run.opts[0].state["t"], 0)
        log = read_file(cfg.output_folder, "log.txt")
        self.assertIn("Learning rate of G changed from 0.001 (checkpoint) to "
                      "0.0005 (config)", log)
        self.assertNotIn("Learning rate of D", log)

    def test_folder_uses_latest_checkpoint(self):
        cfg = tiny_config("finetune", mode="finetune", seeds=[0])
        cfg.sd.alpha = 0.
        records = Organizer(cfg=cfg).run(self.train_cfg.output_folder)
        self.assertEqual(records[0].rows[0]["step"], 60)
        self.assertEqual(records[0].rows[-1]["step"], 90)
        log = read_file(cfg.output_folder, "log.txt")
        self.assertIn("baseline-aug_seed0_step0000060.json", log)

    def test_folder_without_run(self):
        cfg = tiny_config("rank", mode="rank", seeds=[0])
        with self.assertRaises(ConfigError) as cm:
            Organizer(cfg=cfg).run(self.train_cfg.output_folder)
        self.assertIn("sd-feature-aug_seed0", str(cm.exception))

    def test_needs_checkpoint(self):
        cfg = tiny_config("finetune", mode="finetune")
        with self.assertRaises(ConfigError):
            Organizer(cfg=cfg).run()

    def test_rank_report(self):
        cfg = tiny_config("rank", mode="rank", seeds=[0])
        reports = Organizer(cfg=cfg).run(self.ckpt_path)
        self.assertEqual(len(reports), 1)
        folder = os.path.join(cfg.output_folder, "reports")
        table = np.genfromtxt(os.path.join(folder, "rank_seed0.csv"),
                              delimiter=",", names=True, skip_header=1,
                              dtype=None, encoding="utf-8")
        self.assertEqual(len(table), 200)
        self.assertEqual(np.sum(table["group"] != "n/a"), 16)
        extremes = read_csv(os.path.join(folder, "rank_extremes_seed0.csv"))
        self.assertEqual(len(extremes), 16)
        self.assertEqual(extremes.dtype.names, (
            "latent_index", "sd_distance", "d_score", "group", "x", "y"))

    def test_architecture_mismatch(self):
        cfg = tiny_config("rank", mode="rank", seeds=[0])
        cfg.model.generator_layers = [2, 16, 2]
        with self.assertRaises(ValueError):
            Organizer(cfg=cfg).run(self.ckpt_path)


class TestConfigFile(TestCase):
    def test_tiny_file(self):
        cfg = Configuration(CONFIG_FILE)
        cfg.validate()
        self.assertEqual(cfg.training.steps, 60)
        self.assertEqual(cfg.training.lr_G, 1e-3)
        with open(CONFIG_FILE) as f:
            self.assertEqual(parse_config(f.read()), cfg)

    def test_shipped_configs(self):
        folder = os.path.join(os.path.dirname(__file__), "..", "..", "configs")
        for file in sorted(os.listdir(folder)):
            Configuration(os.path.join(folder, file)).validate()

    def test_stored_config(self):
        cfg = tiny_config("x")
        content = json.loads(json.dumps(cfg.to_dict(hashed_only=True)))
        self.assertNotIn("output_dir", content)
        self.assertEqual(Configuration.from_dict(content).config_hash,
                         cfg.config_hash)
