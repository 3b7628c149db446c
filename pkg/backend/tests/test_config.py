import math
import os
import sys
import tempfile
import unittest

sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from backend import config
from backend.cascade_simulator import ChannelConfig, QdSourceConfig, SpdcSourceConfig
from backend.errors import ConfigError


class TestRunConfig(unittest.TestCase):
    """Parsing of the INI run configuration"""

    def test_defaults(self):
        cfg = config.RunConfig.defaults()
        self.assertEqual(cfg.source["kind"], "qd")
        self.assertEqual(cfg.analysis["windows_ns"], [0.12, 0.16, 0.28, 0.8])
        self.assertAlmostEqual(cfg.source["pulse_area_rad"], math.pi)
        self.assertIsNone(cfg.chain["analyzer_x"])

    def test_values_are_typed(self):
        cfg = config.parse_run_config(
            "[run]\nseed = 42\npulses = 5000\n"
            "[source]\nkind = spdc\nmu = 0.3\nmodes = 4\n"
            "[chain]\nimplicit_sync = yes\nanalyzer_x = -y\nanalyzer_xx = 0, 0.6, 0.8\n"
            "[analysis]\nwindows_ns = 0.2, 0.4\nherald = xx\n")
        self.assertEqual(cfg.run["seed"], 42)
        self.assertEqual(cfg.source["modes"], 4)
        self.assertTrue(cfg.chain["implicit_sync"])
        self.assertEqual(cfg.chain["analyzer_x"], (0.0, -1.0, 0.0))
        self.assertEqual(cfg.chain["analyzer_xx"], (0.0, 0.6, 0.8))
        self.assertEqual(cfg.analysis["windows_ns"], [0.2, 0.4])
        self.assertEqual(cfg.analysis["herald"], "xx")
        self.assertEqual(cfg.analysis["side_peaks"], 5)

    def test_detector_overrides(self):
        cfg = config.parse_run_config("[chain]\nefficiency = 0.7\nxx2_efficiency = 0.4\n")
        self.assertEqual(cfg.detector_value("x1", "efficiency"), 0.7)
        self.assertEqual(cfg.detector_value("xx2", "efficiency"), 0.4)
        chain = ChannelConfig.from_run_config(cfg)
        self.assertEqual(chain.xx2.efficiency, 0.4)
        self.assertEqual(chain.x1.efficiency, 0.7)

    def test_sources_from_config(self):
        cfg = config.parse_run_config("[source]\nstate = werner\nwerner_p = 0.5\nfss_uev = 1.5\n")
        src = QdSourceConfig.from_run_config(cfg)
        self.assertEqual(src.fss_ueV, 1.5)
        self.assertAlmostEqual(src.rho.purity(), (1 + 3 * 0.5 ** 2) / 4)
        self.assertEqual(SpdcSourceConfig.from_run_config(cfg).mu, 0.1)

    def test_unknown_section(self):
        with self.assertRaises(ConfigError):
            config.parse_run_config("[detector]\nefficiency = 0.5\n")

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            config.parse_run_config("[chain]\nquantum_efficiency = 0.5\n")

    def test_bad_values(self):
        for text in ("[run]\nseed = abc\n", "[source]\nkind = laser\n",
                     "[chain]\nimplicit_sync = maybe\n", "[chain]\nanalyzer_x = 1, 0\n"):
            with self.assertRaises(ConfigError, msg=text):
                config.parse_run_config(text)

    def test_malformed_file(self):
        with self.assertRaises(ConfigError):
            config.parse_run_config("seed = 1\n")

    def test_load_from_disk(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.ini")
            with open(path, "w") as fh:
                fh.write("[run]\npulses = 10 # inline comment\n")
            cfg = config.load_run_config(path)
        self.assertEqual(cfg.run["pulses"], 10)
        self.assertEqual(cfg.path, path)
        with self.assertRaises(ConfigError):
            config.load_run_config(os.path.join(tmp, "missing.ini"))


class TestLogging(unittest.TestCase):

    def test_unknown_level(self):
        with self.assertRaises(ConfigError):
            config.configure_logging("CHATTY")

    def test_known_level(self):
        config.configure_logging("warning")


if __name__ == '__main__':
    unittest.main()
