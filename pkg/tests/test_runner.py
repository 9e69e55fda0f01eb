import numpy as np
import pytest

from bsgd.config import parse_config
from bsgd.errors import ConfigError, RunError
from bsgd.runner import build_problem, override, run_experiment

from test_config import BASE


def test_diverging_run_is_reported():
    cfg = parse_config(BASE.replace("mu0 = 0.00048828125", "mu0 = 0.05").replace("epochs = 10", "epochs = 400"))
    log = run_experiment(cfg, write=False)
    assert log.diverged
    assert log.rows[-1]["epoch"] < 400
    assert log.residual_norms[-1] > 10 * log.residual_norms[0] or not np.isfinite(log.residual_norms[-1])


def test_rows_and_effective_epochs():
    cfg = parse_config(BASE.replace("epochs = 10", "epochs = 7\nmetric_period = 3"))
    log = run_experiment(cfg, write=False)
    assert log.column("epoch") == [0, 3, 6, 7]
    assert log.column("effective_epoch") == [0.0, 1.5, 3.0, 3.5]
    assert log.rows[0]["DS"] > log.rows[-1]["DS"]


def test_baseline_master_storage():
    gd = parse_config(BASE.replace("name = bsgd", "name = sag"))
    log = run_experiment(gd, write=False)
    r, c = 1080, 256
    assert log.rows[0]["master_storage"] == r + c + 4 * c


def test_im_final_phase_switches_to_plain():
    text = BASE.replace("M = 4\nN = 2", "M = 4\nN = 2\ntiles_per_angle = 3").replace(
        "name = bsgd", "name = bsgd_im\nim_final_phase = 0.5").replace("epochs = 10", "epochs = 4")
    cfg = parse_config(text)
    problem = build_problem(cfg)
    log = run_experiment(cfg, write=False, problem=problem, x_lsq=np.zeros(256))
    mults = np.diff(log.column("block_mults"))
    assert list(mults) == [8, 8, 8, 8]
    # scalar work drops to a third while tiles are sampled, then returns to full blocks
    none = override(cfg, method={"im_final_phase": 0.0})
    all_plain = override(cfg, method={"name": "bsgd"})
    ops = [run_experiment(c, write=False, problem=problem, x_lsq=np.zeros(256)).ledger["scalar_ops"]
           for c in (none, cfg, all_plain)]
    assert ops[0] * 3 == ops[2]
    assert ops[1] == (ops[0] + ops[2]) // 2


def test_override_revalidates():
    cfg = parse_config(BASE)
    with pytest.raises(ConfigError):
        override(cfg, tuning={"mu0": -1.0})


def test_run_error_wraps_library_errors():
    cfg = parse_config(BASE.replace("M = 4", "M = 40"))
    with pytest.raises(RunError, match="M=40"):
        run_experiment(cfg, write=False)
