"""Block stochastic gradient descent for tomographic reconstruction.

The explicit sparse system matrix is split into row and column blocks; the
solver touches a random subset of blocks per epoch while a cost ledger
accounts for what a master/servant cluster would compute and transfer.
"""

from .baselines import lsqr_solve
from .config import ExperimentConfig, load_config, parse_config
from .partition import SamplingFractions, make_partition, select_alpha_gamma
from .projector import build_geometry, system_matrix
from .runner import run_experiment
from .solver import TuningConstants, bsgd_epoch, bsgd_im_epoch, bsgd_tv_epoch, init_state
from .system import BlockSystem

__version__ = "0.1.0"
