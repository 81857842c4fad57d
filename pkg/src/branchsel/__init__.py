"""Monte Carlo toolkit for branching Brownian motion with selection.

Engine: exact branch times, Gaussian displacement between events, selection
rules enforced on a time grid with Brownian-bridge barrier corrections.
An experiment CLI (``branchsel``) runs seeded replica ensembles for the
front-velocity measurements and the distributional consistency checks.
"""

from .bridges import BridgeQuery, crossing_prob, sample_crossing
from .engine import (DEFAULT_CAP, DEFAULT_DT, Genealogy, Particle, Population,
                     ProcessParams, SnapshotSeries, advance,
                     advance_with_lineage, init_population, simulate)
from .errors import (BranchselError, CapacityError, ConfigError,
                     ConsistencyError, EstimationError)
from .kernel import HAVE_EXTENSION, KERNEL_NAME
from .oracles import (brute_force_small_instance, equivalent_N,
                      extinction_constant, mu_for_width, theoretical_velocity,
                      velocity_bracket, velocity_gap_constant, yule_pmf)
from .rng import RngStream
from .selection import (KillLog, KillRecord, LBand, LinearBarrier, NBest,
                        NoSelection, Strip, apply_l_selection,
                        apply_linear_barrier, apply_n_selection, apply_strip,
                        simulate_coupled_lbbm)
from .stats import (HitCounts, StripFunctionals, VelocityEstimate,
                    envelope_check, gap_scaling_fit, hit_counter,
                    m_centering, max_position, renewal_velocity,
                    strip_functionals, v_functional, velocity_regression,
                    z_functional)

__version__ = "0.1.0"
