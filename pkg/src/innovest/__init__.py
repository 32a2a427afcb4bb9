"""Innovation-method parameter estimation for discretely observed diffusions.

Local Linearization filtering of the innovation fitness, UMDAc global search,
box-constrained Nelder-Mead refinement and SDE simulation.
"""

from .llfilter import PENALTY, FilterRun, FilterState, run_filter
from .local import LocalConfig, local_minimize, refined_estimate
from .models import (EstimationProblem, ParameterBox, StateSpaceModel, as_box, fhn_model, get_model,
                     multiplicative_model, ou_model)
from .objective import FitnessEvaluation, InnovationObjective, SphereObjective, q_fitness
from .rng import RngStream
from .simulate import ObservationSeries, Trajectory, simulate_path, synthesize
from .umdac import EstimationResult, UmdacConfig, umdac_minimize

__version__ = "0.1.0"
