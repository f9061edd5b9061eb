"""Nonlinear system identification with state-space neural networks.

Recurrent one-hidden-layer state-space models (optionally with an explicit
parallel linear term), trained on simulation error by Levenberg-Marquardt
with an SVD-truncated step, and initialized either randomly or from a
linear approximation of the system.
"""
from .signals import (Dataset, MultisineSpec, Normalization, SweepSpec,
                      generate_multisine, generate_sinesweep,
                      normalize_dataset, denormalize_dataset, rmse)
from .lti import (LtiStateSpace, LtiFit, LtiEstimateOptions, estimate_lti,
                  impulse_response, normalize_states, simulate_lti)
from .ssnn import (Activation, Dims, GrSsnnModel, ParamVector, SsnnModel,
                   SimulationDiverged, jacobian_bptt, pack, simulate, unpack)
from .initializers import (InitScheme, SCHEMES, build_initial_model,
                           init_from_lti, init_random, select_gamma)
from .optim import LmOptions, TrainReport, cost, lm_minimize, lm_train
from .bench import (BoucWenParams, Saturation, WhParams, load_dataset,
                    make_boucwen_datasets, make_wh_datasets, save_dataset,
                    simulate_boucwen, simulate_wh)

__version__ = "0.1.0"
