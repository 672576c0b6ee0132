"""Marriage-incidence estimation from retrospective cross-sectional cohorts."""
from .core_model import (ModelConfig, ModelError, PiecewiseRate, SimParams, State,
                         integrated_hazard, transition_rate)
from .estimation import FitResult, ReplicationSummary, fit, run_scenario, standard_errors
from .likelihood import ConstantRateModel, joint_loglik, loglik_gradient
from .prediction import MortalityTable, predict_marriage_by_age, predict_married_and_alive
from .records import CohortSample, Design, SurveyRecord
from .simulator import scenario, simulate_cohorts
from .survey_analysis import IncidenceModel, fit_survey, parse_survey_file

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "ModelError", "PiecewiseRate", "SimParams", "State",
    "integrated_hazard", "transition_rate", "FitResult", "ReplicationSummary",
    "fit", "run_scenario", "standard_errors", "ConstantRateModel", "joint_loglik",
    "loglik_gradient", "CohortSample", "Design", "SurveyRecord", "MortalityTable",
    "predict_marriage_by_age", "predict_married_and_alive", "scenario", "simulate_cohorts",
    "IncidenceModel", "fit_survey", "parse_survey_file", "__version__",
]
