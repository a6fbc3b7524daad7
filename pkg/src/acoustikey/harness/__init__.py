from .config import ConfigError, load_config
from .plan import ExperimentPlan, load_plan, plan_from_dict
from .runner import rows_to_csv, run_experiment, run_plan

__all__ = ["ConfigError", "ExperimentPlan", "load_config", "load_plan", "plan_from_dict",
           "rows_to_csv", "run_experiment", "run_plan"]
