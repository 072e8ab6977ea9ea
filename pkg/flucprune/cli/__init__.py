from .commands import cmd_compare, cmd_eval, cmd_init, cmd_prune, cmd_stats, cmd_sweep, score_table
from .run_config import CONFIG_ENV, RunConfig
