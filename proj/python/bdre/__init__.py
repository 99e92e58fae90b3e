"""Birth-death processes in an interactive random environment."""

from ._bdre import (
    BdreError,
    Check,
    CommandResult,
    Config,
    G,
    __version__,
    balance_residual,
    busy_period_mgf_series,
    command_names,
    g,
    invariant_jump,
    load_config,
    parse_config,
    run_command,
    theta,
    tv_distance,
    u_star,
    xi_diffusive,
    xi_rbm_arrival_closed_form,
)

__all__ = [name for name in dir() if not name.startswith("_")]
