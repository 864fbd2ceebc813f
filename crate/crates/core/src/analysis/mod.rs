//! Generalization-bound arithmetic, Lipschitz estimates, and parameter sweeps.

mod bound;
mod lipschitz;
mod sweep;

pub use bound::{
    delta_components, delta_term, generalization_bound, h2_monte_carlo, h2_norm, BoundInputs,
    BoundReport, DeltaComponents, H2Estimate,
};
pub use lipschitz::{
    empirical_lipschitz, essential_state_bound, estimate_immersion_lipschitz, network_lipschitz,
    probe_pairs, transient_bound, LOCAL_PROBE_STEP, MAX_IMMERSION_PAIRS,
};
pub use sweep::{
    run_gamma_sweep, SweepRow, SweepSpec, SweepTable, TrainedCell, DATA_STREAM, EVAL_STREAM,
    PROBE_STREAM, SWEEP_CSV_HEADER,
};
