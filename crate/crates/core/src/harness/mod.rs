//! Monte-Carlo evaluation, sweeps, training curves and recalibration
//! sessions.

mod ber;
mod curve;
mod session;
mod sweep;

pub use ber::{binomial_half_width, estimate_ber, estimate_ber_many, BerEstimate};
pub use curve::{
    converged_level, epochs_to_band, epochs_to_target, read_curve_csv, training_curve, write_curve_csv, CURVE_CSV_HEADER,
};
pub use session::{
    simulate_recalibration_session, write_session_csv, DriftSchedule, DriftSegment, Recalibration, SegmentLog,
    SessionLog, TriggerPolicy, SESSION_CSV_HEADER,
};
pub use sweep::{
    evaluate_point, run_sweep, write_sweep_csv, ModelSource, NoModels, OffsetSetting, SweepDetector, SweepRow, SweepSpec,
    SWEEP_CSV_HEADER,
};
