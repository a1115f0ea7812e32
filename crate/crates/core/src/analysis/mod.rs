//! Result artifacts: perceived-salience elicitation and human ratings,
//! agreement matrices, salience alignment tables and the report bundle.

mod agreement;
mod alignment;
mod perceived;
mod report;
mod tables;

pub use agreement::{build_agreement_matrices, AgreementMatrix, CrossMode};
pub use alignment::{
    alignment_report, observed_scores, AlignmentInputs, AlignmentReport, AlignmentRow, Measure, ObservedSource,
};
pub use perceived::{elicit_perceived_salience, ingest_human_ratings, parse_ratings, ElicitOutcome};
pub use report::{csm_rows, file_stem, render_reports, CsmRow, ReportInputs};
pub use tables::{metric_rows, sweep_row, MetricRow, SweepRow};
