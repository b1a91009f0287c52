//! Metrics, softmax-sum ensembling, confusion matrices, mismatch flagging and
//! verdict bookkeeping.

mod audit;
mod confusion;
mod fixture;
mod predictions;

pub use audit::{
    apply_verdicts, attach_image_refs, audit_metrics, flag_mismatches, read_candidates, validate_verdict, write_candidates, AuditCandidate,
    AuditMetrics, CandidateStatus, CorrectedEvaluation, Decision, RegionDelta, Verdict, VerdictLedger,
};
pub use confusion::{archive_confusion, cm_delta, confusion_matrix, evaluate, AccuracyReport, ConfusionDelta, ConfusionMatrix, RegionAccuracy};
pub use fixture::{
    paper_fixture, AuditFixture, FIXTURE_MISMATCHES, FIXTURE_OUT_OF_DOMAIN, FIXTURE_RECORDS, FIXTURE_RELABELS, FIXTURE_RELABELS_TO_PREDICTION,
    FIXTURE_UNUSABLE, REFERENCE_SIMCLR_ACCURACY, REFERENCE_SIMCLR_CORRECTED, REFERENCE_SIMCLR_THORACIC_SPINE,
};
pub use predictions::{ensemble_predict, Prediction, PredictionSet, PROBABILITY_TOLERANCE};
