//! Metrics, full-frame inference and experiment drivers.

mod experiment;
mod metrics;
mod pipeline;

pub use experiment::{
    evaluate, evaluation_scenes, init_model, report, run_experiment, run_view_sweep, train_for,
    train_module, training_scenes, EvalReport, Module, Pcp3d, QueryStats,
};
pub use metrics::{
    average_precision, match_and_score, matching_f1, matching_pairs, mpjpe, pcp3d, rank_and_match,
    score_centers, score_poses, DetectionScore, Frame, MatchingScores, PairCounts, PrCurve,
    ScoredPose, PCP_ALPHA, THRESHOLDS_MM,
};
pub use pipeline::{infer_frame, match_ground_truth, FrameOutput, Models, PersonEstimate};
