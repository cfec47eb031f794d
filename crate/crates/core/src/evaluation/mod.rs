//! ROC statistics, slide inference and heatmap rendering.

mod heatmap;
mod pauc;
mod predict;
mod report;
mod roc;

pub use heatmap::{
    heat_color, heatmap_layer, render_heatmap, ProbabilityMap, DEFAULT_THRESHOLD, OVERLAY_ALPHA,
};
pub use pauc::{pauc, roc_points, PartialAuc};
pub use predict::{
    aggregate_central, central_window, predict_slide, read_predictions, write_predictions,
    Aggregation, HeatTile, PatchPrediction, SegmentationModel, SelectorSupport, SlidePrediction,
    SupportProvider,
};
pub use report::{
    compare_report, evaluate_prediction, render_evaluation, CompareReport, CompareRow,
    EvaluationRow, SPEC90, UNDEFINED_AUC,
};
pub use roc::{delong_ci, delong_test, percent_change, roc_auc, sig_code, DelongTest, RocResult};
