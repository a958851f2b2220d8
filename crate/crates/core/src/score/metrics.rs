use crate::model::Counts;

/// F-beta from raw counts.
///
/// Evaluated as `(1+β²)·tp / ((1+β²)·tp + β²·fn + fp)`, which equals
/// `(1+β²)·P·R / (β²·P + R)`. Returns 0.0 when `tp == 0` (including the
/// all-zero case).
pub fn fbeta(tp: u64, fp: u64, fn_: u64, beta: f64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let b2 = beta * beta;
    let weighted_tp = (1.0 + b2) * tp as f64;
    weighted_tp / (weighted_tp + b2 * fn_ as f64 + fp as f64)
}

pub fn fbeta_counts(counts: &Counts, beta: f64) -> f64 {
    fbeta(counts.tp, counts.fp, counts.fn_, beta)
}

/// `((f1_d + f1_s) / 2) · ((f1_v + f1_f) / 2)`.
pub fn avg_f1(f1_d: f64, f1_s: f64, f1_v: f64, f1_f: f64) -> f64 {
    ((f1_d + f1_s) / 2.0) * ((f1_v + f1_f) / 2.0)
}
