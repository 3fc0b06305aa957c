use super::ScoringError;
use crate::Scalar;

/// Equal error rate of `(score, is_target)` items.
///
/// Thresholds sweep the distinct scores from high to low; an item is
/// accepted when its score is at least the threshold. The sweep starts at
/// (FAR, FRR) = (0, 1) with nothing accepted and stops at the first
/// operating point with FAR >= FRR; the EER is where the segment from the
/// previous point crosses FAR = FRR.
pub fn compute_eer<T: Scalar>(items: &[(T, bool)]) -> Result<f64, ScoringError> {
    if items.iter().any(|(s, _)| !s.is_finite()) {
        return Err(ScoringError::NonFiniteScore);
    }
    let positives = items.iter().filter(|(_, l)| *l).count();
    let negatives = items.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ScoringError::SingleClassInput { positives, negatives });
    }
    let mut sorted: Vec<(T, bool)> = items.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));

    let (p, n) = (positives as f64, negatives as f64);
    let (mut far_prev, mut frr_prev) = (0.0, 1.0);
    let (mut accepted_pos, mut accepted_neg) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                accepted_pos += 1;
            } else {
                accepted_neg += 1;
            }
            i += 1;
        }
        let far = accepted_neg as f64 / n;
        let frr = (positives - accepted_pos) as f64 / p;
        if far >= frr {
            let gap_prev = frr_prev - far_prev;
            let gap_cur = frr - far;
            let t = gap_prev / (gap_prev - gap_cur);
            return Ok(far_prev + t * (far - far_prev));
        }
        far_prev = far;
        frr_prev = frr;
    }
    unreachable!("accepting every item gives FAR = 1 >= FRR = 0")
}

/// Fraction of `(decision, label)` items where the two agree.
pub fn compute_acc(items: &[(bool, bool)]) -> Result<f64, ScoringError> {
    if items.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let correct = items.iter().filter(|(d, l)| d == l).count();
    Ok(correct as f64 / items.len() as f64)
}
