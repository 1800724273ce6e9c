//! Weighted pool-adjacent-violators for non-decreasing fits.

/// Least-squares non-decreasing fit of `values` under positive `weights`.
pub fn pava_weighted(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len(), "values and weights differ in length");
    // Blocks of (mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&y, &w) in values.iter().zip(weights) {
        blocks.push((y, w, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            let (m1, w1, l1) = blocks[n - 2];
            let (m2, w2, l2) = blocks[n - 1];
            if m1 <= m2 {
                break;
            }
            let w = w1 + w2;
            blocks.truncate(n - 2);
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (m, _, len) in blocks {
        out.extend(std::iter::repeat_n(m, len));
    }
    out
}

/// Unit-weight PAVA.
pub fn pava(values: &[f64]) -> Vec<f64> {
    pava_weighted(values, &vec![1.0; values.len()])
}
