//! Exact one-sided Wilcoxon signed-rank test.
//!
//! Zero differences are dropped; tied magnitudes receive midranks. For up to
//! 40 retained pairs the permutation distribution of the positive rank sum
//! is enumerated exactly with a subset-sum table over doubled ranks (counts
//! stay well inside the f64 integer range); beyond that a normal
//! approximation with tie correction takes over.

/// One-sided p-value for the alternative "a tends to exceed b", from paired
/// observations. Returns 1.0 when no pair differs.
pub fn wilcoxon_signed_rank_greater(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return 1.0;
    }
    let n = diffs.len();

    // Midranks over |d|, doubled so they are integers.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut double_ranks = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j (0-based) share the midrank (i+1 + j+1)/2.
        let doubled = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            double_ranks[idx] = doubled;
        }
        i = j + 1;
    }

    let w_plus_doubled: u64 = diffs
        .iter()
        .zip(&double_ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    if n <= 40 {
        exact_p_greater(&double_ranks, w_plus_doubled)
    } else {
        normal_p_greater(&double_ranks, w_plus_doubled)
    }
    .min(1.0)
    .max(0.0)
}

/// Exact tail probability P(W+ >= observed) under random signs.
fn exact_p_greater(double_ranks: &[u64], observed: u64) -> f64 {
    let total: u64 = double_ranks.iter().sum();
    // counts[s] = number of sign assignments with doubled rank sum s.
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in double_ranks {
        let r = r as usize;
        let new_reach = reach + r;
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach = new_reach;
    }
    let denom = 2f64.powi(double_ranks.len() as i32);
    let tail: f64 = counts[observed as usize..].iter().sum();
    tail / denom
}

/// Normal approximation with tie correction and continuity correction.
fn normal_p_greater(double_ranks: &[u64], observed_doubled: u64) -> f64 {
    let n = double_ranks.len() as f64;
    let w = observed_doubled as f64 / 2.0;
    let mean = n * (n + 1.0) / 4.0;
    // Var = sum r_i^2 / 4 over the true (halved) ranks.
    let var: f64 = double_ranks
        .iter()
        .map(|&r| {
            let rr = r as f64 / 2.0;
            rr * rr
        })
        .sum::<f64>()
        / 4.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (w - 0.5 - mean) / var.sqrt();
    0.5 * erfc_approx(z / std::f64::consts::SQRT_2)
}

/// Abramowitz-Stegun 7.1.26 style rational approximation, |error| < 1.5e-7.
fn erfc_approx(x: f64) -> f64 {
    let sign_neg = x < 0.0;
    let x_abs = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x_abs);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erfc = poly * (-x_abs * x_abs).exp();
    if sign_neg {
        2.0 - erfc
    } else {
        erfc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_distinct_ranks_match_textbook_tail() {
        // Five positive differences with distinct magnitudes: W+ = 15 and
        // P(W+ >= 15) = 1/32.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.9, 1.8, 2.7, 3.6, 4.5];
        let p = wilcoxon_signed_rank_greater(&a, &b);
        assert!((p - 1.0 / 32.0).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn symmetric_differences_are_not_significant() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 1.0, 4.0, 3.0];
        let p = wilcoxon_signed_rank_greater(&a, &b);
        assert!(p > 0.3, "p = {p}");
    }

    #[test]
    fn zero_differences_are_dropped() {
        let a = [1.0, 1.0, 1.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let b = [1.0, 1.0, 1.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        // Six positive differences after drops: p = 1/64.
        let p = wilcoxon_signed_rank_greater(&a, &b);
        assert!((p - 1.0 / 64.0).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn ties_get_midranks() {
        // Differences +1, +1, -1: each |d| ties at doubled midrank 4.
        // W+ = 4 (doubled 8); tail over 8 equally likely assignments:
        // P(W+d >= 8) = P(at least two positives) = 4/8.
        let a = [2.0, 2.0, 0.0];
        let b = [1.0, 1.0, 1.0];
        let p = wilcoxon_signed_rank_greater(&a, &b);
        assert!((p - 0.5).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn no_information_yields_one() {
        let a = [1.0, 2.0];
        assert_eq!(wilcoxon_signed_rank_greater(&a, &a), 1.0);
    }

    #[test]
    fn normal_branch_agrees_with_exact_on_boundary_sizes() {
        // Compare the exact DP and the normal approximation on a 30-pair
        // sample; they should land in the same neighborhood.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..30 {
            let x = i as f64 + 1.0;
            a.push(x + if i % 3 == 0 { -0.25 } else { 0.5 });
            b.push(x);
        }
        let dr: Vec<u64> = {
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let n = diffs.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
            let mut ranks = vec![0u64; n];
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
                    j += 1;
                }
                for &idx in &order[i..=j] {
                    ranks[idx] = (i + 1 + j + 1) as u64;
                }
                i = j + 1;
            }
            ranks
        };
        let w: u64 = a
            .iter()
            .zip(&b)
            .zip(&dr)
            .filter(|((x, y), _)| x > y)
            .map(|(_, r)| *r)
            .sum();
        let exact = exact_p_greater(&dr, w);
        let normal = normal_p_greater(&dr, w);
        assert!((exact - normal).abs() < 0.02, "{exact} vs {normal}");
    }
}
