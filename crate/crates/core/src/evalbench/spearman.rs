use std::cmp::Ordering;

use super::{EvalError, Result};
use crate::scalar::Scalar;

/// 1-based ranks; tied values share the mean of the positions they span.
pub fn fractional_ranks<T: Scalar>(xs: &[T]) -> Result<Vec<f64>> {
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold equal values: mean rank (i+1 + j) / 2
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    Ok(ranks)
}

/// Pearson correlation of two equal-length, non-constant sequences.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::Length {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::Constant("first"));
    }
    if syy == 0.0 {
        return Err(EvalError::Constant("second"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman<T: Scalar>(xs: &[T], ys: &[T]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::Length {
            left: xs.len(),
            right: ys.len(),
        });
    }
    pearson(&fractional_ranks(xs)?, &fractional_ranks(ys)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_monotone() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
    }

    #[test]
    fn perfect_inverse() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap(), -1.0);
    }

    #[test]
    fn tie_ranks_are_averaged() {
        assert_eq!(fractional_ranks(&[1.0, 2.0, 2.0, 3.0]).unwrap(), [1.0, 2.5, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[5.0f32, 5.0, 5.0]).unwrap(), [2.0, 2.0, 2.0]);
    }

    #[test]
    fn ties_against_strict_order() {
        // ranks x = [1, 2.5, 2.5, 4], y = [1, 2, 3, 4]:
        // sxy = 4.5, sxx = 4.5, syy = 5 -> 4.5 / sqrt(22.5)
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 4.5 / 22.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::Constant(_))));
        assert!(matches!(spearman(&[1.0], &[1.0]), Err(EvalError::Length { .. })));
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0]), Err(EvalError::Length { .. })));
        assert!(matches!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]), Err(EvalError::NonFinite(1))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn seqs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (2usize..30).prop_flat_map(|n| {
                (
                    proptest::collection::vec((0i32..8).prop_map(f64::from), n),
                    proptest::collection::vec(-50.0f64..50.0, n),
                )
            })
        }

        proptest! {
            #[test]
            fn symmetric((xs, ys) in seqs()) {
                if let Ok(a) = spearman(&xs, &ys) {
                    prop_assert!((a - spearman(&ys, &xs).unwrap()).abs() < 1e-12);
                }
            }

            #[test]
            fn invariant_under_increasing_maps((xs, ys) in seqs()) {
                if let Ok(a) = spearman(&xs, &ys) {
                    let tx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
                    let ty: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
                    prop_assert!((a - spearman(&tx, &ty).unwrap()).abs() < 1e-12);
                }
            }
        }
    }
}
