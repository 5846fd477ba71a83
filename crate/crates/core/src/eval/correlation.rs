use crate::error::{Error, Result};

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean(i+1..=j)
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("score lists differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min_len {
        return Err(Error::domain(format!("need at least {min_len} paired scores, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    Ok(())
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("correlation undefined for zero-variance input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson linear correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson_unchecked(x, y)
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 3)?;
    pearson_unchecked(&average_ranks(x), &average_ranks(y))
}

/// Pearson correlation between logistic-mapped predictions and scores.
pub fn plcc(mapped: &[f64], scores: &[f64]) -> Result<f64> {
    pearson(mapped, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn srcc_examples() {
        assert_eq!(srcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 0.5);
        assert_eq!(srcc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 8.0, 9.0, 30.0]).unwrap(), 1.0);
        assert_eq!(srcc(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(srcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(srcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn plcc_examples() {
        let s = [1.0, 2.0, 4.0];
        assert!((plcc(&[1.0, 2.0, 3.0], &s).unwrap() - 0.981_980_506_061_965_7).abs() < 1e-12);
        assert!((plcc(&s, &s).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc(&[-1.0, -2.0, -4.0], &s).unwrap() + 1.0).abs() < 1e-15);
        assert!(plcc(&[3.0, 3.0, 3.0], &s).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_maps(
            pairs in prop::collection::vec((-50i32..50, -50i32..50), 3..30),
            a in 0.1f64..10.0, b in -5.0f64..5.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
            if let (Ok(r), Ok(p)) = (srcc(&x, &y), pearson(&x, &y)) {
                let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let xc: Vec<f64> = x.iter().map(|v| v.powi(3) + v).collect();
                prop_assert!((srcc(&xa, &y).unwrap() - r).abs() < 1e-12);
                prop_assert!((srcc(&xc, &y).unwrap() - r).abs() < 1e-12);
                prop_assert!((pearson(&xa, &y).unwrap() - p).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r) && (-1.0..=1.0).contains(&p));
            }
        }
    }
}
