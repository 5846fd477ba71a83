//! Group maximum differentiation by corpus search: among images the
//! defender scores alike, find the pair the attacker separates most.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmadPair {
    pub defender: String,
    pub attacker: String,
    /// Quantile bin of the defender's scores, 0 = lowest.
    pub bin: usize,
    /// Image the attacker rates best within the bin.
    pub attacker_best: String,
    /// Image the attacker rates worst within the bin.
    pub attacker_worst: String,
    /// Defender scores of `attacker_best` and `attacker_worst`.
    pub defender_scores: [f64; 2],
    /// Attacker score of `attacker_best` minus that of `attacker_worst`.
    pub attacker_gap: f64,
}

/// The pair `(hi, lo)` of positions in `idx` (sorted by defender score)
/// maximizing `attacker[hi] - attacker[lo]` subject to
/// `|defender[hi] - defender[lo]| <= tol`. Sliding window with monotone
/// deques over the defender order.
fn best_pair(idx: &[usize], defender: &[f64], attacker: &[f64], tol: f64) -> Option<(usize, usize, f64)> {
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut left = 0;
    let mut best: Option<(usize, usize, f64)> = None;
    for right in 0..idx.len() {
        let r = idx[right];
        while maxq.back().is_some_and(|&b| attacker[idx[b]] < attacker[r]) {
            maxq.pop_back();
        }
        maxq.push_back(right);
        while minq.back().is_some_and(|&b| attacker[idx[b]] > attacker[r]) {
            minq.pop_back();
        }
        minq.push_back(right);
        while defender[r] - defender[idx[left]] > tol {
            left += 1;
            if maxq.front() == Some(&(left - 1)) {
                maxq.pop_front();
            }
            if minq.front() == Some(&(left - 1)) {
                minq.pop_front();
            }
        }
        if right > left {
            let (hi, lo) = (idx[maxq[0]], idx[minq[0]]);
            let gap = attacker[hi] - attacker[lo];
            if best.is_none_or(|b| gap > b.2) {
                best = Some((hi, lo, gap));
            }
        }
    }
    best
}

/// Splits the defender's score range into `bins` quantile bins and, within
/// each, reports the pair of images whose attacker scores differ most while
/// their defender scores differ by at most `tolerance` (default: the bin's
/// own width, i.e. any two images of the bin).
pub fn gmad_search(
    names: (&str, &str),
    defender: &[f64],
    attacker: &[f64],
    paths: &[String],
    bins: usize,
    tolerance: Option<f64>,
) -> Result<Vec<GmadPair>> {
    let n = defender.len();
    if attacker.len() != n || paths.len() != n {
        return Err(Error::shape(format!(
            "defender has {n} scores, attacker {}, corpus {}",
            attacker.len(),
            paths.len()
        )));
    }
    if bins == 0 {
        return Err(Error::domain("gMAD needs at least one bin"));
    }
    if defender.iter().chain(attacker).any(|v| !v.is_finite()) {
        return Err(Error::domain("gMAD scores must be finite"));
    }
    if tolerance.is_some_and(|t| !(t >= 0.0)) {
        return Err(Error::domain("gMAD tolerance must be non-negative"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| defender[a].total_cmp(&defender[b]).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for bin in 0..bins {
        let idx = &order[bin * n / bins..(bin + 1) * n / bins];
        if idx.len() < 2 {
            log::warn!("gMAD bin {bin} has {} images; skipped", idx.len());
            continue;
        }
        let width = defender[idx[idx.len() - 1]] - defender[idx[0]];
        let tol = tolerance.unwrap_or(width);
        if let Some((hi, lo, gap)) = best_pair(idx, defender, attacker, tol) {
            pairs.push(GmadPair {
                defender: names.0.to_string(),
                attacker: names.1.to_string(),
                bin,
                attacker_best: paths[hi].clone(),
                attacker_worst: paths[lo].clone(),
                defender_scores: [defender[hi], defender[lo]],
                attacker_gap: gap,
            });
        } else {
            log::warn!("gMAD bin {bin}: no two images within tolerance {tol}");
        }
    }
    Ok(pairs)
}

/// Both directions: `a` defending against `b`, then `b` against `a`.
pub fn gmad_competition(
    names: (&str, &str),
    a: &[f64],
    b: &[f64],
    paths: &[String],
    bins: usize,
    tolerance: Option<f64>,
) -> Result<Vec<GmadPair>> {
    let mut pairs = gmad_search(names, a, b, paths, bins, tolerance)?;
    pairs.extend(gmad_search((names.1, names.0), b, a, paths, bins, tolerance)?);
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn paths(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    /// Every ordered pair inside the bin.
    fn brute(idx: &[usize], d: &[f64], a: &[f64], tol: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for &i in idx {
            for &j in idx {
                if i != j && (d[i] - d[j]).abs() <= tol {
                    let g = a[i] - a[j];
                    best = Some(best.map_or(g, |b: f64| b.max(g)));
                }
            }
        }
        best
    }

    #[test]
    fn sliding_window_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let n = rng.random_range(2..25);
            let d: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..20u8))).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let tol = f64::from(rng.random_range(0..6u8));
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&x, &y| d[x].total_cmp(&d[y]));
            let fast = best_pair(&idx, &d, &a, tol).map(|p| p.2);
            assert_eq!(fast, brute(&idx, &d, &a, tol));
        }
    }

    #[test]
    fn reversed_attacker_picks_bin_endpoints() {
        let d: Vec<f64> = vec![0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8, 0.4];
        let a: Vec<f64> = d.iter().map(|v| -v).collect();
        let pairs = gmad_search(("d", "a"), &d, &a, &paths(8), 2, None).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].defender_scores, [0.1, 0.4]);
        assert_eq!(pairs[1].defender_scores, [0.5, 0.9]);
        assert_eq!((pairs[0].attacker_best.as_str(), pairs[0].attacker_worst.as_str()), ("img2", "img7"));
    }

    #[test]
    fn identical_attacker_gap_bounded_by_bin_width() {
        let d = [1.0, 4.0, 2.0, 8.0, 3.0, 6.0];
        let pairs = gmad_search(("d", "a"), &d, &d, &paths(6), 2, None).unwrap();
        for p in &pairs {
            assert!(p.attacker_gap <= (p.defender_scores[0] - p.defender_scores[1]).abs() + 1e-12);
        }
    }

    #[test]
    fn four_images_two_bins() {
        let d = [0.1, 0.2, 0.3, 0.4];
        let a = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(gmad_search(("d", "a"), &d, &a, &paths(4), 2, None).unwrap().len(), 2);
        assert!(gmad_search(("d", "a"), &d, &a, &paths(3), 2, None).is_err());
        // three bins over four images leave a one-image bin
        assert_eq!(gmad_search(("d", "a"), &d, &a, &paths(4), 3, None).unwrap().len(), 1);
    }

    #[test]
    fn competition_runs_both_ways() {
        let d = [0.1, 0.2, 0.3, 0.4];
        let a = [4.0, 1.0, 2.0, 3.0];
        let pairs = gmad_competition(("m1", "m2"), &d, &a, &paths(4), 2, None).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[2].defender, "m2");
    }
}
