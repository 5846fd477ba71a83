//! Discriminability (D), listwise ranking (L) and pairwise preference (P)
//! tests over a distorted corpus with known distortion levels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::correlation::srcc;
use crate::error::{Error, Result};
use crate::forge::{DistortionKind, SampleRecord};

/// One image of the test corpus: a pristine source (`kind == None`,
/// level 0) or one of its distorted versions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolItem {
    pub content: String,
    pub kind: Option<DistortionKind>,
    pub level: u8,
    pub path: String,
}

impl ProtocolItem {
    pub fn is_pristine(&self) -> bool {
        self.kind.is_none()
    }
}

/// Items for every record plus, when `pristine_dir` is given, one pristine
/// item per source at `{pristine_dir}/{source}.ppm`.
pub fn protocol_items(records: &[SampleRecord], pristine_dir: Option<&str>) -> Vec<ProtocolItem> {
    let mut items = Vec::new();
    if let Some(dir) = pristine_dir {
        let sources: std::collections::BTreeSet<&str> = records.iter().map(|r| r.source_id.as_str()).collect();
        items.extend(sources.into_iter().map(|s| ProtocolItem {
            content: s.to_string(),
            kind: None,
            level: 0,
            path: format!("{dir}/{s}.ppm"),
        }));
    }
    items.extend(records.iter().map(|r| ProtocolItem {
        content: r.source_id.clone(),
        kind: Some(r.kind),
        level: r.level,
        path: r.relative_path.clone(),
    }));
    items
}

/// Reference model whose score is `-level`, and `+1` for pristine images.
pub fn level_oracle_score(item: &ProtocolItem) -> f64 {
    if item.is_pristine() {
        1.0
    } else {
        -f64::from(item.level)
    }
}

/// Best threshold split: the maximum over thresholds `T` of
/// `(frac(pristine > T) + frac(distorted <= T)) / 2`.
pub fn d_test(pristine: &[f64], distorted: &[f64]) -> Result<f64> {
    if pristine.is_empty() || distorted.is_empty() {
        return Err(Error::domain("D-test needs pristine and distorted scores"));
    }
    if pristine.iter().chain(distorted).any(|v| v.is_nan()) {
        return Err(Error::domain("D-test scores must not be NaN"));
    }
    let mut p = pristine.to_vec();
    let mut d = distorted.to_vec();
    p.sort_by(f64::total_cmp);
    d.sort_by(f64::total_cmp);
    let (np, nd) = (p.len() as f64, d.len() as f64);
    let score = |t: f64| {
        let above = p.len() - p.partition_point(|&v| v <= t);
        let below = d.partition_point(|&v| v <= t);
        0.5 * (above as f64 / np + below as f64 / nd)
    };
    // the objective only changes at observed values
    Ok(std::iter::once(f64::NEG_INFINITY).chain(p.iter().chain(&d).copied()).map(score).fold(0.0, f64::max))
}

/// Scores of one content under one distortion kind, with their levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelGroup {
    pub levels: Vec<u8>,
    pub scores: Vec<f64>,
}

/// Mean SRCC between scores and negated levels over groups with at least
/// three entries. A constant-score group counts as 0.
pub fn l_test(groups: &[LevelGroup]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for g in groups {
        if g.levels.len() != g.scores.len() {
            return Err(Error::shape("L-test group has mismatched levels and scores"));
        }
        if g.scores.len() < 3 {
            log::warn!("L-test group with {} entries skipped", g.scores.len());
            continue;
        }
        let neg: Vec<f64> = g.levels.iter().map(|&l| -f64::from(l)).collect();
        match srcc(&g.scores, &neg) {
            Ok(r) => total += r,
            Err(Error::Numeric(_)) => log::warn!("L-test group with constant scores counted as 0"),
            Err(e) => return Err(e),
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::domain("L-test needs at least one group with three or more levels"));
    }
    Ok(total / used as f64)
}

/// Fraction of `(better, worse)` index pairs ranked correctly; ties count
/// one half.
pub fn p_test(scores: &[f64], pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::domain("P-test needs at least one pair"));
    }
    let mut total = 0.0;
    let mut ties = 0usize;
    for &(b, w) in pairs {
        let (sb, sw) = match (scores.get(b), scores.get(w)) {
            (Some(x), Some(y)) => (*x, *y),
            _ => return Err(Error::domain(format!("pair ({b}, {w}) out of range for {} scores", scores.len()))),
        };
        if sb > sw {
            total += 1.0;
        } else if sb == sw {
            total += 0.5;
            ties += 1;
        }
    }
    if ties > 0 {
        log::warn!("P-test: {ties} tied pairs counted as 0.5");
    }
    Ok(total / pairs.len() as f64)
}

/// Minimum level gap between two distorted images for a pair to count as
/// clearly discriminable.
pub const PAIR_LEVEL_GAP: u8 = 2;
/// Minimum level of a distorted image paired with its pristine source.
pub const PAIR_PRISTINE_LEVEL: u8 = 3;

/// `(better, worse)` pairs: same content and kind with a level gap of at
/// least two, or a pristine image against its own distortions of level
/// three or more.
pub fn discriminable_pairs(items: &[ProtocolItem]) -> Vec<(usize, usize)> {
    let mut by_content: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_content.entry(&it.content).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for idx in by_content.values() {
        for &a in idx {
            for &b in idx {
                let (ia, ib) = (&items[a], &items[b]);
                let ok = match (ia.kind, ib.kind) {
                    (None, Some(_)) => ib.level >= PAIR_PRISTINE_LEVEL,
                    (Some(ka), Some(kb)) => ka == kb && ib.level >= ia.level + PAIR_LEVEL_GAP,
                    _ => false,
                };
                if ok {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs
}

/// Groups by (content, kind), each with the pristine image prepended as
/// level 0 when present.
pub fn level_groups(items: &[ProtocolItem], scores: &[f64]) -> Vec<LevelGroup> {
    let mut pristine: BTreeMap<&str, f64> = BTreeMap::new();
    let mut groups: BTreeMap<(&str, DistortionKind), Vec<(u8, f64)>> = BTreeMap::new();
    for (it, &s) in items.iter().zip(scores) {
        match it.kind {
            None => {
                pristine.insert(&it.content, s);
            }
            Some(k) => groups.entry((&it.content, k)).or_default().push((it.level, s)),
        }
    }
    groups
        .into_iter()
        .map(|((content, _), mut entries)| {
            if let Some(&p) = pristine.get(content) {
                entries.push((0, p));
            }
            entries.sort_by_key(|e| e.0);
            LevelGroup { levels: entries.iter().map(|e| e.0).collect(), scores: entries.iter().map(|e| e.1).collect() }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolScores {
    pub d_test: f64,
    pub l_test: f64,
    pub p_test: f64,
}

/// All three tests for one model's scores over `items` (aligned).
pub fn run_protocol(items: &[ProtocolItem], scores: &[f64]) -> Result<ProtocolScores> {
    if items.len() != scores.len() {
        return Err(Error::shape(format!("{} items but {} scores", items.len(), scores.len())));
    }
    let (p, d): (Vec<_>, Vec<_>) = items.iter().zip(scores).partition(|(it, _)| it.is_pristine());
    let p: Vec<f64> = p.into_iter().map(|x| *x.1).collect();
    let d: Vec<f64> = d.into_iter().map(|x| *x.1).collect();
    Ok(ProtocolScores {
        d_test: d_test(&p, &d)?,
        l_test: l_test(&level_groups(items, scores))?,
        p_test: p_test(scores, &discriminable_pairs(items))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct sweep over every candidate threshold.
    fn d_oracle(p: &[f64], d: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        for &t in p.iter().chain(d).chain(&[f64::NEG_INFINITY]) {
            let a = p.iter().filter(|&&v| v > t).count() as f64 / p.len() as f64;
            let b = d.iter().filter(|&&v| v <= t).count() as f64 / d.len() as f64;
            best = best.max(0.5 * (a + b));
        }
        best
    }

    #[test]
    fn d_test_examples() {
        assert_eq!(d_test(&[5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(d_test(&[10.0], &[1.0, 9.0, 3.0]).unwrap(), 1.0);
        let same = [1.0, 2.0, 3.0, 4.0];
        let v = d_test(&same, &same).unwrap();
        assert!(v >= 0.5 && v <= 0.5 + 1.0 / 8.0);
        assert!(d_test(&[], &[1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let p: Vec<f64> = (0..rng.random_range(1..10)).map(|_| f64::from(rng.random_range(0..6u8))).collect();
            let d: Vec<f64> = (0..rng.random_range(1..10)).map(|_| f64::from(rng.random_range(0..6u8))).collect();
            assert_eq!(d_test(&p, &d).unwrap(), d_oracle(&p, &d));
        }
    }

    #[test]
    fn l_test_examples() {
        let g = |scores: &[f64]| LevelGroup { levels: vec![1, 2, 3, 4, 5], scores: scores.to_vec() };
        let good = g(&[-1.0, -2.0, -3.0, -4.0, -5.0]);
        let bad = g(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(l_test(&[good.clone(), good.clone()]).unwrap(), 1.0);
        assert_eq!(l_test(&[bad.clone()]).unwrap(), -1.0);
        assert_eq!(l_test(&[good.clone(), bad]).unwrap(), 0.0);
        assert_eq!(l_test(&[good, g(&[2.0; 5])]).unwrap(), 0.5);
        assert!(l_test(&[LevelGroup { levels: vec![1, 2], scores: vec![1.0, 0.0] }]).is_err());
    }

    #[test]
    fn p_test_examples() {
        let pairs = [(0, 1), (0, 2), (1, 2)];
        assert_eq!(p_test(&[3.0, 2.0, 1.0], &pairs).unwrap(), 1.0);
        assert_eq!(p_test(&[1.0, 2.0, 3.0], &pairs).unwrap(), 0.0);
        assert_eq!(p_test(&[1.0, 1.0, 0.0], &pairs).unwrap(), 2.5 / 3.0);
        assert!(p_test(&[1.0], &[]).is_err());
    }

    #[test]
    fn p_test_random_within_binomial_bound() {
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..2 * n).map(|_| rng.random()).collect();
        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
        let v = p_test(&scores, &pairs).unwrap();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((v - 0.5).abs() <= 3.0 * sigma, "{v}");
    }

    fn item(content: &str, kind: Option<DistortionKind>, level: u8) -> ProtocolItem {
        ProtocolItem { content: content.into(), kind, level, path: String::new() }
    }

    #[test]
    fn pair_construction() {
        let k = Some(DistortionKind::Jpeg);
        let items = vec![
            item("a", None, 0),
            item("a", k, 1),
            item("a", k, 2),
            item("a", k, 3),
            item("a", Some(DistortionKind::GaussianBlur), 3),
            item("b", k, 3),
        ];
        let pairs = discriminable_pairs(&items);
        assert_eq!(pairs, vec![(0, 3), (0, 4), (1, 3)]);
    }
}
