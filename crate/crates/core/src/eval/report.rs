use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::correlation::{plcc, srcc};
use super::gmad::GmadPair;
use super::logistic::{fit_logistic, LogisticFit};
use super::waterloo::ProtocolScores;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session: usize,
    pub srcc: f64,
    pub plcc: f64,
    pub fit: LogisticFit,
    pub mapped: Vec<f64>,
}

/// SRCC on raw predictions, PLCC after the logistic mapping.
pub fn evaluate_session(session: usize, predictions: &[f64], scores: &[f64]) -> Result<SessionResult> {
    let rank = srcc(predictions, scores)?;
    let fit = fit_logistic(predictions, scores)?;
    let mapped = fit.map(predictions);
    let linear = plcc(&mapped, scores)?;
    Ok(SessionResult { session, srcc: rank, plcc: linear, fit, mapped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub sessions: Vec<SessionResult>,
    pub mean_srcc: f64,
    pub mean_plcc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolScores>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub gmad: Vec<GmadPair>,
}

impl EvalReport {
    pub fn new(model: &str, sessions: Vec<SessionResult>) -> Result<Self> {
        if sessions.is_empty() {
            return Err(Error::domain("report needs at least one session"));
        }
        let n = sessions.len() as f64;
        let mean_srcc = sessions.iter().map(|s| s.srcc).sum::<f64>() / n;
        let mean_plcc = sessions.iter().map(|s| s.plcc).sum::<f64>() / n;
        Ok(Self { model: model.to_string(), sessions, mean_srcc, mean_plcc, protocol: None, gmad: Vec::new() })
    }

    /// Plain-text table: one row per session, then the mean, with an
    /// optional D/L/P line and gMAD pair list.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model);
        let _ = writeln!(out, "{:>8}  {:>8}  {:>8}  {:>9}", "session", "SRCC", "PLCC", "converged");
        for s in &self.sessions {
            let _ = writeln!(out, "{:>8}  {:>8.4}  {:>8.4}  {:>9}", s.session, s.srcc, s.plcc, s.fit.converged);
        }
        let _ = writeln!(out, "{:>8}  {:>8.4}  {:>8.4}", "mean", self.mean_srcc, self.mean_plcc);
        if let Some(p) = &self.protocol {
            let _ = writeln!(out, "D-test {:.4}  L-test {:.4}  P-test {:.4}", p.d_test, p.l_test, p.p_test);
        }
        for g in &self.gmad {
            let _ = writeln!(
                out,
                "gMAD bin {} defender {} attacker {}: {} vs {} (defender {:.4}/{:.4}, attacker gap {:.4})",
                g.bin, g.defender, g.attacker, g.attacker_best, g.attacker_worst, g.defender_scores[0], g.defender_scores[1], g.attacker_gap
            );
        }
        out
    }
}
