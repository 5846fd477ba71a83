//! Correlation metrics with logistic mapping, content-disjoint splits,
//! D/L/P robustness tests and gMAD corpus search.

mod correlation;
mod gmad;
mod logistic;
mod report;
mod scores;
mod splits;
mod waterloo;

pub use correlation::{average_ranks, pearson, plcc, srcc};
pub use gmad::{gmad_competition, gmad_search, GmadPair, DEFAULT_BINS};
pub use logistic::{fit_logistic, logistic, LogisticFit, MAX_ITERATIONS, REL_TOLERANCE};
pub use report::{evaluate_session, EvalReport, SessionResult};
pub use scores::{encode_scores, read_scores, write_scores, ScoreRow};
pub use splits::{make_splits, SplitPlan, MIN_SOURCES, TRAIN_FRACTION};
pub use waterloo::{
    d_test, discriminable_pairs, l_test, level_groups, level_oracle_score, p_test, protocol_items, run_protocol,
    LevelGroup, ProtocolItem, ProtocolScores, PAIR_LEVEL_GAP, PAIR_PRISTINE_LEVEL,
};
