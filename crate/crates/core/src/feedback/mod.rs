//! Design ratings from designers and customers, mean opinion scores and the
//! 2x2 segregation of designs by the two questions.
//!
//! A question counts as answered in the affirmative when the mean score is
//! strictly greater than 3; a mean of exactly 3.0 is negative.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod fixture;
mod sqlite;

pub use sqlite::SqliteStore;

pub const MIN_SCORE: i64 = 1;
pub const MAX_SCORE: i64 = 5;
pub const AFFIRMATIVE_ABOVE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderLine {
    Men,
    Women,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Job { job_id: String },
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub design_id: String,
    pub image_uri: String,
    pub gender_line: GenderLine,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterKind {
    Designer,
    Customer,
}

/// Designers answer q1 "inspires me" and q2 "would manufacture";
/// customers answer q1 "fresh" and q2 "would buy".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    Q1,
    Q2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub rater_id: String,
    pub rater_kind: RaterKind,
    pub design_id: String,
    pub question: Question,
    pub score: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

impl Rating {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_SCORE..=MAX_SCORE).contains(&self.score) {
            return Err(Error::Range(self.score));
        }
        if self.rater_id.is_empty() || self.design_id.is_empty() {
            return Err(Error::Argument("rater_id and design_id must be non-empty".into()));
        }
        Ok(())
    }
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $s),+ }
            }
        }
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($variant),)+
                    other => Err(Error::Argument(format!(
                        "unknown {} `{other}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

str_enum!(GenderLine { GenderLine::Men => "men", GenderLine::Women => "women" });
str_enum!(RaterKind { RaterKind::Designer => "designer", RaterKind::Customer => "customer" });
str_enum!(Question { Question::Q1 => "q1", Question::Q2 => "q2" });

/// Persistence for designs and ratings. Implementations serialize writes.
pub trait FeedbackStore: Send + Sync {
    /// Fails with `DuplicateDesign` if the id is taken.
    fn register_design(&self, record: &DesignRecord) -> Result<String>;
    /// Fails with `NotFound` for an unknown id.
    fn design(&self, design_id: &str) -> Result<DesignRecord>;
    /// All designs ordered by id.
    fn designs(&self) -> Result<Vec<DesignRecord>>;
    /// Stores or overwrites the rating keyed by (rater, design, question).
    fn submit_rating(&self, rating: &Rating) -> Result<()>;
    /// All ratings ordered by design, rater and question.
    fn ratings(&self) -> Result<Vec<Rating>>;
    fn scores(&self, design_id: &str, kind: RaterKind, question: Question) -> Result<Vec<i64>>;
}

pub fn is_affirmative(mean: f64) -> bool {
    mean > AFFIRMATIVE_ABOVE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    pub mean: f64,
    pub count: usize,
    pub affirmative: bool,
}

impl Opinion {
    pub fn from_scores(scores: &[i64]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let mean = scores.iter().sum::<i64>() as f64 / scores.len() as f64;
        Some(Self {
            mean,
            count: scores.len(),
            affirmative: is_affirmative(mean),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Both,
    Q1Only,
    Q2Only,
    Neither,
}

impl Cell {
    pub fn of(q1: bool, q2: bool) -> Self {
        match (q1, q2) {
            (true, true) => Cell::Both,
            (true, false) => Cell::Q1Only,
            (false, true) => Cell::Q2Only,
            (false, false) => Cell::Neither,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub design_id: String,
    pub rater_kind: RaterKind,
    pub q1: Opinion,
    pub q2: Opinion,
    pub cell: Cell,
}

/// Counts of designs per (q1 affirmative, q2 affirmative) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegregationTable {
    pub both: usize,
    pub q1_only: usize,
    pub q2_only: usize,
    pub neither: usize,
}

impl SegregationTable {
    pub fn total(&self) -> usize {
        self.both + self.q1_only + self.q2_only + self.neither
    }

    pub fn add(&mut self, cell: Cell) {
        match cell {
            Cell::Both => self.both += 1,
            Cell::Q1Only => self.q1_only += 1,
            Cell::Q2Only => self.q2_only += 1,
            Cell::Neither => self.neither += 1,
        }
    }

    /// `(both, q1 only, q2 only, neither)`.
    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.both, self.q1_only, self.q2_only, self.neither)
    }
}

pub fn mean_opinion_score(
    store: &dyn FeedbackStore,
    design_id: &str,
    kind: RaterKind,
    question: Question,
) -> Result<f64> {
    opinion(store, design_id, kind, question).map(|o| o.mean)
}

pub fn opinion(
    store: &dyn FeedbackStore,
    design_id: &str,
    kind: RaterKind,
    question: Question,
) -> Result<Opinion> {
    let scores = store.scores(design_id, kind, question)?;
    Opinion::from_scores(&scores).ok_or_else(|| {
        Error::NoData(format!(
            "design `{design_id}`, {} {}",
            kind.as_str(),
            question.as_str()
        ))
    })
}

pub fn design_summary(store: &dyn FeedbackStore, design_id: &str, kind: RaterKind) -> Result<DesignSummary> {
    let q1 = opinion(store, design_id, kind, Question::Q1)?;
    let q2 = opinion(store, design_id, kind, Question::Q2)?;
    Ok(DesignSummary {
        design_id: design_id.to_string(),
        rater_kind: kind,
        q1,
        q2,
        cell: Cell::of(q1.affirmative, q2.affirmative),
    })
}

pub fn summaries(store: &dyn FeedbackStore, kind: RaterKind) -> Result<Vec<DesignSummary>> {
    store
        .designs()?
        .iter()
        .map(|d| design_summary(store, &d.design_id, kind))
        .collect()
}

/// Places every registered design in exactly one cell. A design lacking
/// ratings from `kind` on either question is a `NoData` error.
pub fn segregation_table(store: &dyn FeedbackStore, kind: RaterKind) -> Result<SegregationTable> {
    let mut table = SegregationTable::default();
    for s in summaries(store, kind)? {
        table.add(s.cell);
    }
    Ok(table)
}

pub fn export_ratings_csv(store: &dyn FeedbackStore, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["design_id", "rater_id", "rater_kind", "question", "score", "comment"])?;
    for r in store.ratings()? {
        w.write_record([
            r.design_id.as_str(),
            r.rater_id.as_str(),
            r.rater_kind.as_str(),
            r.question.as_str(),
            &r.score.to_string(),
            r.comment.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (design, rater kind, question) that has ratings.
pub fn export_summary_csv(store: &dyn FeedbackStore, out: impl Write) -> Result<()> {
    let mut groups: BTreeMap<(String, RaterKind, Question), Vec<i64>> = BTreeMap::new();
    for r in store.ratings()? {
        groups
            .entry((r.design_id, r.rater_kind, r.question))
            .or_default()
            .push(r.score);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["design_id", "rater_kind", "question", "mean", "count", "affirmative"])?;
    for ((design, kind, q), scores) in groups {
        let o = Opinion::from_scores(&scores).expect("group is non-empty");
        w.write_record([
            design.as_str(),
            kind.as_str(),
            q.as_str(),
            &format!("{:.4}", o.mean),
            &o.count.to_string(),
            &o.affirmative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(id: &str) -> DesignRecord {
        DesignRecord {
            design_id: id.into(),
            image_uri: format!("file:///{id}.png"),
            gender_line: GenderLine::Women,
            provenance: Provenance::External,
        }
    }

    fn rate(store: &SqliteStore, rater: &str, design: &str, q: Question, score: i64) -> Result<()> {
        store.submit_rating(&Rating {
            rater_id: rater.into(),
            rater_kind: RaterKind::Designer,
            design_id: design.into(),
            question: q,
            score,
            comment: None,
        })
    }

    #[test]
    fn crud_and_duplicates() {
        let s = SqliteStore::in_memory().unwrap();
        assert_eq!(s.register_design(&design("d1")).unwrap(), "d1");
        assert_eq!(s.design("d1").unwrap(), design("d1"));
        assert!(matches!(s.register_design(&design("d1")), Err(Error::DuplicateDesign(_))));
        assert!(matches!(s.design("nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn score_range_and_unknown_design() {
        let s = SqliteStore::in_memory().unwrap();
        s.register_design(&design("d1")).unwrap();
        assert!(matches!(rate(&s, "r", "d1", Question::Q1, 6), Err(Error::Range(6))));
        assert!(matches!(rate(&s, "r", "d1", Question::Q1, 0), Err(Error::Range(0))));
        assert!(matches!(rate(&s, "r", "d2", Question::Q1, 3), Err(Error::NotFound(_))));
    }

    #[test]
    fn resubmission_overwrites() {
        let s = SqliteStore::in_memory().unwrap();
        s.register_design(&design("d1")).unwrap();
        rate(&s, "r", "d1", Question::Q1, 2).unwrap();
        rate(&s, "r", "d1", Question::Q1, 4).unwrap();
        assert_eq!(s.scores("d1", RaterKind::Designer, Question::Q1).unwrap(), vec![4]);
        assert_eq!(s.ratings().unwrap().len(), 1);
    }

    #[test]
    fn means_and_strict_threshold() {
        let s = SqliteStore::in_memory().unwrap();
        s.register_design(&design("d1")).unwrap();
        for (r, v) in [("a", 4), ("b", 5), ("c", 3)] {
            rate(&s, r, "d1", Question::Q1, v).unwrap();
            rate(&s, r, "d1", Question::Q2, 3).unwrap();
        }
        let m = mean_opinion_score(&s, "d1", RaterKind::Designer, Question::Q1).unwrap();
        assert_eq!(m, 4.0);
        let q2 = opinion(&s, "d1", RaterKind::Designer, Question::Q2).unwrap();
        assert_eq!(q2.mean, 3.0);
        assert!(!q2.affirmative);
        assert!(matches!(
            mean_opinion_score(&s, "d1", RaterKind::Customer, Question::Q1),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn one_design_table_and_empty_table() {
        let s = SqliteStore::in_memory().unwrap();
        assert_eq!(segregation_table(&s, RaterKind::Designer).unwrap(), SegregationTable::default());
        s.register_design(&design("d1")).unwrap();
        rate(&s, "a", "d1", Question::Q1, 4).unwrap();
        rate(&s, "a", "d1", Question::Q2, 2).unwrap();
        let t = segregation_table(&s, RaterKind::Designer).unwrap();
        assert_eq!(t.as_tuple(), (0, 1, 0, 0));
    }

    #[test]
    fn csv_exports() {
        let s = SqliteStore::in_memory().unwrap();
        s.register_design(&design("d1")).unwrap();
        rate(&s, "a", "d1", Question::Q1, 4).unwrap();
        let mut buf = Vec::new();
        export_ratings_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("d1,a,designer,q1,4"));
        let mut buf = Vec::new();
        export_summary_csv(&s, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("d1,designer,q1,4.0000,1,true"));
    }
}
