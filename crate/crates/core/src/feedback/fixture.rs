//! A designer rating panel constructed to induce a known segregation table.
//!
//! Fifteen designs (7 women's, 8 men's) are each rated on both questions by
//! fifteen designers (9 male, 6 female). Per-design score totals are chosen
//! so that 6 designs are affirmative on both questions, 5 on q1 only, none
//! on q2 only and 4 on neither. Several means sit exactly on 3.0 so the
//! strict threshold is exercised.

use super::{Cell, DesignRecord, FeedbackStore, GenderLine, Provenance, Question, RaterKind, Rating};
use crate::error::Result;

pub const WOMENS_DESIGNS: usize = 7;
pub const MENS_DESIGNS: usize = 8;
pub const MALE_DESIGNERS: usize = 9;
pub const FEMALE_DESIGNERS: usize = 6;

/// Cell of each design, in design order.
const CELLS: [Cell; 15] = {
    use Cell::*;
    [
        Both, Q1Only, Neither, Both, Q1Only, Both, Neither, Both, Q1Only, Neither, Both, Q1Only,
        Both, Neither, Q1Only,
    ]
};

#[derive(Debug, Clone)]
pub struct Panel {
    pub designs: Vec<DesignRecord>,
    pub ratings: Vec<Rating>,
    /// Intended cell of each design.
    pub expected: Vec<(String, Cell)>,
}

impl Panel {
    pub fn load_into(&self, store: &dyn FeedbackStore) -> Result<()> {
        for d in &self.designs {
            store.register_design(d)?;
        }
        for r in &self.ratings {
            store.submit_rating(r)?;
        }
        Ok(())
    }
}

pub fn designer_ids() -> Vec<String> {
    (1..=MALE_DESIGNERS)
        .map(|i| format!("designer-m{i:02}"))
        .chain((1..=FEMALE_DESIGNERS).map(|i| format!("designer-f{i:02}")))
        .collect()
}

/// Integer scores in 1..=5 for `n` raters with the given total, spread
/// around the mean by symmetric +1/-1 moves.
pub fn scores_with_total(n: usize, total: i64, spread: usize) -> Vec<i64> {
    assert!(n > 0 && total >= n as i64 && total <= 5 * n as i64, "unreachable total");
    let base = total / n as i64;
    let rem = (total % n as i64) as usize;
    let mut s: Vec<i64> = (0..n).map(|i| base + i64::from(i < rem)).collect();
    for j in 0..spread.min(n / 2) {
        let (a, b) = (j, n - 1 - j);
        if s[a] < 5 && s[b] > 1 {
            s[a] += 1;
            s[b] -= 1;
        }
    }
    s
}

/// Score totals over 15 raters for (q1, q2) given the intended cell.
fn totals(cell: Cell, i: usize) -> (i64, i64) {
    let i = i as i64;
    match cell {
        Cell::Both => (57 + i % 3, 50 + i % 4),
        Cell::Q1Only => (53 + i % 2, 45),
        Cell::Neither => (45 - (i % 2) * 4, 36 + i % 3),
        Cell::Q2Only => (45, 53),
    }
}

pub fn designer_panel() -> Panel {
    let raters = designer_ids();
    let mut designs = Vec::new();
    let mut ratings = Vec::new();
    let mut expected = Vec::new();
    for (i, cell) in CELLS.iter().enumerate() {
        let id = format!("design-{:02}", i + 1);
        designs.push(DesignRecord {
            design_id: id.clone(),
            image_uri: format!("fixtures/{id}.png"),
            gender_line: if i < WOMENS_DESIGNS { GenderLine::Women } else { GenderLine::Men },
            provenance: Provenance::External,
        });
        let (t1, t2) = totals(*cell, i);
        for (q, total) in [(Question::Q1, t1), (Question::Q2, t2)] {
            let scores = scores_with_total(raters.len(), total, 2 + i % 4);
            // Rotate so the same rater is not always the most generous.
            for (k, rater) in raters.iter().enumerate() {
                ratings.push(Rating {
                    rater_id: rater.clone(),
                    rater_kind: RaterKind::Designer,
                    design_id: id.clone(),
                    question: q,
                    score: scores[(k + i) % scores.len()],
                    comment: None,
                });
            }
        }
        expected.push((id, *cell));
    }
    Panel { designs, ratings, expected }
}
