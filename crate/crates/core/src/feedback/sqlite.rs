//! Single-file SQLite store.
//!
//! Schema:
//!
//! ```sql
//! designs(design_id TEXT PRIMARY KEY, image_uri TEXT, gender_line TEXT,
//!         provenance TEXT /* JSON */, created_at TEXT)
//! ratings(rater_id TEXT, rater_kind TEXT, design_id TEXT REFERENCES designs,
//!         question TEXT, score INTEGER CHECK (score BETWEEN 1 AND 5),
//!         comment TEXT, submitted_at TEXT,
//!         PRIMARY KEY (rater_id, design_id, question))
//! ```

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use rusqlite::{params, Connection, ErrorCode, OptionalExtension};

use super::{DesignRecord, FeedbackStore, Question, RaterKind, Rating};
use crate::error::{Error, Result};

const SCHEMA: &str = "
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS designs (
    design_id   TEXT PRIMARY KEY,
    image_uri   TEXT NOT NULL,
    gender_line TEXT NOT NULL CHECK (gender_line IN ('men', 'women')),
    provenance  TEXT NOT NULL,
    created_at  TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS ratings (
    rater_id     TEXT NOT NULL,
    rater_kind   TEXT NOT NULL CHECK (rater_kind IN ('designer', 'customer')),
    design_id    TEXT NOT NULL REFERENCES designs(design_id),
    question     TEXT NOT NULL CHECK (question IN ('q1', 'q2')),
    score        INTEGER NOT NULL CHECK (score BETWEEN 1 AND 5),
    comment      TEXT,
    submitted_at TEXT NOT NULL,
    PRIMARY KEY (rater_id, design_id, question)
);
";

pub struct SqliteStore {
    conn: Mutex<Connection>,
}

impl SqliteStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        // A panic while holding the lock cannot leave SQLite inconsistent.
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn parse_design(row: &rusqlite::Row<'_>) -> rusqlite::Result<(String, String, String, String)> {
        Ok((row.get(0)?, row.get(1)?, row.get(2)?, row.get(3)?))
    }

    fn to_design((design_id, image_uri, gender, prov): (String, String, String, String)) -> Result<DesignRecord> {
        Ok(DesignRecord {
            design_id,
            image_uri,
            gender_line: gender.parse()?,
            provenance: serde_json::from_str(&prov)?,
        })
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

impl FeedbackStore for SqliteStore {
    fn register_design(&self, record: &DesignRecord) -> Result<String> {
        if record.design_id.is_empty() {
            return Err(Error::Argument("design_id must be non-empty".into()));
        }
        let res = self.conn().execute(
            "INSERT INTO designs (design_id, image_uri, gender_line, provenance, created_at)
             VALUES (?1, ?2, ?3, ?4, ?5)",
            params![
                record.design_id,
                record.image_uri,
                record.gender_line.as_str(),
                serde_json::to_string(&record.provenance)?,
                now()
            ],
        );
        match res {
            Ok(_) => Ok(record.design_id.clone()),
            Err(rusqlite::Error::SqliteFailure(e, _)) if e.code == ErrorCode::ConstraintViolation => {
                Err(Error::DuplicateDesign(record.design_id.clone()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn design(&self, design_id: &str) -> Result<DesignRecord> {
        let row = self
            .conn()
            .query_row(
                "SELECT design_id, image_uri, gender_line, provenance FROM designs WHERE design_id = ?1",
                [design_id],
                Self::parse_design,
            )
            .optional()?;
        match row {
            Some(r) => Self::to_design(r),
            None => Err(Error::NotFound(format!("design `{design_id}`"))),
        }
    }

    fn designs(&self) -> Result<Vec<DesignRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT design_id, image_uri, gender_line, provenance FROM designs ORDER BY design_id",
        )?;
        let rows = stmt.query_map([], Self::parse_design)?;
        rows.map(|r| Self::to_design(r?)).collect()
    }

    fn submit_rating(&self, rating: &Rating) -> Result<()> {
        rating.validate()?;
        let conn = self.conn();
        let exists: bool = conn.query_row(
            "SELECT EXISTS(SELECT 1 FROM designs WHERE design_id = ?1)",
            [&rating.design_id],
            |r| r.get(0),
        )?;
        if !exists {
            return Err(Error::NotFound(format!("design `{}`", rating.design_id)));
        }
        conn.execute(
            "INSERT INTO ratings (rater_id, rater_kind, design_id, question, score, comment, submitted_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)
             ON CONFLICT (rater_id, design_id, question) DO UPDATE SET
                rater_kind = excluded.rater_kind,
                score = excluded.score,
                comment = excluded.comment,
                submitted_at = excluded.submitted_at",
            params![
                rating.rater_id,
                rating.rater_kind.as_str(),
                rating.design_id,
                rating.question.as_str(),
                rating.score,
                rating.comment,
                now()
            ],
        )?;
        Ok(())
    }

    fn ratings(&self) -> Result<Vec<Rating>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT rater_id, rater_kind, design_id, question, score, comment FROM ratings
             ORDER BY design_id, rater_id, question",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, i64>(4)?,
                r.get::<_, Option<String>>(5)?,
            ))
        })?;
        rows.map(|row| {
            let (rater_id, kind, design_id, q, score, comment) = row?;
            Ok(Rating {
                rater_id,
                rater_kind: kind.parse()?,
                design_id,
                question: q.parse()?,
                score,
                comment,
            })
        })
        .collect()
    }

    fn scores(&self, design_id: &str, kind: RaterKind, question: Question) -> Result<Vec<i64>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT score FROM ratings WHERE design_id = ?1 AND rater_kind = ?2 AND question = ?3
             ORDER BY rater_id",
        )?;
        let rows = stmt.query_map(params![design_id, kind.as_str(), question.as_str()], |r| r.get(0))?;
        Ok(rows.collect::<rusqlite::Result<Vec<i64>>>()?)
    }
}
