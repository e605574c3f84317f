//! Content-addressed artifact directory.
//!
//! Every blob is stored once under `<root>/<first two hex digits>/<sha256>.<ext>`
//! and identified by `<sha256>.<ext>`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{ServiceError, ServiceResult};

const EXTENSIONS: [&str; 5] = ["png", "jpg", "csv", "json", "jsonl"];

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> ServiceResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores `bytes` and returns their id. Writing the same bytes twice is
    /// a no-op returning the same id.
    pub fn put(&self, bytes: &[u8], ext: &str) -> ServiceResult<String> {
        if !EXTENSIONS.contains(&ext) {
            return Err(ServiceError::BadRequest(format!("unsupported artifact type `{ext}`")));
        }
        let id = format!("{}.{ext}", digest(bytes));
        let path = self.path_unchecked(&id);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("nested path"))?;
            // Write-then-rename so readers never see a partial file.
            let tmp = path.with_extension(format!("{ext}.tmp{}", std::process::id()));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(id)
    }

    fn path_unchecked(&self, id: &str) -> PathBuf {
        self.root.join(&id[..2]).join(id)
    }

    /// Filesystem path of an existing artifact. Ids that are not of the
    /// form `<64 hex>.<known ext>` are rejected.
    pub fn path(&self, id: &str) -> ServiceResult<PathBuf> {
        let (hash, ext) = id
            .split_once('.')
            .ok_or_else(|| ServiceError::NotFound(format!("asset `{id}`")))?;
        let valid = hash.len() == 64
            && hash.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
            && EXTENSIONS.contains(&ext);
        if !valid {
            return Err(ServiceError::NotFound(format!("asset `{id}`")));
        }
        let path = self.path_unchecked(id);
        if !path.is_file() {
            return Err(ServiceError::NotFound(format!("asset `{id}`")));
        }
        Ok(path)
    }

    pub fn read(&self, id: &str) -> ServiceResult<Vec<u8>> {
        Ok(fs::read(self.path(id)?)?)
    }
}

pub fn content_type(id: &str) -> &'static str {
    match id.rsplit('.').next() {
        Some("png") => "image/png",
        Some("jpg") => "image/jpeg",
        Some("csv") => "text/csv",
        Some("json") => "application/json",
        Some("jsonl") => "application/x-ndjson",
        _ => "application/octet-stream",
    }
}
