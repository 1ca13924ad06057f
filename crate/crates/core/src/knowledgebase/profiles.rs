use super::{io_err, KbError};
use crate::dataset::{AnimeId, Gender};
use crate::hybridfilter::UserProfile;
use serde::{Deserialize, Serialize};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// One line of a profile log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProfileEvent {
    Created { gender: Gender, age_category: u8 },
    Rated { anime_id: AnimeId, score: u8, timestamp: u64 },
    Feedback { list_score: u8, ratings: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub list_score: u8,
    /// Profile size when the score was given.
    pub ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredProfile {
    pub profile: UserProfile,
    pub feedback: Vec<FeedbackEntry>,
}

/// `profiles/<session>.jsonl` logs. Appends go straight to disk; loading
/// replays the log and rewrites it without superseded ratings.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn line(event: &ProfileEvent) -> String {
    let mut s = serde_json::to_string(event).expect("serializable");
    s.push('\n');
    s
}

impl ProfileStore {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf, KbError> {
        if !valid_id(id) {
            return Err(KbError::SessionId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.jsonl")))
    }

    /// Starts a log for a new profile, including any ratings it already has.
    pub fn create(&self, profile: &UserProfile) -> Result<(), KbError> {
        let path = self.path(&profile.id)?;
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(KbError::SessionExists(profile.id.clone()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let text: String = events_of(profile, &[]).iter().map(line).collect();
        file.write_all(text.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(io_err(&path))
    }

    pub fn append(&self, id: &str, event: &ProfileEvent) -> Result<(), KbError> {
        let path = self.path(id)?;
        let mut file = match OpenOptions::new().append(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(KbError::SessionNotFound(id.into())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        file.write_all(line(event).as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(io_err(&path))
    }

    pub fn load(&self, id: &str) -> Result<StoredProfile, KbError> {
        let path = self.path(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(KbError::SessionNotFound(id.into())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let (stored, superseded) = replay(id, &text)?;
        if superseded > 0 {
            self.rewrite(&stored)?;
        }
        Ok(stored)
    }

    /// Session ids with a log, sorted.
    pub fn list(&self) -> Result<Vec<String>, KbError> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.dir)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&self.dir))?;
            let name = entry.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".jsonl")) {
                if valid_id(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn rewrite(&self, stored: &StoredProfile) -> Result<(), KbError> {
        let path = self.path(&stored.profile.id)?;
        let tmp = self.dir.join(format!(".{}.jsonl.tmp", stored.profile.id));
        let text: String = events_of(&stored.profile, &stored.feedback).iter().map(line).collect();
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

/// Compact event sequence: creation, ratings in temporal order, feedback.
fn events_of(profile: &UserProfile, feedback: &[FeedbackEntry]) -> Vec<ProfileEvent> {
    let mut out = vec![ProfileEvent::Created {
        gender: profile.gender,
        age_category: profile.age_category,
    }];
    out.extend(profile.ratings().iter().map(|r| ProfileEvent::Rated {
        anime_id: r.anime_id,
        score: r.score,
        timestamp: r.timestamp,
    }));
    out.extend(feedback.iter().map(|f| ProfileEvent::Feedback {
        list_score: f.list_score,
        ratings: f.ratings,
    }));
    out
}

/// Rebuilds a profile from its log; also counts rating lines that a later
/// re-rating replaced. An unterminated last line (an interrupted append) is
/// ignored.
fn replay(id: &str, text: &str) -> Result<(StoredProfile, usize), KbError> {
    let corrupt = |n: usize, why: String| KbError::Corrupt {
        artifact: format!("profiles/{id}.jsonl"),
        reason: format!("line {}: {why}", n + 1),
    };
    let complete = if text.ends_with('\n') || text.is_empty() {
        text
    } else {
        log::warn!("profile {id}: dropping unterminated last line");
        &text[..text.rfind('\n').map_or(0, |i| i + 1)]
    };
    let mut profile: Option<UserProfile> = None;
    let mut feedback = Vec::new();
    let mut rated = 0;
    for (n, raw) in complete.lines().enumerate() {
        let event: ProfileEvent = serde_json::from_str(raw).map_err(|e| corrupt(n, e.to_string()))?;
        match (event, profile.as_mut()) {
            (ProfileEvent::Created { gender, age_category }, None) => {
                profile = Some(UserProfile::new(id, gender, age_category).map_err(|e| corrupt(n, e.to_string()))?);
            }
            (ProfileEvent::Rated { anime_id, score, timestamp }, Some(p)) => {
                p.rate(anime_id, score, timestamp).map_err(|e| corrupt(n, e.to_string()))?;
                rated += 1;
            }
            (ProfileEvent::Feedback { list_score, ratings }, Some(_)) => {
                feedback.push(FeedbackEntry { list_score, ratings });
            }
            (ProfileEvent::Created { .. }, Some(_)) => return Err(corrupt(n, "second creation event".into())),
            (_, None) => return Err(corrupt(n, "event before creation".into())),
        }
    }
    let profile = profile.ok_or_else(|| corrupt(0, "empty log".into()))?;
    let superseded = rated - profile.ratings().len();
    Ok((StoredProfile { profile, feedback }, superseded))
}
