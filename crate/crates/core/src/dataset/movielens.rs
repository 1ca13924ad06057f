use super::{DatasetError, RatingMatrix};
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MovieLensReport {
    pub lines: usize,
    pub duplicates: usize,
    pub malformed: usize,
}

fn ratings_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("u.data")
    } else {
        path.to_path_buf()
    }
}

fn parse_line(line: &str) -> Option<(u32, u32, u8, i64)> {
    let mut fields = line.split('\t');
    let parsed = (
        fields.next()?.trim().parse().ok()?,
        fields.next()?.trim().parse().ok()?,
        fields.next()?.trim().parse().ok()?,
        fields.next()?.trim().parse().ok()?,
    );
    fields.next().is_none().then_some(parsed)
}

/// Loads the tab-separated `user item rating timestamp` quadruples of the
/// MovieLens 100K release. `path` may be the `u.data` file or the directory
/// holding it. The demographic prefix stays all zeros.
pub fn load_movielens_100k(path: &Path) -> Result<(RatingMatrix, MovieLensReport), DatasetError> {
    let file = ratings_file(path);
    let text = fs::read_to_string(&file).map_err(|source| DatasetError::Io {
        path: file.clone(),
        source,
    })?;
    let mut report = MovieLensReport::default();
    let mut latest: HashMap<(u32, u32), (i64, u8)> = HashMap::new();
    let mut users = BTreeSet::new();
    let mut items = BTreeSet::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let Some((user, item, rating, ts)) = parse_line(line) else {
            report.malformed += 1;
            continue;
        };
        if !(1..=5).contains(&rating) {
            report.malformed += 1;
            continue;
        }
        users.insert(user);
        items.insert(item);
        match latest.get_mut(&(user, item)) {
            Some(slot) => {
                report.duplicates += 1;
                if ts >= slot.0 {
                    *slot = (ts, rating);
                }
            }
            None => {
                latest.insert((user, item), (ts, rating));
            }
        }
    }
    let mut matrix = RatingMatrix::new(users.into_iter().collect(), items.into_iter().collect());
    for ((user, item), (_, rating)) in latest {
        let row = matrix.row_of(user).expect("user indexed");
        let col = matrix.column_of(item).expect("item indexed");
        matrix.set(row, col, f32::from(rating));
    }
    if report.duplicates > 0 {
        log::warn!("{}: {} duplicate ratings resolved by latest timestamp", file.display(), report.duplicates);
    }
    Ok((matrix, report))
}
