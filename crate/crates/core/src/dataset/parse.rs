use super::{
    age_to_category, AnimeTitle, DatasetError, Gender, RatingEntry, Status, UserRecord,
};
use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

pub const ANIME_HEADER: &[&str] = &[
    "anime_id",
    "name",
    "genres",
    "studio",
    "source",
    "mean_score",
    "members",
];
pub const USERS_HEADER: &[&str] = &["user_id", "gender", "birth_year"];
pub const RATINGS_HEADER: &[&str] = &["user_id", "anime_id", "score", "status", "timestamp"];

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    /// Ages are computed as `reference_year - birth_year`.
    pub reference_year: i32,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { reference_year: 2020 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub file: &'static str,
    /// 1-based line number, header is line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub malformed: Vec<MalformedRow>,
}

impl ParseReport {
    pub fn error_count(&self) -> usize {
        self.malformed.len()
    }

    pub fn count_in(&self, file: &str) -> usize {
        self.malformed.iter().filter(|m| m.file == file).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub titles: Vec<AnimeTitle>,
    pub users: Vec<UserRecord>,
    pub ratings: Vec<RatingEntry>,
    pub report: ParseReport,
}

pub fn parse_catalog(
    anime_file: &Path,
    users_file: &Path,
    ratings_file: &Path,
    options: &ParseOptions,
) -> Result<ParsedCorpus, DatasetError> {
    let mut report = ParseReport::default();
    let titles = parse_anime(open(anime_file)?, anime_file, &mut report)?;
    let users = parse_users(open(users_file)?, users_file, options, &mut report)?;
    let ratings = parse_ratings(open(ratings_file)?, ratings_file, &mut report)?;
    for m in &report.malformed {
        log::warn!("{} line {}: {}", m.file, m.line, m.reason);
    }
    Ok(ParsedCorpus {
        titles,
        users,
        ratings,
        report,
    })
}

fn open(path: &Path) -> Result<File, DatasetError> {
    File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(
    rdr: &mut csv::Reader<R>,
    path: &Path,
    expected: &[&str],
) -> Result<(), DatasetError> {
    let found = rdr.headers().map_err(|source| DatasetError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let found: Vec<&str> = found
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}'))
        .collect();
    if found != expected {
        return Err(DatasetError::Header {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

/// Iterates data rows, routing row-level failures into the report.
fn for_each_row<R: Read>(
    rdr: &mut csv::Reader<R>,
    file: &'static str,
    width: usize,
    report: &mut ParseReport,
    mut f: impl FnMut(&StringRecord) -> Result<(), String>,
) {
    let mut record = StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line());
                let outcome = if record.len() != width {
                    Err(format!("expected {width} fields, found {}", record.len()))
                } else {
                    f(&record)
                };
                if let Err(reason) = outcome {
                    report.malformed.push(MalformedRow { file, line, reason });
                }
            }
            Err(e) => report.malformed.push(MalformedRow {
                file,
                line,
                reason: e.to_string(),
            }),
        }
    }
}

fn field(record: &StringRecord, idx: usize) -> &str {
    record.get(idx).unwrap_or("")
}

fn parse_num<T: std::str::FromStr>(record: &StringRecord, idx: usize, name: &str) -> Result<T, String> {
    let raw = field(record, idx);
    raw.parse()
        .map_err(|_| format!("invalid {name} `{raw}`"))
}

fn optional_text(raw: &str) -> Option<String> {
    if raw.is_empty() || raw.eq_ignore_ascii_case("unknown") {
        None
    } else {
        Some(raw.to_string())
    }
}

pub fn parse_anime<R: Read>(
    input: R,
    path: &Path,
    report: &mut ParseReport,
) -> Result<Vec<AnimeTitle>, DatasetError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, path, ANIME_HEADER)?;
    let mut titles = Vec::new();
    let mut seen = HashSet::new();
    for_each_row(&mut rdr, "anime", ANIME_HEADER.len(), report, |r| {
        let anime_id: u32 = parse_num(r, 0, "anime_id")?;
        if anime_id == 0 {
            return Err("anime_id must be positive".into());
        }
        if !seen.insert(anime_id) {
            return Err(format!("duplicate anime_id {anime_id}"));
        }
        let mut genres: Vec<String> = field(r, 2)
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(str::to_string)
            .collect();
        genres.sort();
        genres.dedup();
        let mean_score = match field(r, 5) {
            "" => None,
            raw => {
                let v: f64 = raw.parse().map_err(|_| format!("invalid mean_score `{raw}`"))?;
                if !(1.0..=10.0).contains(&v) {
                    return Err(format!("mean_score {v} outside [1,10]"));
                }
                Some(v)
            }
        };
        let members = match field(r, 6) {
            "" => 0,
            _ => parse_num(r, 6, "members")?,
        };
        titles.push(AnimeTitle {
            anime_id,
            name: field(r, 1).to_string(),
            genres,
            studio: optional_text(field(r, 3)),
            source: optional_text(field(r, 4)),
            mean_score,
            members,
        });
        Ok(())
    });
    Ok(titles)
}

pub fn parse_users<R: Read>(
    input: R,
    path: &Path,
    options: &ParseOptions,
    report: &mut ParseReport,
) -> Result<Vec<UserRecord>, DatasetError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, path, USERS_HEADER)?;
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    for_each_row(&mut rdr, "users", USERS_HEADER.len(), report, |r| {
        let user_id: u32 = parse_num(r, 0, "user_id")?;
        if user_id == 0 {
            return Err("user_id must be positive".into());
        }
        let gender = match field(r, 1) {
            "M" | "m" => Gender::Male,
            "F" | "f" => Gender::Female,
            other => return Err(format!("invalid gender `{other}`")),
        };
        let birth_year: i32 = parse_num(r, 2, "birth_year")?;
        let age = options.reference_year - birth_year;
        if age < 0 {
            return Err(format!("birth_year {birth_year} after reference year"));
        }
        if !seen.insert(user_id) {
            return Err(format!("duplicate user_id {user_id}"));
        }
        users.push(UserRecord {
            user_id,
            gender,
            age_category: age_to_category(age as u32),
        });
        Ok(())
    });
    Ok(users)
}

pub fn parse_ratings<R: Read>(
    input: R,
    path: &Path,
    report: &mut ParseReport,
) -> Result<Vec<RatingEntry>, DatasetError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, path, RATINGS_HEADER)?;
    let mut ratings = Vec::new();
    for_each_row(&mut rdr, "ratings", RATINGS_HEADER.len(), report, |r| {
        let user_id: u32 = parse_num(r, 0, "user_id")?;
        let anime_id: u32 = parse_num(r, 1, "anime_id")?;
        let score: u8 = parse_num(r, 2, "score")?;
        if score > 10 {
            return Err(format!("score {score} outside [0,10]"));
        }
        let status = Status::parse(field(r, 3))
            .ok_or_else(|| format!("invalid status `{}`", field(r, 3)))?;
        let timestamp = match field(r, 4) {
            "" => 0,
            _ => parse_num(r, 4, "timestamp")?,
        };
        ratings.push(RatingEntry {
            user_id,
            anime_id,
            score,
            status,
            timestamp,
        });
        Ok(())
    });
    Ok(ratings)
}

/// Writes titles in the `anime.csv` schema; UNKNOWN fields are left empty.
pub fn write_anime_csv<W: Write>(out: W, titles: &[AnimeTitle]) -> Result<(), csv::Error> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(ANIME_HEADER)?;
    for t in titles {
        w.write_record([
            t.anime_id.to_string(),
            t.name.clone(),
            t.genres.join("|"),
            t.studio.clone().unwrap_or_default(),
            t.source.clone().unwrap_or_default(),
            t.mean_score.map(|s| s.to_string()).unwrap_or_default(),
            t.members.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `(user_id, gender, birth_year)` triples in the `users.csv` schema.
pub fn write_users_csv<W: Write>(
    out: W,
    users: &[(u32, Gender, i32)],
) -> Result<(), csv::Error> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(USERS_HEADER)?;
    for (id, gender, birth_year) in users {
        let g = match gender {
            Gender::Male => "M",
            Gender::Female => "F",
        };
        w.write_record([id.to_string(), g.to_string(), birth_year.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ratings_csv<W: Write>(out: W, ratings: &[RatingEntry]) -> Result<(), csv::Error> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(RATINGS_HEADER)?;
    for r in ratings {
        w.write_record([
            r.user_id.to_string(),
            r.anime_id.to_string(),
            r.score.to_string(),
            r.status.as_str().to_string(),
            r.timestamp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture.csv")
    }

    #[test]
    fn three_well_formed_titles() {
        let csv = "anime_id,name,genres,studio,source,mean_score,members\n\
                   1,Alpha,Action|Comedy,Sunrise,Manga,8.1,1000\n\
                   2,\"Beta, the Movie\",Drama,Bones,Original,,50\n\
                   3,Gamma,,Madhouse,Novel,7,0\n";
        let mut report = ParseReport::default();
        let titles = parse_anime(csv.as_bytes(), p(), &mut report).unwrap();
        assert_eq!(titles.len(), 3);
        assert_eq!(report.error_count(), 0);
        assert_eq!(titles[0].genres, vec!["Action", "Comedy"]);
        assert_eq!(titles[1].name, "Beta, the Movie");
        assert_eq!(titles[1].mean_score, None);
        assert!(titles[2].genres.is_empty());
    }

    #[test]
    fn empty_studio_is_unknown() {
        let csv = "anime_id,name,genres,studio,source,mean_score,members\r\n\
                   7,Delta,Action,,Manga,6.5,10\r\n";
        let mut report = ParseReport::default();
        let titles = parse_anime(csv.as_bytes(), p(), &mut report).unwrap();
        assert_eq!(titles[0].studio, None);
        assert_eq!(titles[0].source.as_deref(), Some("Manga"));
    }

    #[test]
    fn score_eleven_is_recoverable() {
        let csv = "user_id,anime_id,score,status,timestamp\n\
                   1,1,7,watched,10\n\
                   1,2,11,watched,11\n\
                   2,1,0,plan_to_watch,12\n";
        let mut report = ParseReport::default();
        let ratings = parse_ratings(csv.as_bytes(), p(), &mut report).unwrap();
        assert_eq!(ratings.len(), 2);
        assert_eq!(report.error_count(), 1);
        assert_eq!(report.malformed[0].line, 3);
        assert!(report.malformed[0].reason.contains("11"));
    }

    #[test]
    fn malformed_header_is_fatal() {
        let csv = "user,anime,score\n1,1,7\n";
        let mut report = ParseReport::default();
        let err = parse_ratings(csv.as_bytes(), p(), &mut report).unwrap_err();
        assert!(matches!(err, DatasetError::Header { .. }));
    }

    #[test]
    fn users_age_categories_and_bad_gender() {
        let csv = "user_id,gender,birth_year\n1,M,2002\n2,F,1990\n3,X,2000\n";
        let mut report = ParseReport::default();
        let opts = ParseOptions { reference_year: 2020 };
        let users = parse_users(csv.as_bytes(), p(), &opts, &mut report).unwrap();
        assert_eq!(users.len(), 2);
        assert_eq!(users[0].age_category, 3);
        assert_eq!(users[1].gender, Gender::Female);
        assert_eq!(users[1].age_category, 5);
        assert_eq!(report.count_in("users"), 1);
    }

    #[test]
    fn wrong_field_count_counted() {
        let csv = "user_id,anime_id,score,status,timestamp\n1,1,7,watched\n";
        let mut report = ParseReport::default();
        let ratings = parse_ratings(csv.as_bytes(), p(), &mut report).unwrap();
        assert!(ratings.is_empty());
        assert_eq!(report.error_count(), 1);
    }

    #[test]
    fn missing_file_is_fatal() {
        let err = parse_catalog(
            Path::new("/nonexistent/anime.csv"),
            Path::new("/nonexistent/users.csv"),
            Path::new("/nonexistent/ratings.csv"),
            &ParseOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
    }

    #[test]
    fn anime_writer_round_trips() {
        let csv = "anime_id,name,genres,studio,source,mean_score,members\n\
                   1,Alpha,Action|Comedy,Sunrise,Manga,8.1,1000\n\
                   2,\"Beta, the Movie\",Drama,,Original,,50\n";
        let mut report = ParseReport::default();
        let titles = parse_anime(csv.as_bytes(), p(), &mut report).unwrap();
        let mut buf = Vec::new();
        write_anime_csv(&mut buf, &titles).unwrap();
        let again = parse_anime(buf.as_slice(), p(), &mut report).unwrap();
        assert_eq!(titles, again);
    }
}
