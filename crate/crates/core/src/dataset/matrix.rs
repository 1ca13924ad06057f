use super::{AnimeId, Corpus, UserId};
use std::collections::{BTreeSet, HashMap};

/// Width of the demographic prefix: `[gender, cat2, cat3, cat4, cat5]`.
pub const DEMOGRAPHIC_COLUMNS: usize = 5;

/// Sparse user × item rating matrix with a dense demographic prefix.
///
/// Row `r` viewed densely is `demographics[r] ++ items`, where item column `c`
/// holds the rating for `item_ids[c]` or 0 when unrated.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    user_ids: Vec<UserId>,
    item_ids: Vec<AnimeId>,
    user_index: HashMap<UserId, usize>,
    item_index: HashMap<AnimeId, usize>,
    demographics: Vec<[f32; DEMOGRAPHIC_COLUMNS]>,
    rows: Vec<Vec<(u32, f32)>>,
}

/// Encodes gender and age category into the demographic prefix. Category 1
/// is the all-zeros baseline.
pub fn encode_demographics(gender: u8, age_category: u8) -> [f32; DEMOGRAPHIC_COLUMNS] {
    let mut out = [0.0; DEMOGRAPHIC_COLUMNS];
    out[0] = f32::from(gender);
    if (2..=5).contains(&age_category) {
        out[age_category as usize - 1] = 1.0;
    }
    out
}

impl RatingMatrix {
    /// Empty matrix over the given users and items, in the given order.
    pub fn new(user_ids: Vec<UserId>, item_ids: Vec<AnimeId>) -> Self {
        let user_index = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_index = item_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let n = user_ids.len();
        Self {
            user_ids,
            item_ids,
            user_index,
            item_index,
            demographics: vec![[0.0; DEMOGRAPHIC_COLUMNS]; n],
            rows: vec![Vec::new(); n],
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Dense row width: demographic prefix plus one column per item.
    pub fn width(&self) -> usize {
        DEMOGRAPHIC_COLUMNS + self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[UserId] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[AnimeId] {
        &self.item_ids
    }

    pub fn row_of(&self, user: UserId) -> Option<usize> {
        self.user_index.get(&user).copied()
    }

    pub fn column_of(&self, item: AnimeId) -> Option<usize> {
        self.item_index.get(&item).copied()
    }

    pub fn demographics(&self, row: usize) -> &[f32; DEMOGRAPHIC_COLUMNS] {
        &self.demographics[row]
    }

    pub fn set_demographics(&mut self, row: usize, prefix: [f32; DEMOGRAPHIC_COLUMNS]) {
        self.demographics[row] = prefix;
    }

    /// Nonzero item entries of a row as `(item column, rating)`, sorted by column.
    pub fn row_entries(&self, row: usize) -> &[(u32, f32)] {
        &self.rows[row]
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        let entries = &self.rows[row];
        match entries.binary_search_by_key(&(col as u32), |&(c, _)| c) {
            Ok(i) => entries[i].1,
            Err(_) => 0.0,
        }
    }

    /// Sets an item cell; a value of 0 clears it.
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        assert!(col < self.item_ids.len(), "item column out of range");
        let entries = &mut self.rows[row];
        match entries.binary_search_by_key(&(col as u32), |&(c, _)| c) {
            Ok(i) if value == 0.0 => {
                entries.remove(i);
            }
            Ok(i) => entries[i].1 = value,
            Err(_) if value == 0.0 => {}
            Err(i) => entries.insert(i, (col as u32, value)),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Writes the dense row (prefix then items) into `out`, which must have
    /// length [`width`](Self::width).
    pub fn fill_dense_row(&self, row: usize, out: &mut [f32]) {
        assert_eq!(out.len(), self.width());
        out.fill(0.0);
        out[..DEMOGRAPHIC_COLUMNS].copy_from_slice(&self.demographics[row]);
        for &(c, v) in &self.rows[row] {
            out[DEMOGRAPHIC_COLUMNS + c as usize] = v;
        }
    }

    pub fn dense_row(&self, row: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.width()];
        self.fill_dense_row(row, &mut out);
        out
    }
}

/// Title × genre indicator matrix over a data-derived genre vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreMatrix {
    anime_ids: Vec<AnimeId>,
    vocabulary: Vec<String>,
    index: HashMap<AnimeId, usize>,
    cells: Vec<Vec<u8>>,
}

impl GenreMatrix {
    /// `rows` pairs each title with its genre labels; the vocabulary is the
    /// sorted union of all labels.
    pub fn from_titles<'a>(rows: impl IntoIterator<Item = (AnimeId, &'a [String])>) -> Self {
        let rows: Vec<(AnimeId, &[String])> = rows.into_iter().collect();
        let vocabulary: Vec<String> = rows
            .iter()
            .flat_map(|(_, g)| g.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self::with_vocabulary(rows, vocabulary)
    }

    pub fn with_vocabulary<'a>(
        rows: impl IntoIterator<Item = (AnimeId, &'a [String])>,
        vocabulary: Vec<String>,
    ) -> Self {
        let position: HashMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, g)| (g.as_str(), i))
            .collect();
        let mut anime_ids = Vec::new();
        let mut cells = Vec::new();
        for (id, genres) in rows {
            let mut row = vec![0u8; vocabulary.len()];
            for g in genres {
                if let Some(&j) = position.get(g.as_str()) {
                    row[j] = 1;
                }
            }
            anime_ids.push(id);
            cells.push(row);
        }
        let index = anime_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        Self {
            anime_ids,
            vocabulary,
            index,
            cells,
        }
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn anime_ids(&self) -> &[AnimeId] {
        &self.anime_ids
    }

    pub fn row(&self, anime_id: AnimeId) -> Option<&[u8]> {
        self.index.get(&anime_id).map(|&i| self.cells[i].as_slice())
    }

    pub fn n_genres(&self) -> usize {
        self.vocabulary.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// Duplicate `(user, anime)` pairs resolved by latest timestamp.
    pub duplicates: usize,
}

/// Builds the rating and genre matrices. Users and items are ordered by
/// ascending id; duplicate pairs keep the latest timestamp (input order breaks
/// timestamp ties).
pub fn build_matrices(corpus: &Corpus) -> (RatingMatrix, GenreMatrix, BuildReport) {
    let mut titles: Vec<_> = corpus.titles.iter().collect();
    titles.sort_by_key(|t| t.anime_id);
    let mut users: Vec<_> = corpus.users.iter().collect();
    users.sort_by_key(|u| u.user_id);

    let mut matrix = RatingMatrix::new(
        users.iter().map(|u| u.user_id).collect(),
        titles.iter().map(|t| t.anime_id).collect(),
    );
    for (row, u) in users.iter().enumerate() {
        matrix.set_demographics(row, encode_demographics(u.gender.code(), u.age_category));
    }

    let mut latest: HashMap<(UserId, AnimeId), (i64, u8)> = HashMap::new();
    let mut report = BuildReport::default();
    for r in &corpus.ratings {
        match latest.entry((r.user_id, r.anime_id)) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert((r.timestamp, r.score));
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                report.duplicates += 1;
                if r.timestamp >= e.get().0 {
                    e.insert((r.timestamp, r.score));
                }
            }
        }
    }
    for ((user, anime), (_, score)) in latest {
        if let (Some(row), Some(col)) = (matrix.row_of(user), matrix.column_of(anime)) {
            matrix.set(row, col, f32::from(score));
        }
    }

    let genres = GenreMatrix::from_titles(titles.iter().map(|t| (t.anime_id, t.genres.as_slice())));
    (matrix, genres, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AnimeTitle, Gender, RatingEntry, Status, UserRecord};

    fn title(id: u32, genres: &[&str]) -> AnimeTitle {
        AnimeTitle {
            anime_id: id,
            name: format!("t{id}"),
            genres: genres.iter().map(|g| g.to_string()).collect(),
            studio: Some("s".into()),
            source: Some("s".into()),
            mean_score: None,
            members: 0,
        }
    }

    fn user(id: u32, gender: Gender, cat: u8) -> UserRecord {
        UserRecord {
            user_id: id,
            gender,
            age_category: cat,
        }
    }

    fn rating(user_id: u32, anime_id: u32, score: u8, timestamp: i64) -> RatingEntry {
        RatingEntry {
            user_id,
            anime_id,
            score,
            status: Status::Watched,
            timestamp,
        }
    }

    #[test]
    fn single_rating() {
        let corpus = Corpus {
            titles: vec![title(5, &["Action"])],
            users: vec![user(1, Gender::Female, 4)],
            ratings: vec![rating(1, 5, 7, 0)],
        };
        let (m, _, _) = build_matrices(&corpus);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 0), 7.0);
        assert_eq!(m.dense_row(0), vec![1.0, 0.0, 0.0, 1.0, 0.0, 7.0]);
    }

    #[test]
    fn parody_row_under_three_genre_vocabulary() {
        let corpus = Corpus {
            titles: vec![
                title(1, &["Sports"]),
                title(2104, &["Parody"]),
                title(3, &["Mecha"]),
            ],
            users: vec![],
            ratings: vec![],
        };
        let (_, g, _) = build_matrices(&corpus);
        let vocab = g.vocabulary();
        assert_eq!(vocab, &["Mecha", "Parody", "Sports"]);
        let row = g.row(2104).unwrap();
        let expected: Vec<u8> = vocab.iter().map(|v| u8::from(v == "Parody")).collect();
        assert_eq!(row, expected.as_slice());
    }

    #[test]
    fn second_user_unrated_everywhere() {
        let corpus = Corpus {
            titles: vec![title(1, &[]), title(2, &[]), title(3, &[])],
            users: vec![user(1, Gender::Male, 1), user(2, Gender::Male, 1)],
            ratings: vec![rating(1, 1, 4, 0), rating(1, 3, 9, 0)],
        };
        let (m, _, _) = build_matrices(&corpus);
        assert!(m.row_entries(1).is_empty());
        assert!(m.dense_row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_keeps_latest_timestamp() {
        let corpus = Corpus {
            titles: vec![title(1, &[])],
            users: vec![user(1, Gender::Male, 1)],
            ratings: vec![rating(1, 1, 9, 200), rating(1, 1, 3, 100)],
        };
        let (m, _, report) = build_matrices(&corpus);
        assert_eq!(m.get(0, 0), 9.0);
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn demographic_prefix_one_hot() {
        for cat in 1..=5u8 {
            let p = encode_demographics(1, cat);
            assert_eq!(p[0], 1.0);
            let ones = p[1..].iter().filter(|&&v| v == 1.0).count();
            assert_eq!(ones, usize::from(cat > 1));
        }
    }

    #[test]
    fn genre_row_sums_match_label_counts() {
        let corpus = Corpus {
            titles: vec![title(1, &["A", "B"]), title(2, &["B"]), title(3, &[])],
            users: vec![],
            ratings: vec![],
        };
        let (_, g, _) = build_matrices(&corpus);
        for t in &corpus.titles {
            let sum: u32 = g.row(t.anime_id).unwrap().iter().map(|&v| u32::from(v)).sum();
            assert_eq!(sum as usize, t.genres.len());
        }
    }

    #[test]
    fn set_zero_clears() {
        let mut m = RatingMatrix::new(vec![1], vec![10, 20]);
        m.set(0, 1, 5.0);
        m.set(0, 0, 2.0);
        assert_eq!(m.row_entries(0), &[(0, 2.0), (1, 5.0)]);
        m.set(0, 1, 0.0);
        assert_eq!(m.nnz(), 1);
    }
}
