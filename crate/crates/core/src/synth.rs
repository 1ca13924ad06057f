//! Seeded synthetic anime corpus with planted taste groups. Used as the
//! desk-scale corpus for fixtures, demos and the end-to-end checks.
//!
//! Every title belongs to one latent group that fixes its core genres; every
//! user leans towards one or two groups. Scores rise with that affinity, and
//! users are likelier to watch popular titles and titles they like. A few
//! titles lack a studio, a few entries are dropped or plan-to-watch, and a few
//! users rate too little, so cleansing has something to do.

use crate::dataset::{
    write_anime_csv, write_ratings_csv, write_users_csv, AnimeId, AnimeTitle, Gender, RatingEntry,
    Status, UserId,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

const GENRES: [&str; 12] = [
    "Action", "Adventure", "Comedy", "Drama", "Fantasy", "Horror", "Mecha", "Mystery", "Romance",
    "Sci-Fi", "Slice of Life", "Sports",
];
const FIRST: [&str; 12] = [
    "Crimson", "Silent", "Starlit", "Iron", "Paper", "Hidden", "Azure", "Last", "Wandering",
    "Golden", "Frozen", "Electric",
];
const SECOND: [&str; 12] = [
    "Blade", "Garden", "Voyage", "Academy", "Signal", "Kingdom", "Requiem", "Summer", "Circuit",
    "Lantern", "Frontier", "Melody",
];
const STUDIOS: [&str; 5] = ["Sunrise", "Madhouse", "Bones", "Kyoto Animation", "Production I.G"];
const SOURCES: [&str; 4] = ["Manga", "Original", "Light novel", "Visual novel"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub titles: usize,
    pub users: usize,
    pub groups: usize,
    /// Ratings per user are drawn uniformly from this range.
    pub ratings_per_user: (usize, usize),
    /// Standard deviation of the score noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            titles: 160,
            users: 420,
            groups: 5,
            ratings_per_user: (12, 60),
            noise: 0.8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub titles: Vec<AnimeTitle>,
    /// `(user_id, gender, birth_year)`.
    pub users: Vec<(UserId, Gender, i32)>,
    pub ratings: Vec<RatingEntry>,
    /// Planted group of each title.
    pub groups: Vec<(AnimeId, usize)>,
}

#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub anime: PathBuf,
    pub users: PathBuf,
    pub ratings: PathBuf,
}

/// Reference year that the generated birth years assume.
pub const REFERENCE_YEAR: i32 = 2020;

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let groups = config.groups.max(1);

    let mut genre_order: Vec<usize> = (0..GENRES.len()).collect();
    genre_order.shuffle(&mut rng);
    let core: Vec<Vec<usize>> = (0..groups)
        .map(|g| {
            let n = 2 + g % 2;
            (0..n).map(|i| genre_order[(g * 2 + i) % GENRES.len()]).collect()
        })
        .collect();

    let popularity = LogNormal::new(0.0, 0.9).unwrap();
    let bias = Normal::new(0.0, 0.7).unwrap();
    let mut titles = Vec::with_capacity(config.titles);
    let mut group_of = Vec::with_capacity(config.titles);
    let mut pop = Vec::with_capacity(config.titles);
    let mut item_bias = Vec::with_capacity(config.titles);
    for i in 0..config.titles {
        let id = (i + 1) as AnimeId;
        let g = rng.random_range(0..groups);
        let mut genres: Vec<String> = core[g].iter().map(|&k| GENRES[k].to_string()).collect();
        if rng.random_bool(0.2) {
            genres.push(GENRES.choose(&mut rng).unwrap().to_string());
        }
        genres.sort();
        genres.dedup();
        let p: f64 = popularity.sample(&mut rng);
        let studio = (!rng.random_bool(0.03)).then(|| STUDIOS.choose(&mut rng).unwrap().to_string());
        titles.push(AnimeTitle {
            anime_id: id,
            name: format!(
                "{} {} {}",
                FIRST.choose(&mut rng).unwrap(),
                SECOND.choose(&mut rng).unwrap(),
                id
            ),
            genres,
            studio,
            source: Some(SOURCES.choose(&mut rng).unwrap().to_string()),
            mean_score: None,
            members: (p * 20_000.0).round() as u64 + 100,
        });
        group_of.push(g);
        pop.push(p);
        item_bias.push(bias.sample(&mut rng) * 0.8);
    }

    let noise = Normal::new(0.0, config.noise.max(1e-9)).unwrap();
    let mut users = Vec::with_capacity(config.users);
    let mut ratings = Vec::new();
    let mut clock = 0i64;
    for u in 0..config.users {
        let user_id = (u + 1) as UserId;
        let gender = if rng.random_bool(0.5) { Gender::Male } else { Gender::Female };
        users.push((user_id, gender, rng.random_range(1988..=2013)));

        let mut taste = vec![0.0; groups];
        taste[rng.random_range(0..groups)] = 1.0;
        if rng.random_bool(0.4) {
            taste[rng.random_range(0..groups)] += 0.6;
        }
        let user_bias = bias.sample(&mut rng);

        // Fewer ratings than the default cleansing threshold for a few users.
        let (lo, hi) = config.ratings_per_user;
        let count = if rng.random_bool(0.04) {
            rng.random_range(1..lo.max(2))
        } else {
            rng.random_range(lo..=hi.max(lo))
        }
        .min(config.titles);
        let weights: Vec<f64> = (0..config.titles)
            .map(|i| pop[i] * (0.3 + taste[group_of[i]]))
            .collect();
        for i in weighted_sample(&mut rng, &weights, count) {
            let affinity = taste[group_of[i]];
            let raw = 4.2 + 3.2 * affinity + user_bias + item_bias[i] + noise.sample(&mut rng);
            let mut score = raw.round().clamp(1.0, 10.0) as u8;
            let status = match rng.random_range(0..100) {
                0..=3 => Status::Dropped,
                4..=6 => {
                    score = if rng.random_bool(0.5) { 0 } else { score };
                    Status::PlanToWatch
                }
                7..=9 => Status::Other,
                _ => Status::Watched,
            };
            clock += 1;
            ratings.push(RatingEntry {
                user_id,
                anime_id: (i + 1) as AnimeId,
                score,
                status,
                timestamp: clock,
            });
        }
    }

    // Mean score as the catalog would report it.
    for (i, t) in titles.iter_mut().enumerate() {
        let scores: Vec<f64> = ratings
            .iter()
            .filter(|r| r.anime_id as usize == i + 1 && r.score > 0)
            .map(|r| f64::from(r.score))
            .collect();
        if !scores.is_empty() {
            let m = scores.iter().sum::<f64>() / scores.len() as f64;
            t.mean_score = Some((m * 100.0).round() / 100.0);
        }
    }

    SynthCorpus {
        groups: titles.iter().map(|t| t.anime_id).zip(group_of).collect(),
        titles,
        users,
        ratings,
    }
}

/// `count` distinct indices, each draw proportional to its weight among
/// those not yet drawn.
fn weighted_sample(rng: &mut ChaCha8Rng, weights: &[f64], count: usize) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(w.len()) {
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut x = rng.random::<f64>() * total;
        let mut pick = w.iter().rposition(|&v| v > 0.0).unwrap();
        for (i, &v) in w.iter().enumerate() {
            if v > 0.0 && x < v {
                pick = i;
                break;
            }
            x -= v;
        }
        w[pick] = 0.0;
        out.push(pick);
    }
    out
}

impl SynthCorpus {
    /// Writes `anime.csv`, `users.csv` and `ratings.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> io::Result<CorpusFiles> {
        std::fs::create_dir_all(dir)?;
        let files = CorpusFiles {
            anime: dir.join("anime.csv"),
            users: dir.join("users.csv"),
            ratings: dir.join("ratings.csv"),
        };
        let create = |p: &Path| File::create(p).map(BufWriter::new);
        write_anime_csv(create(&files.anime)?, &self.titles)?;
        write_users_csv(create(&files.users)?, &self.users)?;
        write_ratings_csv(create(&files.ratings)?, &self.ratings)?;
        Ok(files)
    }
}
