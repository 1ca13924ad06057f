use super::{AnimeTitle, DatasetError, RatingEntry, Status, UserRecord};
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub titles: Vec<AnimeTitle>,
    pub users: Vec<UserRecord>,
    pub ratings: Vec<RatingEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleanseReport {
    pub titles_removed: usize,
    pub ratings_of_removed_titles: usize,
    pub dangling_ratings: usize,
    pub plan_to_watch_discarded: usize,
    pub dropped_corrected: usize,
    pub users_removed: usize,
    pub ratings_of_removed_users: usize,
}

/// Applies, in order: (a) drop titles with unknown studio or source together
/// with their ratings, (c) discard rated plan-to-watch entries, (d) set every
/// dropped entry to score 1, (b) drop users with fewer than
/// `min_ratings_per_user` rated titles together with their ratings.
///
/// Ratings that reference a title or user absent from the inputs are removed
/// as well, so the output is referentially closed.
pub fn cleanse(
    corpus: Corpus,
    min_ratings_per_user: usize,
) -> Result<(Corpus, CleanseReport), DatasetError> {
    let Corpus {
        titles,
        users,
        ratings,
    } = corpus;
    let mut report = CleanseReport::default();

    // (a)
    let (titles, removed): (Vec<_>, Vec<_>) = titles
        .into_iter()
        .partition(|t| t.studio.is_some() && t.source.is_some());
    report.titles_removed = removed.len();
    let removed_ids: HashSet<u32> = removed.iter().map(|t| t.anime_id).collect();
    let kept_ids: HashSet<u32> = titles.iter().map(|t| t.anime_id).collect();
    let user_ids: HashSet<u32> = users.iter().map(|u| u.user_id).collect();

    let mut kept = Vec::with_capacity(ratings.len());
    for r in ratings {
        if removed_ids.contains(&r.anime_id) {
            report.ratings_of_removed_titles += 1;
        } else if !kept_ids.contains(&r.anime_id) || !user_ids.contains(&r.user_id) {
            report.dangling_ratings += 1;
        } else if r.status == Status::PlanToWatch && r.score > 0 {
            // (c)
            report.plan_to_watch_discarded += 1;
        } else {
            kept.push(r);
        }
    }

    // (d)
    for r in kept.iter_mut().filter(|r| r.status == Status::Dropped) {
        if r.score != 1 {
            report.dropped_corrected += 1;
            r.score = 1;
        }
    }

    // (b)
    let mut rated: HashMap<u32, HashSet<u32>> = HashMap::new();
    for r in kept.iter().filter(|r| r.score > 0) {
        rated.entry(r.user_id).or_default().insert(r.anime_id);
    }
    let qualifies =
        |id: &u32| rated.get(id).map_or(0, HashSet::len) >= min_ratings_per_user;
    let before = users.len();
    let users: Vec<UserRecord> = users.into_iter().filter(|u| qualifies(&u.user_id)).collect();
    report.users_removed = before - users.len();
    let before = kept.len();
    kept.retain(|r| qualifies(&r.user_id));
    report.ratings_of_removed_users = before - kept.len();

    if titles.is_empty() {
        return Err(DatasetError::EmptyAfterCleansing(
            "no titles with known studio and source".into(),
        ));
    }
    if users.is_empty() {
        return Err(DatasetError::EmptyAfterCleansing(format!(
            "no user has at least {min_ratings_per_user} rated titles; lower the threshold"
        )));
    }
    Ok((
        Corpus {
            titles,
            users,
            ratings: kept,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Gender;

    fn title(id: u32, studio: Option<&str>) -> AnimeTitle {
        AnimeTitle {
            anime_id: id,
            name: format!("t{id}"),
            genres: vec!["Action".into()],
            studio: studio.map(str::to_string),
            source: Some("Manga".into()),
            mean_score: None,
            members: 0,
        }
    }

    fn user(id: u32) -> UserRecord {
        UserRecord {
            user_id: id,
            gender: Gender::Male,
            age_category: 3,
        }
    }

    fn rating(user_id: u32, anime_id: u32, score: u8, status: Status) -> RatingEntry {
        RatingEntry {
            user_id,
            anime_id,
            score,
            status,
            timestamp: 0,
        }
    }

    fn base() -> Corpus {
        let titles = (1..=6)
            .map(|i| title(i, if i == 6 { None } else { Some("Bones") }))
            .collect();
        let users = vec![user(1), user(2), user(3)];
        let mut ratings = Vec::new();
        for u in 1..=3 {
            ratings.push(rating(u, 6, 8, Status::Watched));
        }
        for a in 1..=4 {
            ratings.push(rating(1, a, 7, Status::Watched));
        }
        ratings.push(rating(1, 5, 9, Status::Dropped));
        ratings.push(rating(2, 1, 8, Status::PlanToWatch));
        for a in 2..=4 {
            ratings.push(rating(2, a, 6, Status::Watched));
        }
        ratings.push(rating(3, 1, 5, Status::Watched));
        ratings.push(rating(3, 2, 5, Status::Watched));
        Corpus {
            titles,
            users,
            ratings,
        }
    }

    #[test]
    fn unknown_studio_title_and_its_ratings_removed() {
        let (out, report) = cleanse(base(), 1).unwrap();
        assert!(out.titles.iter().all(|t| t.anime_id != 6));
        assert!(out.ratings.iter().all(|r| r.anime_id != 6));
        assert_eq!(report.titles_removed, 1);
        assert_eq!(report.ratings_of_removed_titles, 3);
    }

    #[test]
    fn five_ratings_of_unknown_title_disappear() {
        let mut c = base();
        c.titles[0].studio = None;
        c.users.extend([user(4), user(5)]);
        for u in 1..=5 {
            c.ratings.retain(|r| !(r.user_id == u && r.anime_id == 1));
            c.ratings.push(rating(u, 1, 7, Status::Watched));
        }
        let (out, report) = cleanse(c, 0).unwrap();
        assert!(out.ratings.iter().all(|r| r.anime_id != 1));
        assert_eq!(report.ratings_of_removed_titles, 5 + 3);
    }

    #[test]
    fn dropped_becomes_one() {
        let (out, _) = cleanse(base(), 1).unwrap();
        let r = out
            .ratings
            .iter()
            .find(|r| r.user_id == 1 && r.anime_id == 5)
            .unwrap();
        assert_eq!((r.status, r.score), (Status::Dropped, 1));
    }

    #[test]
    fn rated_plan_to_watch_discarded() {
        let (out, report) = cleanse(base(), 1).unwrap();
        assert!(!out
            .ratings
            .iter()
            .any(|r| r.status == Status::PlanToWatch && r.score > 0));
        assert_eq!(report.plan_to_watch_discarded, 1);
    }

    #[test]
    fn threshold_removes_light_users() {
        // user 3 keeps 2 rated titles after (a)
        let (out, report) = cleanse(base(), 3).unwrap();
        assert_eq!(
            out.users.iter().map(|u| u.user_id).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!(out.ratings.iter().all(|r| r.user_id != 3));
        assert_eq!(report.users_removed, 1);
    }

    #[test]
    fn threshold_counts_post_correction_data() {
        // user 2 has 4 raw ratings but the plan-to-watch one is discarded first
        let (out, _) = cleanse(base(), 4).unwrap();
        assert_eq!(
            out.users.iter().map(|u| u.user_id).collect::<Vec<_>>(),
            vec![1]
        );
    }

    #[test]
    fn idempotent() {
        let (once, _) = cleanse(base(), 3).unwrap();
        let (twice, report) = cleanse(once.clone(), 3).unwrap();
        assert_eq!(once, twice);
        assert_eq!(report, CleanseReport::default());
    }

    #[test]
    fn empty_result_is_fatal() {
        let err = cleanse(base(), 100).unwrap_err();
        assert!(matches!(err, DatasetError::EmptyAfterCleansing(_)));
    }

    #[test]
    fn dangling_references_removed() {
        let mut c = base();
        c.ratings.push(rating(99, 1, 7, Status::Watched));
        c.ratings.push(rating(1, 99, 7, Status::Watched));
        let (out, report) = cleanse(c, 1).unwrap();
        assert_eq!(report.dangling_ratings, 2);
        let titles: HashSet<u32> = out.titles.iter().map(|t| t.anime_id).collect();
        let users: HashSet<u32> = out.users.iter().map(|u| u.user_id).collect();
        assert!(out
            .ratings
            .iter()
            .all(|r| titles.contains(&r.anime_id) && users.contains(&r.user_id)));
    }
}
