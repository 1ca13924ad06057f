use super::*;
use crate::autonet::{Activation, LossKind};
use crate::dataset::{Gender, Status};
use crate::hybridfilter::UserProfile;
use ndarray::Array2;
use tempfile::TempDir;

fn title(id: AnimeId, genres: &[&str]) -> AnimeTitle {
    AnimeTitle {
        anime_id: id,
        name: format!("Show {id}, \"quoted\""),
        genres: genres.iter().map(|g| g.to_string()).collect(),
        studio: Some("Studio".into()),
        source: Some("Manga".into()),
        mean_score: Some(6.5 + f64::from(id) / 10.0),
        members: u64::from(id) * 1000,
    }
}

fn fixture() -> KnowledgeBase {
    let catalog: Vec<_> = (1..=8)
        .map(|i| title(i, if i % 2 == 0 { &["Action", "Drama"] } else { &["Comedy"] }))
        .collect();
    let users = vec![
        UserRecord { user_id: 1, gender: Gender::Male, age_category: 2 },
        UserRecord { user_id: 2, gender: Gender::Female, age_category: 4 },
    ];
    let ratings = (1..=8)
        .map(|a| RatingEntry {
            user_id: 1 + a % 2,
            anime_id: a,
            score: (a % 10 + 1) as u8,
            status: Status::Watched,
            timestamp: i64::from(a),
        })
        .collect();
    let mut kb = KnowledgeBase::from_corpus(Corpus { titles: catalog, users, ratings }, 1);
    let arch = ArchitectureConfig {
        hidden: vec![4],
        hidden_activation: Activation::Selu,
        final_activation: Activation::Relu,
    };
    let item_ids: Vec<AnimeId> = (1..=8).collect();
    let model = Autoencoder::<f32>::new(DEMOGRAPHIC_COLUMNS + 8, &arch, 3).unwrap();
    let manifest = ModelManifest::describe(&model, LossKind::Masked, 3, None, Some(0.25));
    kb.primary = Some(PrimaryModel { model, manifest, item_ids });
    kb.metrics = Some(HeldoutMetrics {
        model: ErrorMetrics { mse: 0.5, rmse: 0.5f64.sqrt(), count: 4 },
        global_average: ErrorMetrics { mse: 1.0, rmse: 1.0, count: 4 },
        user_average: ErrorMetrics { mse: 0.75, rmse: 0.75f64.sqrt(), count: 4 },
        loss_history: vec![2.0, 1.0, 0.5],
    });
    let values = Array2::from_shape_fn((8, 2), |(i, j)| (i as f32 * 0.37 - j as f32).sin());
    let mut emb = EmbeddingSet::from_points((1..=8).collect(), values).unwrap();
    emb.manifest.genre_vocabulary = kb.genre_vocabulary();
    emb.manifest.g = emb.manifest.genre_vocabulary.len();
    kb.embeddings = Some(emb);
    kb.clusters = Some(ClusterModel {
        k: 2,
        min_cluster_size: 1,
        seed: 0,
        assignment: (1..=8).map(|i| (i, (i as usize) % 2)).collect(),
        opposite: (1..=8).map(|i| (i, 1 - (i as usize) % 2)).collect(),
        centroid: vec![0.1, -0.2],
    });
    kb
}

fn artifact_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
}

#[test]
fn save_then_load_round_trips() {
    let dir = TempDir::new().unwrap();
    let kb = fixture();
    let digest = kb.save(dir.path()).unwrap();
    let (back, loaded_digest) = KnowledgeBase::load_with_digest(dir.path()).unwrap();
    assert_eq!(back, kb);
    assert_eq!(digest, loaded_digest);
    assert!(!artifact_files(dir.path()).iter().any(|p| p.to_string_lossy().ends_with(".tmp")));
}

#[test]
fn corpus_only_base_round_trips() {
    let dir = TempDir::new().unwrap();
    let mut kb = fixture();
    kb.primary = None;
    kb.metrics = None;
    kb.embeddings = None;
    kb.clusters = None;
    kb.save(dir.path()).unwrap();
    assert_eq!(KnowledgeBase::load(dir.path()).unwrap(), kb);
}

#[test]
fn identical_bases_hash_identically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let kb = fixture();
    let first = kb.save(a.path()).unwrap();
    assert_eq!(kb.save(a.path()).unwrap(), first);
    assert_eq!(fixture().save(b.path()).unwrap(), first);
    let mut other = fixture();
    other.catalog[0].members += 1;
    assert_ne!(other.save(b.path()).unwrap(), first);
}

#[test]
fn flipping_any_stored_byte_fails_load() {
    let dir = TempDir::new().unwrap();
    fixture().save(dir.path()).unwrap();
    for path in artifact_files(dir.path()) {
        let original = fs::read(&path).unwrap();
        for pos in [0, original.len() / 2, original.len() - 1] {
            let mut bytes = original.clone();
            bytes[pos] ^= 0x01;
            fs::write(&path, &bytes).unwrap();
            assert!(
                KnowledgeBase::load(dir.path()).is_err(),
                "{} byte {pos} flipped but load succeeded",
                path.display()
            );
        }
        fs::write(&path, &original).unwrap();
    }
    KnowledgeBase::load(dir.path()).unwrap();
}

#[test]
fn truncated_blob_is_reported_corrupt() {
    let dir = TempDir::new().unwrap();
    fixture().save(dir.path()).unwrap();
    let blob = dir.path().join(MODEL_BLOB);
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    match KnowledgeBase::load(dir.path()) {
        Err(KbError::Corrupt { artifact, .. }) => assert_eq!(artifact, MODEL_BLOB),
        other => panic!("expected corruption, got {other:?}"),
    }
}

#[test]
fn missing_artifact_is_named() {
    let dir = TempDir::new().unwrap();
    fixture().save(dir.path()).unwrap();
    fs::remove_file(dir.path().join(CLUSTERS)).unwrap();
    match KnowledgeBase::load(dir.path()) {
        Err(KbError::Missing(name)) => assert_eq!(name, CLUSTERS),
        other => panic!("expected missing artifact, got {other:?}"),
    }
    let gone = dir.path().join("nope");
    assert!(matches!(KnowledgeBase::load(&gone), Err(KbError::Missing(_))));
}

#[test]
fn genre_vocabulary_mismatch_fails_validation() {
    let dir = TempDir::new().unwrap();
    let kb = fixture();
    kb.save(dir.path()).unwrap();
    // Re-genre the catalog and re-sign it, as if it came from another build.
    let mut changed = kb.catalog.clone();
    changed[0].genres = vec!["Horror".into()];
    let mut buf = Vec::new();
    write_anime_csv(&mut buf, &changed).unwrap();
    fs::write(dir.path().join(CATALOG), &buf).unwrap();
    let mpath = dir.path().join(MANIFEST);
    let mut manifest: Manifest = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
    manifest.artifacts.insert(CATALOG.into(), sha256_hex(&buf));
    fs::write(&mpath, serde_json::to_vec(&manifest).unwrap()).unwrap();
    match KnowledgeBase::load(dir.path()) {
        Err(KbError::Invalid(msg)) => assert!(msg.contains("genre vocabulary"), "{msg}"),
        other => panic!("expected validation failure, got {other:?}"),
    }
}

#[test]
fn cross_references_are_checked_before_saving() {
    let dir = TempDir::new().unwrap();
    let mut kb = fixture();
    kb.clusters.as_mut().unwrap().assignment.pop();
    kb.clusters.as_mut().unwrap().opposite.pop();
    assert!(matches!(kb.save(dir.path()), Err(KbError::Invalid(_))));
    let mut kb = fixture();
    kb.primary.as_mut().unwrap().item_ids[0] = 99;
    assert!(matches!(kb.save(dir.path()), Err(KbError::Invalid(_))));
}

#[test]
fn failed_save_leaves_prior_state_untouched() {
    let dir = TempDir::new().unwrap();
    let kb = fixture();
    kb.save(dir.path()).unwrap();
    let before: Vec<_> = artifact_files(dir.path()).iter().map(|p| fs::read(p).unwrap()).collect();
    // A directory squatting on a temp name makes that write fail, whatever
    // the process's privileges.
    fs::create_dir(dir.path().join(".ratings.csv.tmp")).unwrap();
    let mut changed = fixture();
    changed.catalog[0].members += 7;
    assert!(matches!(changed.save(dir.path()), Err(KbError::Io { .. })));
    let after: Vec<_> = artifact_files(dir.path()).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(KnowledgeBase::load(dir.path()).unwrap(), kb);
}

#[test]
fn profile_log_round_trip_and_replace() {
    let dir = TempDir::new().unwrap();
    let store = KnowledgeBase::profiles(dir.path());
    let mut p = UserProfile::new("s-1", Gender::Female, 3).unwrap();
    store.create(&p).unwrap();
    for (id, score) in [(1, 9), (2, 4), (1, 6)] {
        let ts = p.next_timestamp();
        p.rate(id, score, ts).unwrap();
        store
            .append("s-1", &ProfileEvent::Rated { anime_id: id, score, timestamp: ts })
            .unwrap();
    }
    store
        .append("s-1", &ProfileEvent::Feedback { list_score: 7, ratings: 2 })
        .unwrap();
    let path = dir.path().join(PROFILES_DIR).join("s-1.jsonl");
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 5);

    let stored = store.load("s-1").unwrap();
    assert_eq!(stored.profile, p);
    let seq: Vec<_> = stored.profile.ratings().iter().map(|r| (r.anime_id, r.score)).collect();
    assert_eq!(seq, vec![(2, 4), (1, 6)]);
    assert_eq!(stored.feedback, vec![FeedbackEntry { list_score: 7, ratings: 2 }]);
    // The superseded rating line was compacted away.
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 4);
    assert_eq!(store.load("s-1").unwrap(), stored);
    assert_eq!(store.list().unwrap(), vec!["s-1".to_string()]);
}

#[test]
fn profile_errors() {
    let dir = TempDir::new().unwrap();
    let store = KnowledgeBase::profiles(dir.path());
    assert!(matches!(store.load("missing"), Err(KbError::SessionNotFound(_))));
    assert!(matches!(
        store.append("missing", &ProfileEvent::Feedback { list_score: 5, ratings: 0 }),
        Err(KbError::SessionNotFound(_))
    ));
    assert!(matches!(store.load("../etc/passwd"), Err(KbError::SessionId(_))));
    let p = UserProfile::new("dup", Gender::Male, 1).unwrap();
    store.create(&p).unwrap();
    assert!(matches!(store.create(&p), Err(KbError::SessionExists(_))));
    assert!(store.list().unwrap().contains(&"dup".to_string()));
}

#[test]
fn interrupted_append_is_ignored() {
    let dir = TempDir::new().unwrap();
    let store = KnowledgeBase::profiles(dir.path());
    let p = UserProfile::new("cut", Gender::Male, 2).unwrap();
    store.create(&p).unwrap();
    store
        .append("cut", &ProfileEvent::Rated { anime_id: 3, score: 8, timestamp: 0 })
        .unwrap();
    let path = dir.path().join(PROFILES_DIR).join("cut.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{\"event\":\"rated\",\"anime_id\":4,\"sco");
    fs::write(&path, text).unwrap();
    let stored = store.load("cut").unwrap();
    assert_eq!(stored.profile.ratings().len(), 1);

    fs::write(&path, "{\"event\":\"rated\",\"anime_id\":4,\"score\":5,\"timestamp\":0}\n").unwrap();
    assert!(matches!(store.load("cut"), Err(KbError::Corrupt { .. })));
}
