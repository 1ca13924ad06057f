use animerec_core::autonet::{Activation, ArchitectureConfig, Autoencoder, LossKind, ModelManifest};
use animerec_core::dataset::{AnimeId, AnimeTitle, Corpus, Gender, ParseOptions, RatingEntry, Status, UserRecord, DEMOGRAPHIC_COLUMNS};
use animerec_core::embedding::EmbeddingSet;
use animerec_core::hybridfilter::{cold_start, UserProfile};
use animerec_core::knowledgebase::{KnowledgeBase, PrimaryModel};
use animerec_core::pipeline::build_all;
use animerec_core::spectral::ClusterModel;
use animerec_core::synth::{generate, SynthConfig, REFERENCE_YEAR};
use animerec_service::{serve, AppState};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};
use tempfile::TempDir;

/// Desk-corpus base, built once per test binary.
fn desk_dir() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let files = generate(&SynthConfig::default()).write_csv(&dir.path().join("corpus")).unwrap();
        let built = build_all(&files, &ParseOptions { reference_year: REFERENCE_YEAR }, 20, 0).unwrap();
        built.kb.save(&dir.path().join("kb")).unwrap();
        dir
    })
    .path()
}

fn desk_kb() -> PathBuf {
    desk_dir().join("kb")
}

/// Six titles in two clusters that oppose each other; the model ignores its
/// input and predicts `predictions` for titles 1..=6.
fn six_title_kb(dir: &Path, predictions: [f32; 6]) {
    let titles: Vec<AnimeTitle> = (1..=6)
        .map(|i| AnimeTitle {
            anime_id: i,
            name: format!("Title {i}"),
            genres: vec!["Action".into()],
            studio: Some("Studio".into()),
            source: None,
            mean_score: Some(7.0),
            members: 100,
        })
        .collect();
    let users = vec![UserRecord { user_id: 1, gender: Gender::Female, age_category: 3 }];
    let ratings = (1..=6)
        .map(|a| RatingEntry { user_id: 1, anime_id: a, score: 5, status: Status::Watched, timestamp: a.into() })
        .collect();
    let mut kb = KnowledgeBase::from_corpus(Corpus { titles, users, ratings }, 1);
    let arch = ArchitectureConfig {
        hidden: vec![3],
        hidden_activation: Activation::Selu,
        final_activation: Activation::Relu,
    };
    let mut model = Autoencoder::<f32>::new(DEMOGRAPHIC_COLUMNS + 6, &arch, 1).unwrap();
    let last = model.layers_mut().last_mut().unwrap();
    last.weights.fill(0.0);
    last.bias.fill(0.0);
    for (i, p) in predictions.iter().enumerate() {
        last.bias[DEMOGRAPHIC_COLUMNS + i] = *p;
    }
    let manifest = ModelManifest::describe(&model, LossKind::Masked, 1, None, None);
    kb.primary = Some(PrimaryModel { model, manifest, item_ids: (1..=6).collect() });
    let values = ndarray::Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f32);
    let mut emb = EmbeddingSet::from_points((1..=6).collect(), values).unwrap();
    emb.manifest.genre_vocabulary = kb.genre_vocabulary();
    emb.manifest.g = emb.manifest.genre_vocabulary.len();
    kb.embeddings = Some(emb);
    kb.clusters = Some(ClusterModel {
        k: 2,
        min_cluster_size: 1,
        seed: 0,
        assignment: (1..=6).map(|i| (i, usize::from(i > 3))).collect(),
        opposite: (1..=6).map(|i| (i, usize::from(i <= 3))).collect(),
        centroid: vec![0.0, 0.0],
    });
    kb.save(dir).unwrap();
}

struct Server {
    base: String,
    http: Client,
    state: Arc<AppState>,
}

async fn start(kb: &Path) -> Server {
    let state = Arc::new(AppState::open(kb).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve(listener, state.clone()));
    Server { base, http: Client::new(), state }
}

impl Server {
    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        let status = r.status();
        let text = r.text().await.unwrap();
        (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() })
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap())
    }

    async fn session(&self, age: i64, gender: &str) -> String {
        let (s, body) = self.post("/api/session", json!({"age": age, "gender": gender})).await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    async fn rate(&self, id: &str, anime_id: AnimeId, score: i64) -> StatusCode {
        self.post(&format!("/api/session/{id}/ratings"), json!({"anime_id": anime_id, "score": score})).await.0
    }

    async fn lists(&self, id: &str) -> Value {
        let (s, body) = self.get(&format!("/api/session/{id}/recommendations")).await;
        assert_eq!(s, StatusCode::OK, "{body}");
        body
    }
}

fn ids(list: &Value) -> Vec<AnimeId> {
    list.as_array().unwrap().iter().map(|i| i["anime_id"].as_u64().unwrap() as AnimeId).collect()
}

/// Disjoint lists, nothing rated, each sorted by predicted rating.
fn assert_valid(body: &Value, rated: &HashSet<AnimeId>) {
    let (s, m) = (ids(&body["similar"]), ids(&body["may_like"]));
    assert!(!s.is_empty() || !m.is_empty());
    assert!(s.iter().all(|i| !m.contains(i)), "lists overlap: {s:?} {m:?}");
    assert!(s.iter().chain(&m).all(|i| !rated.contains(i)), "rated title recommended");
    for list in [&body["similar"], &body["may_like"]] {
        let p: Vec<f64> = list.as_array().unwrap().iter().map(|i| i["predicted_rating"].as_f64().unwrap()).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "not sorted: {p:?}");
    }
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode) {
    assert_eq!(status, expected, "{body}");
    assert!(body["code"].is_string() && body["message"].is_string(), "{body}");
}

#[tokio::test]
async fn session_creation_validates_demographics() {
    let srv = start(&desk_kb()).await;
    let (s, body) = srv.post("/api/session", json!({"age": 18, "gender": "female"})).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["age_category"], 3);
    assert_eq!(body["gender"], "female");
    assert_eq!(body["ratings"], json!([]));
    let other = srv.session(30, "male").await;
    assert_ne!(body["session_id"].as_str().unwrap(), other);

    for bad in [
        json!({"age": -1, "gender": "female"}),
        json!({"age": 20, "gender": "robot"}),
        json!({"age": 20}),
        json!({"age": "twenty", "gender": "male"}),
    ] {
        let (s, body) = srv.post("/api/session", bad).await;
        assert_error(s, &body, StatusCode::BAD_REQUEST);
    }
    let r = srv.http.post(format!("{}/api/session", srv.base)).header("content-type", "application/json").body("{").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn search_ranks_substring_matches_by_members() {
    let srv = start(&desk_kb()).await;
    let titles = srv.state.engine().catalog().titles().to_vec();

    let (s, body) = srv.get("/api/anime?query=a&limit=5").await;
    assert_eq!(s, StatusCode::OK);
    let mut expect: Vec<&AnimeTitle> = titles.iter().filter(|t| t.name.to_lowercase().contains('a')).collect();
    expect.sort_by(|a, b| b.members.cmp(&a.members).then(a.anime_id.cmp(&b.anime_id)));
    let expect: Vec<AnimeId> = expect.iter().take(5).map(|t| t.anime_id).collect();
    assert_eq!(ids(&body), expect);

    // A name no other name contains matches only itself, in any case.
    let unique = titles
        .iter()
        .find(|t| titles.iter().filter(|o| o.name.contains(&t.name)).count() == 1)
        .unwrap();
    let q = unique.name.to_uppercase().replace(' ', "%20");
    let (_, body) = srv.get(&format!("/api/anime?query={q}")).await;
    assert_eq!(ids(&body), vec![unique.anime_id]);
    assert_eq!(body[0]["name"], unique.name.as_str());

    let (_, body) = srv.get("/api/anime?query=zzzz").await;
    assert_eq!(body, json!([]));
    for bad in ["/api/anime?query=", "/api/anime", "/api/anime?query=%20%20", "/api/anime?query=a&limit=x"] {
        let (s, body) = srv.get(bad).await;
        assert_error(s, &body, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn ratings_are_validated_and_replace() {
    let srv = start(&desk_kb()).await;
    let id = srv.session(25, "male").await;
    let some = srv.state.engine().catalog().titles()[0].anime_id;
    let other = srv.state.engine().catalog().titles()[1].anime_id;

    assert_eq!(srv.rate(&id, some, 10).await, StatusCode::NO_CONTENT);
    assert_eq!(srv.rate(&id, other, 4).await, StatusCode::NO_CONTENT);
    assert_eq!(srv.rate(&id, some, 6).await, StatusCode::NO_CONTENT);
    let (_, body) = srv.get(&format!("/api/session/{id}")).await;
    assert_eq!(body["ratings"], json!([{"anime_id": other, "score": 4}, {"anime_id": some, "score": 6}]));

    for score in [0, 11, -3] {
        let (s, body) = srv.post(&format!("/api/session/{id}/ratings"), json!({"anime_id": some, "score": score})).await;
        assert_error(s, &body, StatusCode::BAD_REQUEST);
    }
    let (s, body) = srv.post(&format!("/api/session/{id}/ratings"), json!({"anime_id": some, "score": 7.5})).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST);
    let (s, body) = srv.post(&format!("/api/session/{id}/ratings"), json!({"anime_id": 999_999, "score": 7})).await;
    assert_error(s, &body, StatusCode::NOT_FOUND);
    let (s, body) = srv.post("/api/session/nosuchsession/ratings", json!({"anime_id": some, "score": 7})).await;
    assert_error(s, &body, StatusCode::NOT_FOUND);
    let (s, body) = srv.get("/api/session/nosuchsession/recommendations").await;
    assert_error(s, &body, StatusCode::NOT_FOUND);
    let (s, body) = srv.get("/api/session/..%2Fescape/recommendations").await;
    assert_error(s, &body, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_profile_gets_cold_start_lists() {
    let srv = start(&desk_kb()).await;
    let id = srv.session(40, "female").await;
    let body = srv.lists(&id).await;
    assert_eq!(body["cold_start"], true);
    let expect = cold_start(srv.state.engine().catalog(), srv.state.engine().config.limit);
    assert_eq!(ids(&body["similar"]), expect.similar.iter().map(|r| r.anime_id).collect::<Vec<_>>());
    assert_eq!(ids(&body["may_like"]), expect.may_like.iter().map(|r| r.anime_id).collect::<Vec<_>>());
    assert!(body["similar"][0]["name"].is_string());
    assert!(body["similar"][0]["cluster"].is_u64());
}

#[tokio::test]
async fn lists_match_the_engine_and_repeat_identically() {
    let srv = start(&desk_kb()).await;
    let id = srv.session(19, "male").await;
    let titles = srv.state.engine().catalog().titles().to_vec();
    let mut profile = UserProfile::new("oracle", Gender::Male, 3).unwrap();
    for (n, t) in titles.iter().step_by(17).take(4).enumerate() {
        let score = [9, 2, 8, 5][n];
        assert_eq!(srv.rate(&id, t.anime_id, score).await, StatusCode::NO_CONTENT);
        profile.rate(t.anime_id, score as u8, n as u64).unwrap();
    }
    let first = srv.lists(&id).await;
    let second = srv.lists(&id).await;
    assert_eq!(first, second);
    assert_eq!(first["cold_start"], false);

    let expect = srv.state.engine().recommend(&profile);
    assert_eq!(ids(&first["similar"]), expect.similar.iter().map(|r| r.anime_id).collect::<Vec<_>>());
    assert_eq!(ids(&first["may_like"]), expect.may_like.iter().map(|r| r.anime_id).collect::<Vec<_>>());
    let rated = profile.ratings().iter().map(|r| r.anime_id).collect();
    assert_valid(&first, &rated);
}

#[tokio::test]
async fn feedback_is_logged() {
    let srv = start(&desk_kb()).await;
    let id = srv.session(33, "female").await;
    let t = srv.state.engine().catalog().titles()[5].anime_id;
    let (s, _) = srv.post(&format!("/api/session/{id}/feedback"), json!({"list_score": 7})).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    srv.rate(&id, t, 8).await;
    srv.post(&format!("/api/session/{id}/feedback"), json!({"list_score": 9})).await;
    for bad in [json!({"list_score": 11}), json!({"list_score": 0}), json!({})] {
        let (s, body) = srv.post(&format!("/api/session/{id}/feedback"), bad).await;
        assert_error(s, &body, StatusCode::BAD_REQUEST);
    }
    let (s, _) = srv.post("/api/session/ghost/feedback", json!({"list_score": 5})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let stored = KnowledgeBase::profiles(&desk_kb()).load(&id).unwrap();
    let logged: Vec<(u8, usize)> = stored.feedback.iter().map(|f| (f.list_score, f.ratings)).collect();
    assert_eq!(logged, vec![(7, 0), (9, 1)]);
    assert_eq!(stored.profile.score_of(t), Some(8));
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let kb = desk_kb();
    let t = {
        let srv = start(&kb).await;
        let id = srv.session(50, "male").await;
        let t = srv.state.engine().catalog().titles()[3].anime_id;
        srv.rate(&id, t, 9).await;
        (id, t)
    };
    let srv = start(&kb).await;
    let (s, body) = srv.get(&format!("/api/session/{}", t.0)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["ratings"], json!([{"anime_id": t.1, "score": 9}]));
    assert_eq!(body["age_category"], 5);
    let lists = srv.lists(&t.0).await;
    assert_valid(&lists, &HashSet::from([t.1]));
}

#[tokio::test]
async fn liked_and_disliked_examples_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    six_title_kb(dir.path(), [6.0, 8.0, 5.0, 9.0, 2.0, 7.0]);
    let srv = start(dir.path()).await;

    let liked = srv.session(20, "female").await;
    srv.rate(&liked, 1, 9).await;
    let body = srv.lists(&liked).await;
    assert_eq!(ids(&body["similar"]), vec![2, 3]);
    assert_eq!(ids(&body["may_like"]), vec![4, 6, 5]);
    let p: Vec<f64> = body["similar"].as_array().unwrap().iter().map(|i| i["predicted_rating"].as_f64().unwrap()).collect();
    assert_eq!(p, vec![8.0, 5.0]);
    assert_eq!(body["similar"][0]["cluster"], 0);
    assert_eq!(body["may_like"][0]["cluster"], 1);

    let disliked = srv.session(20, "male").await;
    srv.rate(&disliked, 1, 2).await;
    let body = srv.lists(&disliked).await;
    assert_eq!(ids(&body["similar"]), vec![4, 6, 5]);
    assert_eq!(ids(&body["may_like"]), vec![2, 3]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_sessions_never_see_stale_lists() {
    let srv = Arc::new(start(&desk_kb()).await);
    let titles: Vec<AnimeId> = srv.state.engine().catalog().titles().iter().map(|t| t.anime_id).collect();
    let mut tasks = Vec::new();
    for s in 0..6usize {
        let srv = srv.clone();
        let titles = titles.clone();
        tasks.push(tokio::spawn(async move {
            let id = srv.session(15 + s as i64 * 7, if s % 2 == 0 { "male" } else { "female" }).await;
            let mut rated = HashSet::new();
            for step in 0..8usize {
                let t = titles[(s * 31 + step * 13) % titles.len()];
                assert_eq!(srv.rate(&id, t, (1 + (s + step) % 10) as i64).await, StatusCode::NO_CONTENT);
                rated.insert(t);
                // Every mutation so far is reflected in what comes back.
                let body = srv.lists(&id).await;
                assert_eq!(body["version"], step as u64 + 1);
                assert_valid(&body, &rated);
            }
        }));
    }
    // Same-session writes racing each other are linearised.
    let id = srv.session(22, "female").await;
    let racers: Vec<_> = titles[..10]
        .iter()
        .map(|&t| {
            let srv = srv.clone();
            let id = id.clone();
            tokio::spawn(async move { srv.rate(&id, t, 7).await })
        })
        .collect();
    for r in racers {
        assert_eq!(r.await.unwrap(), StatusCode::NO_CONTENT);
    }
    for t in tasks {
        t.await.unwrap();
    }
    let body = srv.lists(&id).await;
    assert_eq!(body["version"], 10);
    assert_valid(&body, &titles[..10].iter().copied().collect());
    let stored = KnowledgeBase::profiles(&desk_kb()).load(&id).unwrap();
    assert_eq!(stored.profile.ratings().len(), 10);
}

#[tokio::test]
async fn scripted_session_flow() {
    let srv = start(&desk_kb()).await;
    let started = Instant::now();
    let titles: Vec<AnimeId> = srv.state.engine().catalog().titles().iter().map(|t| t.anime_id).collect();
    let id = srv.session(24, "female").await;
    let mut rated = HashSet::new();
    for (i, &t) in titles.iter().step_by(11).take(5).enumerate() {
        assert_eq!(srv.rate(&id, t, [9, 8, 3, 10, 6][i]).await, StatusCode::NO_CONTENT);
        rated.insert(t);
    }
    let before = srv.lists(&id).await;
    assert_valid(&before, &rated);
    for (i, &t) in titles.iter().skip(5).step_by(23).take(2).enumerate() {
        assert_eq!(srv.rate(&id, t, [2, 9][i]).await, StatusCode::NO_CONTENT);
        rated.insert(t);
    }
    let after = srv.lists(&id).await;
    assert_valid(&after, &rated);
    assert_ne!(before, after);
    assert!(started.elapsed() < Duration::from_secs(5), "{:?}", started.elapsed());
}
