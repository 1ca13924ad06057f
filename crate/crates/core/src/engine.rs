//! Live recommendation over a loaded knowledge base.

use crate::autonet::predict_ratings;
use crate::dataset::{RatingMatrix, DEMOGRAPHIC_COLUMNS};
use crate::hybridfilter::{annotate, recommend, Catalog, FilterConfig, Recommendations, UserProfile};
use crate::knowledgebase::{KnowledgeBase, PrimaryModel};
use crate::pipeline::PipelineError;
use crate::spectral::ClusterModel;

/// Read-only bundle of catalog, rating model and clusters; shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct Recommender {
    catalog: Catalog,
    primary: PrimaryModel,
    layout: RatingMatrix,
    clusters: ClusterModel,
    /// Model output column of each catalog title, if it has one.
    columns: Vec<Option<usize>>,
    pub config: FilterConfig,
}

impl Recommender {
    /// Needs the rating model, clusters and opposites.
    pub fn from_kb(kb: &KnowledgeBase) -> Result<Self, PipelineError> {
        let primary = kb
            .primary
            .clone()
            .ok_or_else(|| PipelineError::Stage("knowledge base has no rating model; run train-primary".into()))?;
        let clusters = kb
            .clusters
            .clone()
            .ok_or_else(|| PipelineError::Stage("knowledge base has no clusters; run cluster".into()))?;
        if !clusters.has_opposites() {
            return Err(PipelineError::Stage("clusters have no opposites; run opposites".into()));
        }
        let catalog = kb.catalog_view();
        let layout = primary.column_layout();
        let columns = catalog
            .titles()
            .iter()
            .map(|t| layout.column_of(t.anime_id))
            .collect();
        Ok(Self {
            catalog,
            primary,
            layout,
            clusters,
            columns,
            config: FilterConfig::default(),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn clusters(&self) -> &ClusterModel {
        &self.clusters
    }

    /// Predicted rating of every catalog title, in catalog order. Titles the
    /// model has no column for get 0.
    pub fn predict(&self, profile: &UserProfile) -> Vec<f32> {
        let row = profile.input_row(&self.layout);
        let out = predict_ratings(&self.primary.model, &row).expect("input row matches model width");
        self.columns
            .iter()
            .map(|c| c.map_or(0.0, |c| out[DEMOGRAPHIC_COLUMNS + c]))
            .collect()
    }

    /// Both lists for `profile` given [`Recommender::predict`] output.
    /// Cold-start picks are annotated with predictions and clusters too.
    pub fn recommend_with(&self, profile: &UserProfile, predictions: &[f32]) -> Recommendations {
        let mut recs = recommend(profile, &self.catalog, predictions, &self.clusters, &self.config);
        if recs.cold_start {
            annotate(&mut recs, &self.catalog, predictions, &self.clusters);
        }
        recs
    }

    pub fn recommend(&self, profile: &UserProfile) -> Recommendations {
        self.recommend_with(profile, &self.predict(profile))
    }
}
