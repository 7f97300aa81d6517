//! End-to-end evaluation over a set of compositing tuples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::CompositeExample;
use crate::diffusion::{sample_composite, NoisePredictor, NoiseSchedule, SampleRequest};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::crop::{crop_to_object, CROP_MARGIN};
use crate::eval::features::{cosine_score, feature_stats, Embedder};
use crate::eval::fid::fid;
use crate::image::{read_file, write_file, ImageBuffer};
use crate::scalar::Scalar;
use crate::training::derive_seed;

/// Produces a full-frame composite for one tuple.
pub trait Compositor<T> {
    fn compose(&self, example: &CompositeExample<T>, seed: u64) -> Result<ImageBuffer<T>>;
}

/// Samples composites from a trained denoiser and encoder.
pub struct ModelCompositor<'a, T, M> {
    pub model: &'a M,
    pub encoder: &'a Encoder<T>,
    pub schedule: &'a NoiseSchedule,
    pub steps: usize,
    pub cfg_scale: f64,
}

impl<T: Scalar, M: NoisePredictor<T>> Compositor<T> for ModelCompositor<'_, T, M> {
    fn compose(&self, ex: &CompositeExample<T>, seed: u64) -> Result<ImageBuffer<T>> {
        let mut req = SampleRequest::new(ex.background.clone(), ex.mask.clone(), ex.object_image.clone());
        req.object_mask = Some(ex.object_mask.clone());
        req.steps = self.steps;
        req.cfg_scale = self.cfg_scale;
        req.seed = seed;
        sample_composite(&req, self.model, self.encoder, self.schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    /// `100 * cos` between generated and reference crop embeddings.
    pub similarity: f64,
    /// `(100 - similarity) / 100`; a learned perceptual distance stand-in.
    pub distance_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_similarity: f64,
    pub mean_distance_proxy: f64,
    pub fid: f64,
    /// Fewer crops than feature dimensions + 1 on either side.
    pub fid_low_sample: bool,
    #[serde(default)]
    pub silhouette: Option<f64>,
    pub similarity_extractor: String,
    pub fid_extractor: String,
    pub crop_size: usize,
    pub crop_margin: f64,
    pub seed: u64,
}

impl EvalReport {
    /// Means recomputed from `rows`.
    pub fn recomputed_means(&self) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        (
            self.rows.iter().map(|r| r.similarity).sum::<f64>() / n,
            self.rows.iter().map(|r| r.distance_proxy).sum::<f64>() / n,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("eval report: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:>6}  {:>10}  {:>10}\n", "pair", "similarity", "dist-proxy"));
        for r in &self.rows {
            s.push_str(&format!("{:>6}  {:>10.4}  {:>10.4}\n", r.index, r.similarity, r.distance_proxy));
        }
        s.push_str(&format!("{:>6}  {:>10.4}  {:>10.4}\n", "mean", self.mean_similarity, self.mean_distance_proxy));
        s.push_str(&format!(
            "fid {:.6}{}  [{} / {}; crop {}]\n",
            self.fid,
            if self.fid_low_sample { " (low sample)" } else { "" },
            self.similarity_extractor,
            self.fid_extractor,
            self.crop_size
        ));
        if let Some(sil) = self.silhouette {
            s.push_str(&format!("silhouette {sil:.4}\n"));
        }
        s
    }
}

/// Composites every tuple, crops generated and target images around the
/// coarse mask, and scores similarity per pair and FID across the sets.
pub fn evaluate_run<T: Scalar, C: Compositor<T> + ?Sized>(
    compositor: &C,
    examples: &[CompositeExample<T>],
    similarity_extractor: &dyn Embedder<T>,
    fid_extractor: &dyn Embedder<T>,
    seed: u64,
) -> Result<EvalReport> {
    if examples.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 test tuples, got {}", examples.len())));
    }
    let crop_size = similarity_extractor.input_size();
    let mut rows = Vec::with_capacity(examples.len());
    let mut generated_crops = Vec::with_capacity(examples.len());
    let mut reference_crops = Vec::with_capacity(examples.len());
    for (index, ex) in examples.iter().enumerate() {
        let out = compositor.compose(ex, derive_seed(seed, &[index as u64]))?;
        let gen = crop_to_object(&out, &ex.mask, crop_size)?;
        let reference = crop_to_object(&ex.target, &ex.mask, crop_size)?;
        let similarity = cosine_score(&similarity_extractor.embed(&gen)?, &similarity_extractor.embed(&reference)?)?;
        rows.push(EvalRow {
            index,
            similarity,
            distance_proxy: (100.0 - similarity) / 100.0,
        });
        generated_crops.push(gen);
        reference_crops.push(reference);
    }
    let a = feature_stats(&generated_crops, fid_extractor)?;
    let b = feature_stats(&reference_crops, fid_extractor)?;
    let mut report = EvalReport {
        rows,
        mean_similarity: 0.0,
        mean_distance_proxy: 0.0,
        fid: fid(&a, &b)?,
        fid_low_sample: a.is_low_sample() || b.is_low_sample(),
        silhouette: None,
        similarity_extractor: similarity_extractor.id(),
        fid_extractor: fid_extractor.id(),
        crop_size,
        crop_margin: CROP_MARGIN,
        seed,
    };
    (report.mean_similarity, report.mean_distance_proxy) = report.recomputed_means();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, SyntheticConfig};
    use crate::eval::features::RandomConvFeatures;
    use crate::training::{ExampleSource, ScenePairs};

    struct TargetStub;

    impl Compositor<f64> for TargetStub {
        fn compose(&self, ex: &CompositeExample<f64>, _seed: u64) -> Result<ImageBuffer<f64>> {
            Ok(ex.target.clone())
        }
    }

    #[test]
    fn oracle_compositor_scores_perfectly() {
        let cfg = SyntheticConfig {
            objects: 4,
            views_per_object: 3,
            frames_per_scene: 8,
            image_size: 32,
            seed: 5,
        };
        let ds = Dataset::<f64>::synthesize(&cfg).unwrap();
        let src = ScenePairs::new(&ds, 7, 0.5).unwrap();
        let examples: Vec<_> = (0..src.len()).map(|i| src.example(i, i as u64).unwrap()).collect();
        let feats = RandomConvFeatures::new(16, 0).unwrap();
        let report = evaluate_run(&TargetStub, &examples, &feats, &feats, 9).unwrap();
        assert!(report.rows.iter().all(|r| (r.similarity - 100.0).abs() < 1e-9));
        assert!(report.fid.abs() < 1e-8);
        assert!(report.fid_low_sample);
        assert_eq!(report.recomputed_means(), (report.mean_similarity, report.mean_distance_proxy));
        let again = evaluate_run(&TargetStub, &examples, &feats, &feats, 9).unwrap();
        assert_eq!(EvalReport::from_json(&report.to_json().unwrap()).unwrap(), again);
        assert!(report.to_table().contains("low sample"));
    }
}
