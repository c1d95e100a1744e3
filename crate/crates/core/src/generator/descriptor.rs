use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric-CNN batch size by map resolution, for the 16-layer 1024² model.
pub fn default_batch_size(resolution: usize) -> usize {
    match resolution {
        0..=32 => 500,
        64 => 200,
        128 => 80,
        256 => 50,
        512 => 20,
        _ => 10,
    }
}

/// Number of stride-2 blocks that take a `resolution²` map down to 4×4.
pub fn cnn_depth_for(resolution: usize) -> Option<usize> {
    if resolution < 4 || !resolution.is_power_of_two() {
        return None;
    }
    Some(resolution.trailing_zeros() as usize - 2)
}

/// Shape of one generator layer as seen by the analysis pipeline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    /// 1-based layer index.
    pub index: usize,
    /// Square activation map side length.
    pub resolution: usize,
    pub feature_count: usize,
    pub cluster_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnn_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl LayerDescriptor {
    pub fn new(index: usize, resolution: usize, feature_count: usize, cluster_count: usize) -> Self {
        LayerDescriptor {
            index,
            resolution,
            feature_count,
            cluster_count,
            cnn_depth: cnn_depth_for(resolution),
            batch_size: Some(default_batch_size(resolution)),
        }
    }

    /// `log2(resolution) − 2`.
    pub fn depth(&self) -> usize {
        cnn_depth_for(self.resolution).unwrap_or(0)
    }

    pub fn batch(&self) -> usize {
        self.batch_size.unwrap_or_else(|| default_batch_size(self.resolution))
    }

    pub fn map_shape(&self) -> [usize; 3] {
        [self.feature_count, self.resolution, self.resolution]
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDescriptor(format!("layer {}: {msg}", self.index)));
        let Some(depth) = cnn_depth_for(self.resolution) else {
            return bad(format!("resolution {} is not a power of two ≥ 4", self.resolution));
        };
        if let Some(d) = self.cnn_depth {
            if d != depth {
                return bad(format!(
                    "cnn_depth {d} does not match log2({}) − 2 = {depth}",
                    self.resolution
                ));
            }
        }
        if self.feature_count == 0 {
            return bad("feature_count must be positive".into());
        }
        if self.cluster_count == 0 {
            return bad("cluster_count must be positive".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

fn default_latent_dim() -> usize {
    512
}

fn default_output_channels() -> usize {
    3
}

/// Per-layer shape of a generator; serialized as `descriptor.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_output_channels")]
    pub output_channels: usize,
    pub layers: Vec<LayerDescriptor>,
}

impl ModelDescriptor {
    /// The 4-layer desk-scale model: 8/16/32/64 px, 16/16/8/8 features,
    /// 3 clusters each.
    pub fn toy() -> Self {
        ModelDescriptor {
            latent_dim: 32,
            output_channels: 3,
            layers: vec![
                LayerDescriptor::new(1, 8, 16, 3),
                LayerDescriptor::new(2, 16, 16, 3),
                LayerDescriptor::new(3, 32, 8, 3),
                LayerDescriptor::new(4, 64, 8, 3),
            ],
        }
    }

    /// The 16-layer 1024×1024 StyleGAN2 layout used for FFHQ.
    pub fn stylegan2_1024() -> Self {
        let rows: [(usize, usize, usize); 16] = [
            (8, 512, 5),
            (8, 512, 5),
            (16, 512, 5),
            (16, 512, 5),
            (32, 512, 5),
            (32, 512, 5),
            (64, 512, 5),
            (64, 512, 5),
            (128, 256, 4),
            (128, 256, 4),
            (256, 128, 4),
            (256, 128, 4),
            (512, 64, 3),
            (512, 64, 3),
            (1024, 32, 3),
            (1024, 32, 3),
        ];
        ModelDescriptor {
            latent_dim: 512,
            output_channels: 3,
            layers: rows
                .iter()
                .enumerate()
                .map(|(i, &(r, f, k))| LayerDescriptor::new(i + 1, r, f, k))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidDescriptor("no layers".into()));
        }
        if self.latent_dim == 0 || self.output_channels == 0 {
            return Err(Error::InvalidDescriptor(
                "latent_dim and output_channels must be positive".into(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.index != i + 1 {
                return Err(Error::InvalidDescriptor(format!(
                    "layer indices must run 1..{} in order; position {} has index {}",
                    self.layers.len(),
                    i + 1,
                    l.index
                )));
            }
            l.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[1].resolution < pair[0].resolution {
                return Err(Error::InvalidDescriptor(format!(
                    "resolution decreases from layer {} ({}) to layer {} ({})",
                    pair[0].index, pair[0].resolution, pair[1].index, pair[1].resolution
                )));
            }
        }
        Ok(())
    }

    pub fn layer(&self, index: usize) -> Option<&LayerDescriptor> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn final_resolution(&self) -> usize {
        self.layers.last().map_or(0, |l| l.resolution)
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.cluster_count).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let d: ModelDescriptor = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_schedule() {
        assert_eq!(cnn_depth_for(8), Some(1));
        assert_eq!(cnn_depth_for(64), Some(4));
        assert_eq!(cnn_depth_for(1024), Some(8));
        assert_eq!(cnn_depth_for(12), None);
        assert_eq!(cnn_depth_for(2), None);
    }

    #[test]
    fn stylegan_layout() {
        let d = ModelDescriptor::stylegan2_1024();
        d.validate().unwrap();
        assert_eq!(d.cluster_counts(), [5, 5, 5, 5, 5, 5, 5, 5, 4, 4, 4, 4, 3, 3, 3, 3]);
        let depths: Vec<usize> = d.layers.iter().map(|l| l.depth()).collect();
        assert_eq!(depths, [1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8]);
        let batches: Vec<usize> = d.layers.iter().map(|l| l.batch()).collect();
        assert_eq!(batches, [500, 500, 500, 500, 500, 500, 200, 200, 80, 80, 50, 50, 20, 20, 10, 10]);
    }

    #[test]
    fn minimal_sidecar_parses() {
        let text = r#"{"layers": [
            {"index": 1, "resolution": 8, "feature_count": 4, "cluster_count": 2},
            {"index": 2, "resolution": 16, "feature_count": 4, "cluster_count": 2}
        ]}"#;
        let d = ModelDescriptor::from_json(text, Path::new("descriptor.json")).unwrap();
        assert_eq!(d.latent_dim, 512);
        assert_eq!(d.layers[1].depth(), 2);
    }

    #[test]
    fn invalid_descriptors() {
        let mut d = ModelDescriptor::toy();
        d.layers[2].index = 7;
        assert!(d.validate().is_err());
        let mut d = ModelDescriptor::toy();
        d.layers[1].resolution = 24;
        assert!(d.validate().is_err());
        let mut d = ModelDescriptor::toy();
        d.layers.swap(0, 1);
        d.layers[0].index = 1;
        d.layers[1].index = 2;
        assert!(d.validate().unwrap_err().to_string().contains("decreases"));
        let mut d = ModelDescriptor::toy();
        d.layers[0].cnn_depth = Some(3);
        assert!(d.validate().is_err());
    }
}
