//! Fixtures shared by the benchmarks.

use drcdt::synthetic::smooth_texture;
use drcdt::{FeatureConfig, FeatureExtractor, GrayImage, Interval, RankRule, Result, TrainedModel};

/// Seeded texture in `[10, 200]`.
pub fn texture(seed: u64, height: usize, width: usize) -> GrayImage {
    smooth_texture(
        seed,
        height,
        width,
        Interval::new(10.0, 200.0).expect("valid range"),
    )
    .expect("valid dimensions")
}

/// One training image per class, labels `c00`, `c01`, ...
pub fn synthetic_model(
    classes: usize,
    config: FeatureConfig,
) -> Result<(FeatureExtractor, TrainedModel)> {
    let ex = FeatureExtractor::new(config.clone())?;
    let train = (0..classes)
        .map(|c| {
            Ok((
                format!("c{c:02}"),
                ex.extract(&texture(c as u64, config.height, config.width))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = drcdt::train_model(&train, RankRule::default())?;
    Ok((ex, model))
}
