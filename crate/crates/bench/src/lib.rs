//! Fixtures shared by the benchmarks.

use boxtip::boxmodel::{Trajectory, Variant, DEFAULT_SIGMA, DEFAULT_STEPS};
use boxtip::dataset::WindowedExample;
use boxtip::dataset::{
    build_dataset, generate_trajectories, trajectory_name, CollapseFilter, Dataset, Mode, Splits,
    WindowGeometry,
};
use boxtip::ensemble::ParamBounds;
use boxtip::tft::{Batch, ModelMeta, Preset, TftConfig, TftModel};
use ndarray::Array2;

/// Deterministic pseudo-random matrix without an RNG dependency.
pub fn pattern(rows: usize, cols: usize, salt: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        ((i * 31 + j * 17 + salt * 7) % 23) as f64 / 23.0 - 0.5
    })
}

/// Four simulated trajectories windowed with the variant's geometry.
pub fn small_dataset(variant: Variant) -> (ParamBounds, Dataset) {
    let bounds = ParamBounds::defaults(variant, 1);
    let trajs: Vec<Trajectory> = generate_trajectories(&bounds, 4, DEFAULT_SIGMA, 2, DEFAULT_STEPS)
        .expect("bounds")
        .into_iter()
        .collect::<Result<_, _>>()
        .expect("simulation");
    let names: Vec<String> = (0..trajs.len()).map(trajectory_name).collect();
    let splits = Splits {
        train: vec![0, 1],
        val: vec![2],
        test: vec![3],
    };
    let ds = build_dataset(
        &names,
        &trajs,
        &bounds.names(),
        splits,
        WindowGeometry::for_variant(variant),
        Mode::Stochastic,
        CollapseFilter::All,
    )
    .expect("dataset");
    (bounds, ds)
}

/// Untrained network of `preset` size and one batch of training windows.
pub fn model_and_batch(preset: Preset, variant: Variant, batch: usize) -> (TftModel, Batch) {
    let (bounds, ds) = small_dataset(variant);
    let cfg = TftConfig::preset(preset, variant, Mode::Stochastic, bounds.names().len());
    let model = TftModel::new(cfg, ModelMeta::from_manifest(&ds.manifest)).expect("model");
    let refs: Vec<&WindowedExample> = ds.train.iter().cycle().take(batch).collect();
    let b = Batch::from_examples(&refs, &model.config).expect("batch");
    (model, b)
}
