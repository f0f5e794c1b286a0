mod common;

use common::{check_all, random_batch, randomize_tables};
use earth4d::regressor::{HeadConfig, Model, ModelConfig};
use earth4d::{Earth4DConfig, GridConfig, ProbeConfig, ProbeMode};

fn tiny(probing: bool) -> ModelConfig {
    ModelConfig {
        encoder: Earth4DConfig {
            grid: GridConfig {
                num_levels: 3,
                log2_table_size: 6,
                base_resolution_log2: 1,
                probing: probing.then(|| ProbeConfig { num_probes: 4, log2_probe_table_size: 4, ..ProbeConfig::default() }),
                ..GridConfig::default()
            },
            overrides: None,
        },
        head: HeadConfig { species_dim: 3, hidden: vec![7, 5], ..HeadConfig::default() },
        ..ModelConfig::default()
    }
}

fn names() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

#[test]
fn every_parameter_matches_finite_differences_in_soft_mode() {
    for seed in 0..3 {
        let mut model: Model<f64> = Model::new(tiny(true), &names(), seed).unwrap();
        randomize_tables(&mut model, seed);
        let r = check_all(&model, &random_batch(seed, 6, 3), ProbeMode::Soft, 1e-6);
        assert!(r.checked > 200, "only {} entries checked", r.checked);
        assert!(r.worst.0 < 1e-6, "{:?}", r.worst);
    }
}

#[test]
fn hard_mode_leaves_logits_without_gradient() {
    let mut model: Model<f64> = Model::new(tiny(true), &names(), 4).unwrap();
    randomize_tables(&mut model, 4);
    let batch = random_batch(4, 6, 3);
    let r = check_all(&model, &batch, ProbeMode::Hard, 1e-6);
    assert!(r.worst.0 < 1e-6, "{:?}", r.worst);
    model.zero_grad();
    model.accumulate_gradients(earth4d::Execution::Sequential, &batch, ProbeMode::Hard);
    for grid in &model.encoder.grids {
        for p in grid.probes.iter().flatten() {
            assert!(p.params.grad.iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn per_grid_overrides_are_differentiated() {
    let mut cfg = tiny(false);
    let g = cfg.encoder.grid.clone();
    cfg.encoder.overrides = Some([
        g.clone(),
        GridConfig { num_levels: 2, feature_dim: 3, ..g.clone() },
        GridConfig { log2_table_size: 4, ..g.clone() },
        GridConfig { probing: Some(ProbeConfig { num_probes: 2, log2_probe_table_size: 3, ..ProbeConfig::default() }), ..g },
    ]);
    let mut model: Model<f64> = Model::new(cfg, &names(), 8).unwrap();
    randomize_tables(&mut model, 8);
    let r = check_all(&model, &random_batch(8, 5, 3), ProbeMode::Soft, 1e-6);
    assert!(r.checked > 100);
    assert!(r.worst.0 < 1e-6, "{:?}", r.worst);
}

#[test]
fn float32_gradients_track_the_float64_reference() {
    let mut reference: Model<f64> = Model::new(tiny(true), &names(), 11).unwrap();
    randomize_tables(&mut reference, 11);
    let mut single: Model<f32> = reference.cast();
    let reference: Model<f64> = single.cast();
    let batch = random_batch(11, 8, 3);
    let mut double = reference.clone();
    double.accumulate_gradients(earth4d::Execution::Sequential, &batch, ProbeMode::Soft);
    single.accumulate_gradients(earth4d::Execution::Sequential, &batch, ProbeMode::Soft);
    for ((_, name, a), (_, _, b)) in single.param_buffers().into_iter().zip(double.param_buffers()) {
        let scale = b.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((*x as f64 - y).abs() <= 1e-5 * scale.max(1e-3), "{name}: {x} vs {y}");
        }
    }
}
