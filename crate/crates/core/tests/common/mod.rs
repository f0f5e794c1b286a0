//! Finite-difference gradient checking shared by the integration tests.

use earth4d::regressor::{Model, PreparedSample};
use earth4d::{Execution, ProbeMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradCheck {
    pub checked: usize,
    pub skipped_at_kinks: usize,
    /// Largest relative error and the buffer it came from.
    pub worst: (f64, String),
}

/// Compares every non-zero analytic gradient entry of `model` against a
/// central difference with step `h`. Entries whose one-sided differences
/// disagree by more than 1% sit on a rectifier kink and are skipped. The
/// error is relative with a floor of 1e-3, since central differences carry
/// about 1e-10 of absolute roundoff at unit loss.
pub fn check_all(model: &Model<f64>, batch: &[PreparedSample], mode: ProbeMode, h: f64) -> GradCheck {
    let mut analytic = model.clone();
    analytic.zero_grad();
    analytic.accumulate_gradients(Execution::Sequential, batch, mode);
    let grads: Vec<(String, Vec<f64>)> = analytic
        .param_buffers()
        .into_iter()
        .map(|(_, name, p)| (name, p.grad.clone()))
        .collect();

    let mut probe = model.clone();
    let mut out = GradCheck { checked: 0, skipped_at_kinks: 0, worst: (0.0, String::new()) };
    for (bi, (name, g)) in grads.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let theta = probe.param_buffers()[bi].2.values[i];
            let mut loss_at = |x: f64| {
                probe.param_buffers_mut()[bi].2.values[i] = x;
                probe.batch_loss(batch, mode)
            };
            let (up, down, mid) = (loss_at(theta + h), loss_at(theta - h), loss_at(theta));
            let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
            if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) {
                out.skipped_at_kinks += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > out.worst.0 {
                out.worst = (rel, format!("{name}[{i}]"));
            }
            out.checked += 1;
        }
    }
    out
}

pub fn random_batch(seed: u64, n: usize, species: usize) -> Vec<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| PreparedSample {
            q: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            species: rng.gen_range(0..species),
            target: rng.gen_range(-1.0..1.0),
        })
        .collect()
}

/// Spreads features and logits so every gradient path is exercised.
pub fn randomize_tables(model: &mut Model<f64>, seed: u64) {
    use earth4d::regressor::ParamGroup;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (group, _, buf) in model.param_buffers_mut() {
        let r = match group {
            ParamGroup::Features => 1.0,
            ParamGroup::Probes => 2.0,
            _ => continue,
        };
        buf.values.iter_mut().for_each(|v| *v = rng.gen_range(-r..r));
    }
}
