//! Central finite-difference validation of supernet gradients.
//!
//! The objective is `sum(logits)`, evaluated in f64 from f32 logits. The
//! network is exactly linear in any single weight while its activation
//! pattern (ReLU masks, max-pool argmaxes) stays fixed, so the step can be
//! large; probes whose pattern changes anywhere along the probe line cross a
//! kink and are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, Supernet, SupernetConfig, Tape, Tensor};
use crate::error::Result;
use crate::search_space::{ArchParam, OpKind, OperationSpace};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub kinks_skipped: usize,
    pub tiny_skipped: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f32,
    /// Gradients below this magnitude are not resolvable in f32 and are skipped.
    pub min_magnitude: f64,
    /// Points per side along the probe line whose activation pattern must
    /// match the unperturbed one.
    pub pattern_probes: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-1,
            min_magnitude: 1e-2,
            pattern_probes: 4,
        }
    }
}

/// Objective value and activation pattern at the current weights.
fn objective(net: &Supernet, batch: &Tensor, arch: &ArchParam) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let logits = net.forward(&mut tape, batch, arch)?;
    let value = tape.value(logits).data().iter().map(|&v| v as f64).sum();
    Ok((value, tape.activation_pattern()))
}

/// Check `wanted` randomly drawn scalars of `candidates`. Parameter values
/// are restored afterwards; gradients are left holding d sum(logits).
pub fn check<R: Rng + ?Sized>(
    net: &mut Supernet,
    batch: &Tensor,
    arch: &ArchParam,
    candidates: &[ParamId],
    wanted: usize,
    opts: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport> {
    net.zero_grad();
    let mut tape = Tape::new();
    let logits = net.forward(&mut tape, batch, arch)?;
    let loss = tape.sum(logits);
    net.backward(&tape, loss)?;
    drop(tape);

    let mut report = GradCheckReport {
        checked: 0,
        kinks_skipped: 0,
        tiny_skipped: 0,
        max_relative_error: 0.0,
    };
    let h = opts.step;
    let (base, pattern) = objective(net, batch, arch)?;
    let mut attempts = 0;
    'probe: while report.checked < wanted && attempts < 100 * wanted.max(1) {
        attempts += 1;
        let id = candidates[rng.gen_range(0..candidates.len())];
        let i = rng.gen_range(0..net.params().get(id).len());
        let analytic = net.params().grad(id)[i] as f64;
        let orig = net.params().get(id).data()[i];
        let probes = opts.pattern_probes.max(1);
        let (mut plus, mut minus) = (base, base);
        for k in 1..=probes {
            let offset = h * k as f32 / probes as f32;
            for sign in [1.0f32, -1.0] {
                net.params_mut().value_mut(id)[i] = orig + sign * offset;
                let probe = objective(net, batch, arch);
                net.params_mut().value_mut(id)[i] = orig;
                let (value, pat) = probe?;
                if pat != pattern {
                    report.kinks_skipped += 1;
                    continue 'probe;
                }
                if k == probes {
                    if sign > 0.0 { plus = value } else { minus = value }
                }
            }
        }
        let numeric = (plus - minus) / (2.0 * h as f64);
        let scale = analytic.abs().max(numeric.abs());
        if scale < opts.min_magnitude {
            report.tiny_skipped += 1;
            continue;
        }
        let rel = (analytic - numeric).abs() / scale;
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Checks one operation kind in isolation: a small 3-cell network whose
/// search space holds only `kind` and `zero` (or `zero` and `skip_connect`
/// for `zero` itself). Probes the op's own weights when it has any,
/// otherwise the whole network's, whose gradients all flow through the op.
pub fn check_op_kind(kind: OpKind, seed: u64, wanted: usize) -> Result<GradCheckReport> {
    let ops = if kind == OpKind::Zero {
        OperationSpace::new(vec![OpKind::Zero, OpKind::SkipConnect])?
    } else {
        OperationSpace::new(vec![kind, OpKind::Zero])?
    };
    let cfg = SupernetConfig {
        in_channels: 1,
        image_size: 6,
        num_classes: 3,
        channels: 2,
        num_cells: 3,
        stem_multiplier: 2,
        cell_inputs: 2,
        cell_intermediates: 2,
        ops,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Supernet::new(cfg, &mut rng)?;
    let alpha = ArchParam::random(net.topology(), net.ops(), &mut rng);
    let batch = Tensor::new(
        vec![2, 1, 6, 6],
        (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let column = net.ops().column_of(kind).expect("kind is in its own space");
    let mut own: Vec<ParamId> = Vec::new();
    for cell in 0..net.num_cells() {
        for e in 0..net.topology().num_edges() {
            own.extend_from_slice(net.op_params(cell, e, column));
        }
    }
    if own.is_empty() {
        own = net.params().ids().collect();
    }
    check(&mut net, &batch, &alpha, &own, wanted, GradCheckOptions::default(), &mut rng)
}
