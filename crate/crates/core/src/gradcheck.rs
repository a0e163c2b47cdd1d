//! Central-difference verification of every hand-written backward pass.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::layers::{
    bn_backward, bn_forward_train, dropout_backward, dropout_forward, dropout_mask, linear_backward, linear_forward,
    relu_backward, relu_forward,
};
use crate::model::{mse_loss, Mode, Network, NetworkConfig};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckOptions {
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub batch: usize,
    pub n_in_joints: usize,
    pub n_out_joints: usize,
    pub keep_prob: f64,
    /// Central-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub threshold: f64,
    /// Relative errors divide by `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            hidden_dim: 8,
            n_blocks: 1,
            batch: 4,
            n_in_joints: 16,
            n_out_joints: 16,
            keep_prob: 0.5,
            step: 1e-5,
            threshold: 1e-4,
            floor: 1e-6,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub n_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradEntry>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.threshold
    }
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Tally<'a> {
    opts: &'a GradcheckOptions,
    worst: f64,
    n: usize,
}

impl<'a> Tally<'a> {
    fn new(opts: &'a GradcheckOptions) -> Self {
        Self { opts, worst: 0.0, n: 0 }
    }

    /// Compares `analytic[i]` with the central difference of `f` in the
    /// `i`-th entry of `values`.
    fn check(&mut self, values: &mut [f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> Result<f64>) -> Result<()> {
        let h = self.opts.step;
        for i in 0..values.len() {
            let orig = values[i];
            values[i] = orig + h;
            let up = f(values)?;
            values[i] = orig - h;
            let down = f(values)?;
            values[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            self.worst = self.worst.max(rel_error(analytic[i], numeric, self.opts.floor));
            self.n += 1;
        }
        Ok(())
    }

    fn entry(self, name: &str) -> GradEntry {
        GradEntry {
            name: name.into(),
            max_rel_error: self.worst,
            n_checked: self.n,
        }
    }
}

/// Weighted sum `Σ y ⊙ r`: its upstream gradient is exactly `r`.
fn probe(y: &Matrix, r: &Matrix) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn check_linear(opts: &GradcheckOptions, rng: &mut Rng) -> Result<GradEntry> {
    let (n, i, o) = (opts.batch, opts.hidden_dim + 3, opts.hidden_dim);
    let mut x = rng.gauss_matrix(0.0, 1.0, n, i)?;
    let mut w = rng.gauss_matrix(0.0, 0.5, o, i)?;
    let mut b = rng.gauss_matrix(0.0, 0.5, 1, o)?.into_data();
    let r = rng.gauss_matrix(0.0, 1.0, n, o)?;
    let (dw, db, dx) = linear_backward(&x, &w, &r)?;
    let mut t = Tally::new(opts);
    {
        let (x0, b0) = (x.clone(), b.clone());
        t.check(w.data_mut(), dw.data(), &mut |v| {
            let w = Matrix::new(o, i, v.to_vec())?;
            Ok(probe(&linear_forward(&x0, &w, &b0)?, &r))
        })?;
    }
    {
        let (x0, w0) = (x.clone(), w.clone());
        t.check(&mut b, &db, &mut |v| Ok(probe(&linear_forward(&x0, &w0, v)?, &r)))?;
    }
    t.check(x.data_mut(), dx.data(), &mut |v| {
        Ok(probe(&linear_forward(&Matrix::new(n, i, v.to_vec())?, &w, &b)?, &r))
    })?;
    Ok(t.entry("linear"))
}

fn check_batch_norm(opts: &GradcheckOptions, rng: &mut Rng) -> Result<GradEntry> {
    let (n, d, eps) = (opts.batch, opts.hidden_dim, 1e-5);
    let mut x = rng.gauss_matrix(0.5, 2.0, n, d)?;
    let mut gamma = rng.gauss_matrix(1.0, 0.3, 1, d)?.into_data();
    let mut beta = rng.gauss_matrix(0.0, 0.3, 1, d)?.into_data();
    let r = rng.gauss_matrix(0.0, 1.0, n, d)?;
    let (_, cache, _, _) = bn_forward_train(&x, &gamma, &beta, eps)?;
    let (dx, dgamma, dbeta) = bn_backward(&cache, &gamma, &r)?;
    let mut t = Tally::new(opts);
    {
        let (x0, b0) = (x.clone(), beta.clone());
        t.check(&mut gamma, &dgamma, &mut |v| {
            Ok(probe(&bn_forward_train(&x0, v, &b0, eps)?.0, &r))
        })?;
    }
    {
        let (x0, g0) = (x.clone(), gamma.clone());
        t.check(&mut beta, &dbeta, &mut |v| {
            Ok(probe(&bn_forward_train(&x0, &g0, v, eps)?.0, &r))
        })?;
    }
    t.check(x.data_mut(), dx.data(), &mut |v| {
        Ok(probe(
            &bn_forward_train(&Matrix::new(n, d, v.to_vec())?, &gamma, &beta, eps)?.0,
            &r,
        ))
    })?;
    Ok(t.entry("batch_norm"))
}

fn check_dropout(opts: &GradcheckOptions, rng: &mut Rng) -> Result<GradEntry> {
    let (n, d) = (opts.batch, opts.hidden_dim);
    let mut x = rng.gauss_matrix(0.0, 1.0, n, d)?;
    let mask = dropout_mask(rng, opts.keep_prob, n, d);
    let r = rng.gauss_matrix(0.0, 1.0, n, d)?;
    let dx = dropout_backward(&mask, &r)?;
    let mut t = Tally::new(opts);
    t.check(x.data_mut(), dx.data(), &mut |v| {
        Ok(probe(&dropout_forward(&Matrix::new(n, d, v.to_vec())?, &mask)?, &r))
    })?;
    Ok(t.entry("dropout"))
}

fn check_relu(opts: &GradcheckOptions, rng: &mut Rng) -> Result<GradEntry> {
    let (n, d) = (opts.batch, opts.hidden_dim);
    // keep every input well away from the kink at 0
    let mut x = Matrix::from_fn(n, d, |_, _| {
        let m = rng.uniform_range(0.1, 2.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    });
    let r = rng.gauss_matrix(0.0, 1.0, n, d)?;
    let dx = relu_backward(&relu_forward(&x), &r);
    let mut t = Tally::new(opts);
    t.check(x.data_mut(), dx.data(), &mut |v| {
        Ok(probe(&relu_forward(&Matrix::new(n, d, v.to_vec())?), &r))
    })?;
    Ok(t.entry("relu"))
}

fn check_mse(opts: &GradcheckOptions, rng: &mut Rng) -> Result<GradEntry> {
    let (n, d) = (opts.batch, 3 * opts.n_out_joints);
    let mut p = rng.gauss_matrix(0.0, 1.0, n, d)?;
    let y = rng.gauss_matrix(0.0, 1.0, n, d)?;
    let (_, g) = mse_loss(&p, &y)?;
    let mut t = Tally::new(opts);
    t.check(p.data_mut(), g.data(), &mut |v| {
        Ok(mse_loss(&Matrix::new(n, d, v.to_vec())?, &y)?.0)
    })?;
    Ok(t.entry("mse_loss"))
}

/// Whole-network check with batch-norm statistics and dropout masks frozen,
/// so the loss is a smooth deterministic function of every parameter.
fn check_network(opts: &GradcheckOptions, rng: &mut Rng) -> Result<Vec<GradEntry>> {
    let cfg = NetworkConfig {
        n_in_joints: opts.n_in_joints,
        n_out_joints: opts.n_out_joints,
        hidden_dim: opts.hidden_dim,
        n_blocks: opts.n_blocks,
        keep_prob: opts.keep_prob,
        ..NetworkConfig::default()
    };
    let mut net = Network::new(cfg.clone(), rng)?;
    for u in net.units_mut() {
        if let Some(bn) = &mut u.bn {
            for (g, b) in bn.gamma.iter_mut().zip(bn.beta.iter_mut()) {
                *g = rng.uniform_range(0.5, 1.5);
                *b = rng.uniform_range(-0.3, 0.3);
            }
            for (m, v) in bn.running_mean.iter_mut().zip(bn.running_var.iter_mut()) {
                *m = rng.normal(0.0, 0.2);
                *v = rng.uniform_range(0.5, 2.0);
            }
        }
    }
    for l in net.linear_layers_mut() {
        l.bias.iter_mut().for_each(|b| *b = rng.normal(0.0, 0.1));
    }
    net.freeze_batch_norm(true);
    net.freeze_dropout(opts.batch, rng);

    let n = opts.batch;
    let mut x = rng.gauss_matrix(0.0, 1.0, n, cfg.input_dim())?;
    let y = rng.gauss_matrix(0.0, 1.0, n, cfg.output_dim())?;
    let pred = net.forward(&x, Mode::Train)?;
    let (_, g) = mse_loss(&pred, &y)?;
    let dx = net.backward(&g)?;
    let analytic: Vec<(String, Vec<f64>)> = net
        .params_mut()
        .iter()
        .map(|s| (s.name.clone(), s.grad.to_vec()))
        .collect();

    let mut entries = Vec::new();
    for (slot, (name, grad)) in analytic.iter().enumerate() {
        let mut values = net.params_mut()[slot].value.to_vec();
        let mut t = Tally::new(opts);
        t.check(&mut values, grad, &mut |v| {
            net.params_mut()[slot].value.copy_from_slice(v);
            let p = net.forward(&x, Mode::Train)?;
            Ok(mse_loss(&p, &y)?.0)
        })?;
        net.params_mut()[slot].value.copy_from_slice(&values);
        entries.push(t.entry(&format!("network:{name}")));
    }
    let mut t = Tally::new(opts);
    t.check(x.data_mut(), dx.data(), &mut |v| {
        let p = net.forward(&Matrix::new(n, cfg.input_dim(), v.to_vec())?, Mode::Train)?;
        Ok(mse_loss(&p, &y)?.0)
    })?;
    entries.push(t.entry("network:input"));
    Ok(entries)
}

/// Runs the per-layer checks (batch norm on live batch statistics) and the
/// composed-network check.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let base = Rng::new(opts.seed);
    let mut entries = vec![
        check_linear(opts, &mut base.child(1))?,
        check_batch_norm(opts, &mut base.child(2))?,
        check_dropout(opts, &mut base.child(3))?,
        check_relu(opts, &mut base.child(4))?,
        check_mse(opts, &mut base.child(5))?,
    ];
    entries.extend(check_network(opts, &mut base.child(6))?);
    Ok(GradcheckReport {
        entries,
        threshold: opts.threshold,
    })
}
