use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{dropout_mask, relu_backward, relu_forward, BatchNorm, Dropout, Linear, Mode};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Joints in the 2d input; the input width is twice this.
    pub n_in_joints: usize,
    /// Joints in the 3d output (root excluded); the output width is three times this.
    pub n_out_joints: usize,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    /// Dropout keep probability; 1 disables dropout.
    pub keep_prob: f64,
    pub batch_norm: bool,
    pub residual: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_in_joints: 16,
            n_out_joints: 16,
            hidden_dim: 1024,
            n_blocks: 2,
            keep_prob: 0.5,
            batch_norm: true,
            residual: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn input_dim(&self) -> usize {
        2 * self.n_in_joints
    }

    pub fn output_dim(&self) -> usize {
        3 * self.n_out_joints
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_in_joints == 0 || self.n_out_joints == 0 {
            return bad("joint counts must be positive".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be at least 1".into());
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad(format!("keep_prob {} is outside (0, 1]", self.keep_prob));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("batch norm eps must be > 0 and momentum in (0, 1]".into());
        }
        Ok(())
    }
}

/// Linear → BatchNorm → Dropout → RELU.
#[derive(Debug, Clone)]
pub struct Unit {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
    pub dropout: Dropout,
    relu_out: Option<Matrix>,
}

impl Unit {
    fn new(fan_in: usize, fan_out: usize, cfg: &NetworkConfig) -> Result<Self> {
        Ok(Self {
            linear: Linear::zeros(fan_in, fan_out),
            bn: cfg
                .batch_norm
                .then(|| BatchNorm::new(fan_out, cfg.bn_eps, cfg.bn_momentum)),
            dropout: Dropout::new(cfg.keep_prob)?,
            relu_out: None,
        })
    }

    fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
        let mut h = self.linear.forward(x, mode)?;
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, mode)?;
        }
        h = self.dropout.forward(&h, mode, rng)?;
        let out = relu_forward(&h);
        self.relu_out = (mode == Mode::Train).then(|| out.clone());
        Ok(out)
    }

    /// Eval-mode output.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.linear.predict(x)?;
        if let Some(bn) = &self.bn {
            h = bn.predict(&h);
        }
        Ok(relu_forward(&h))
    }

    fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let out = self
            .relu_out
            .as_ref()
            .ok_or_else(|| Error::State("backward without a cached train-mode forward".into()))?;
        let mut g = relu_backward(out, dy);
        g = self.dropout.backward(&g)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.linear.backward(&g)
    }

    fn clear_cache(&mut self) {
        self.relu_out = None;
        self.linear.clear_cache();
        if let Some(bn) = &mut self.bn {
            bn.clear_cache();
        }
        self.dropout.clear_cache();
    }
}

/// Two units wrapped in an identity skip (when residual): `x + F(x)`.
#[derive(Debug, Clone)]
pub struct Block {
    pub units: [Unit; 2],
    pub residual: bool,
}

impl Block {
    fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<Matrix> {
        let h = self.units[0].forward(x, mode, rng)?;
        let f = self.units[1].forward(&h, mode, rng)?;
        if self.residual {
            f.add(x)
        } else {
            Ok(f)
        }
    }

    /// Eval-mode output.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.units[1].predict(&self.units[0].predict(x)?)?;
        if self.residual {
            f.add(x)
        } else {
            Ok(f)
        }
    }

    fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let g = self.units[1].backward(dy)?;
        let g = self.units[0].backward(&g)?;
        if self.residual {
            g.add(dy)
        } else {
            Ok(g)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

/// Mutable view of one trainable tensor and its gradient.
pub struct ParamSlot<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: (usize, usize),
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// The lifting network. An input unit raises `2n_in` features to
/// `hidden_dim`; after `n_blocks` residual blocks a linear read-out gives
/// `3n_out` coordinates.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    pub input: Unit,
    pub blocks: Vec<Block>,
    pub output: Linear,
    dropout_rng: Rng,
    cached: bool,
}

impl Network {
    /// Builds a network with all linear weights zero, BN at identity.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let input = Unit::new(config.input_dim(), h, &config)?;
        let blocks = (0..config.n_blocks)
            .map(|_| {
                Ok(Block {
                    units: [Unit::new(h, h, &config)?, Unit::new(h, h, &config)?],
                    residual: config.residual,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::zeros(h, config.output_dim());
        Ok(Self {
            config,
            input,
            blocks,
            output,
            dropout_rng: Rng::new(0),
            cached: false,
        })
    }

    /// Kaiming-initialized network; the dropout stream is derived from `rng`.
    pub fn new(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for layer in net.linear_layers_mut() {
            crate::optim::kaiming_init(rng, layer);
        }
        net.dropout_rng = rng.child(0xd0d0);
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout_rng = Rng::new(seed);
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input columns (2 x {} joints), got {}",
                self.config.input_dim(),
                self.config.n_in_joints,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass. Train mode caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        self.check_input(x)?;
        self.cached = false;
        let rng = &mut self.dropout_rng;
        let mut h = self.input.forward(x, mode, rng)?;
        for block in &mut self.blocks {
            h = block.forward(&h, mode, rng)?;
        }
        let y = self.output.forward(&h, mode)?;
        self.cached = mode == Mode::Train;
        Ok(y)
    }

    /// Eval-mode forward without touching any cache; safe to share.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.input.predict(x)?;
        for block in &self.blocks {
            h = block.predict(&h)?;
        }
        self.output.predict(&h)
    }

    /// Populates every parameter gradient and returns `dL/dX`.
    pub fn backward(&mut self, d_out: &Matrix) -> Result<Matrix> {
        if !self.cached {
            return Err(Error::State("backward requires a preceding train-mode forward".into()));
        }
        let mut g = self.output.backward(d_out)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        self.input.backward(&g)
    }

    pub fn clear_cache(&mut self) {
        self.cached = false;
        self.output.clear_cache();
        for u in self.units_mut() {
            u.clear_cache();
        }
    }

    pub fn zero_grad(&mut self) {
        for u in self.units_mut() {
            u.linear.zero_grad();
            if let Some(bn) = &mut u.bn {
                bn.zero_grad();
            }
        }
        self.output.zero_grad();
    }

    pub fn units(&self) -> Vec<&Unit> {
        let mut v = vec![&self.input];
        for b in &self.blocks {
            v.extend(b.units.iter());
        }
        v
    }

    pub fn units_mut(&mut self) -> Vec<&mut Unit> {
        let mut v = vec![&mut self.input];
        for b in &mut self.blocks {
            v.extend(b.units.iter_mut());
        }
        v
    }

    fn unit_prefixes(&self) -> Vec<String> {
        let mut v = vec!["input".to_string()];
        for b in 0..self.blocks.len() {
            for u in 0..2 {
                v.push(format!("block{b}.unit{u}"));
            }
        }
        v
    }

    pub fn linear_layers(&self) -> Vec<&Linear> {
        let mut v: Vec<&Linear> = self.units().into_iter().map(|u| &u.linear).collect();
        v.push(&self.output);
        v
    }

    pub fn linear_layers_mut(&mut self) -> Vec<&mut Linear> {
        let Network {
            input, blocks, output, ..
        } = self;
        let mut v = vec![&mut input.linear];
        for b in blocks.iter_mut() {
            v.extend(b.units.iter_mut().map(|u| &mut u.linear));
        }
        v.push(output);
        v
    }

    pub fn linear_layer_count(&self) -> usize {
        2 + 2 * self.blocks.len()
    }

    /// Number of trainable scalars: every W, b, gamma and beta.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for u in self.units() {
            n += u.linear.weight.len() + u.linear.bias.len();
            if let Some(bn) = &u.bn {
                n += bn.gamma.len() + bn.beta.len();
            }
        }
        n + self.output.weight.len() + self.output.bias.len()
    }

    /// Trainable tensors with their gradients, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let prefixes = self.unit_prefixes();
        let mut out = Vec::new();
        let Network {
            input, blocks, output, ..
        } = self;
        let mut units: Vec<&mut Unit> = vec![input];
        for b in blocks.iter_mut() {
            units.extend(b.units.iter_mut());
        }
        for (prefix, unit) in prefixes.iter().zip(units) {
            push_linear(&mut out, &format!("{prefix}.linear"), &mut unit.linear);
            if let Some(bn) = &mut unit.bn {
                let d = bn.dim();
                out.push(ParamSlot {
                    name: format!("{prefix}.bn.gamma"),
                    kind: ParamKind::Gamma,
                    shape: (1, d),
                    value: &mut bn.gamma,
                    grad: &bn.grad_gamma,
                });
                out.push(ParamSlot {
                    name: format!("{prefix}.bn.beta"),
                    kind: ParamKind::Beta,
                    shape: (1, d),
                    value: &mut bn.beta,
                    grad: &bn.grad_beta,
                });
            }
        }
        push_linear(&mut out, "output.linear", output);
        out
    }

    /// Every persistent tensor (parameters and running statistics) by name.
    pub fn state_tensors(&self) -> Vec<(String, (usize, usize), &[f64])> {
        let mut out: Vec<(String, (usize, usize), &[f64])> = Vec::new();
        for (prefix, unit) in self.unit_prefixes().into_iter().zip(self.units()) {
            let l = &unit.linear;
            out.push((format!("{prefix}.linear.weight"), l.weight.shape(), l.weight.data()));
            out.push((format!("{prefix}.linear.bias"), (1, l.bias.len()), &l.bias));
            if let Some(bn) = &unit.bn {
                let d = bn.dim();
                out.push((format!("{prefix}.bn.gamma"), (1, d), &bn.gamma));
                out.push((format!("{prefix}.bn.beta"), (1, d), &bn.beta));
                out.push((format!("{prefix}.bn.running_mean"), (1, d), &bn.running_mean));
                out.push((format!("{prefix}.bn.running_var"), (1, d), &bn.running_var));
            }
        }
        let l = &self.output;
        out.push(("output.linear.weight".into(), l.weight.shape(), l.weight.data()));
        out.push(("output.linear.bias".into(), (1, l.bias.len()), &l.bias));
        out
    }

    /// Mutable counterpart of [`Network::state_tensors`], same order.
    pub fn state_tensors_mut(&mut self) -> Vec<(String, (usize, usize), &mut [f64])> {
        let prefixes = self.unit_prefixes();
        let mut out: Vec<(String, (usize, usize), &mut [f64])> = Vec::new();
        let Network {
            input, blocks, output, ..
        } = self;
        let mut units: Vec<&mut Unit> = vec![input];
        for b in blocks.iter_mut() {
            units.extend(b.units.iter_mut());
        }
        for (prefix, unit) in prefixes.into_iter().zip(units) {
            let l = &mut unit.linear;
            let ws = l.weight.shape();
            out.push((format!("{prefix}.linear.weight"), ws, l.weight.data_mut()));
            let bl = l.bias.len();
            out.push((format!("{prefix}.linear.bias"), (1, bl), &mut l.bias));
            if let Some(bn) = &mut unit.bn {
                let d = bn.dim();
                out.push((format!("{prefix}.bn.gamma"), (1, d), &mut bn.gamma));
                out.push((format!("{prefix}.bn.beta"), (1, d), &mut bn.beta));
                out.push((format!("{prefix}.bn.running_mean"), (1, d), &mut bn.running_mean));
                out.push((format!("{prefix}.bn.running_var"), (1, d), &mut bn.running_var));
            }
        }
        let ws = output.weight.shape();
        out.push(("output.linear.weight".into(), ws, output.weight.data_mut()));
        let bl = output.bias.len();
        out.push(("output.linear.bias".into(), (1, bl), &mut output.bias));
        out
    }

    /// Train-mode batch norm uses running statistics when frozen.
    pub fn freeze_batch_norm(&mut self, frozen: bool) {
        for u in self.units_mut() {
            if let Some(bn) = &mut u.bn {
                bn.frozen_stats = frozen;
            }
        }
    }

    /// Draws one dropout mask per unit for a batch of `rows` and reuses them
    /// for every train-mode forward until [`Network::unfreeze_dropout`].
    pub fn freeze_dropout(&mut self, rows: usize, rng: &mut Rng) {
        let h = self.config.hidden_dim;
        for u in self.units_mut() {
            let p = u.dropout.keep_prob;
            u.dropout.frozen_mask = Some(dropout_mask(rng, p, rows, h));
        }
    }

    pub fn unfreeze_dropout(&mut self) {
        for u in self.units_mut() {
            u.dropout.frozen_mask = None;
        }
    }
}

fn push_linear<'a>(out: &mut Vec<ParamSlot<'a>>, prefix: &str, l: &'a mut Linear) {
    let Linear {
        weight,
        bias,
        grad_weight,
        grad_bias,
        ..
    } = l;
    out.push(ParamSlot {
        name: format!("{prefix}.weight"),
        kind: ParamKind::Weight,
        shape: weight.shape(),
        value: weight.data_mut(),
        grad: grad_weight.data(),
    });
    out.push(ParamSlot {
        name: format!("{prefix}.bias"),
        kind: ParamKind::Bias,
        shape: (1, bias.len()),
        value: bias,
        grad: grad_bias,
    });
}
