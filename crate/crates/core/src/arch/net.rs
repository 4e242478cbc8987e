//! Graph assembly for the network variants.
//!
//! The building blocks (`conv_block`, `attention_gate`, `cfa_gate`,
//! `nested_skip_node`) operate on graph handles so the same wiring runs in
//! `f32` for training and in `f64` for gradient-check oracles.

use rand_chacha::ChaCha8Rng;

use crate::error::{HorizonError, Result};
use crate::tensor::{BnMode, Graph, Padding, Scalar, Shape4, Var};

use super::{is_buffer_path, ArchId, Weights};

/// Dropout rate applied after each encoder block on the training path.
pub const DROPOUT_RATE: f64 = 0.2;

/// Running-stat update momentum for batch normalization.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}

/// Which heads the context-fusion gate combines with the semantic head.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CfaMode {
    /// Semantic + 3×3 spatial head.
    SpatialOnly,
    /// Semantic + spatial + Sobel-fed edge head.
    Full,
}

/// Batch-norm binding: affine parameters plus running statistics when the
/// node should normalize with them (eval mode) instead of batch statistics.
pub struct BnBind<S> {
    pub gamma: Var,
    pub beta: Var,
    pub eval_stats: Option<(Vec<S>, Vec<S>)>,
}

pub struct ConvBlockVars<S> {
    pub conv1: (Var, Var),
    pub bn1: BnBind<S>,
    pub conv2: (Var, Var),
    pub bn2: BnBind<S>,
}

pub struct ConvBlockOut {
    pub out: Var,
    pub bn_nodes: [Var; 2],
}

/// Two rounds of 3×3 convolution → batch norm → relu; spatial extent is
/// preserved by same-padding.
pub fn conv_block<S: Scalar>(
    g: &mut Graph<S>,
    x: Var,
    vars: &ConvBlockVars<S>,
) -> Result<ConvBlockOut> {
    let mut bn_nodes = [Var(0), Var(0)];
    let mut h = x;
    for (i, (conv, bn)) in [(&vars.conv1, &vars.bn1), (&vars.conv2, &vars.bn2)]
        .into_iter()
        .enumerate()
    {
        let c = g.conv2d(h, conv.0, Some(conv.1), 1, Padding::Same)?;
        let mode = match &bn.eval_stats {
            Some((mean, var)) => BnMode::Eval {
                mean: mean.clone(),
                var: var.clone(),
            },
            None => BnMode::Train,
        };
        let b = g.batchnorm2d(c, bn.gamma, bn.beta, mode)?;
        bn_nodes[i] = b;
        h = g.relu(b);
    }
    Ok(ConvBlockOut { out: h, bn_nodes })
}

/// Gate projections. `theta_x` doubles as the semantic head of the
/// context-fusion gate; `theta_spatial`/`theta_edge` are only present on the
/// fusion variants.
pub struct GateVars {
    pub theta_x: (Var, Var),
    pub theta_g: (Var, Var),
    pub psi: (Var, Var),
    pub theta_spatial: Option<(Var, Var)>,
    pub theta_edge: Option<(Var, Var)>,
}

fn check_gate_extents<S: Scalar>(g: &Graph<S>, x_enc: Var, gate_sig: Var) -> Result<()> {
    let xs = g.shape(x_enc);
    let gs = g.shape(gate_sig);
    if xs.h != 2 * gs.h || xs.w != 2 * gs.w || xs.n != gs.n {
        return Err(HorizonError::Shape(format!(
            "attention gate: encoder features {xs} must have twice the spatial extent of the gating signal {gs}"
        )));
    }
    Ok(())
}

/// Re-weights encoder features with a single-channel coefficient map in
/// (0,1) computed from the encoder features and the upsampled gating signal.
/// Returns (gated features, coefficient map).
pub fn attention_gate<S: Scalar>(
    g: &mut Graph<S>,
    x_enc: Var,
    gate_sig: Var,
    vars: &GateVars,
) -> Result<(Var, Var)> {
    check_gate_extents(g, x_enc, gate_sig)?;
    let tx = g.conv2d(x_enc, vars.theta_x.0, Some(vars.theta_x.1), 1, Padding::Same)?;
    gate_tail(g, x_enc, gate_sig, tx, vars)
}

/// Context-fusion gate: the encoder projection is the elementwise sum of a
/// 1×1 semantic head, a 3×3 spatial head, and (in full mode) a 1×1 head over
/// fixed Sobel responses. The rest of the gate matches [`attention_gate`].
pub fn cfa_gate<S: Scalar>(
    g: &mut Graph<S>,
    x_enc: Var,
    gate_sig: Var,
    vars: &GateVars,
    mode: CfaMode,
) -> Result<(Var, Var)> {
    check_gate_extents(g, x_enc, gate_sig)?;
    let sem = g.conv2d(x_enc, vars.theta_x.0, Some(vars.theta_x.1), 1, Padding::Same)?;
    let (sk, sb) = vars.theta_spatial.ok_or_else(|| {
        HorizonError::Invariant("context-fusion gate is missing its spatial head".into())
    })?;
    let spatial = g.conv2d(x_enc, sk, Some(sb), 1, Padding::Same)?;
    let mut fused = g.add(sem, spatial)?;
    if mode == CfaMode::Full {
        let (ek, eb) = vars.theta_edge.ok_or_else(|| {
            HorizonError::Invariant("full context-fusion gate is missing its edge head".into())
        })?;
        let sobel = g.sobel_features(x_enc);
        let edge = g.conv2d(sobel, ek, Some(eb), 1, Padding::Same)?;
        fused = g.add(fused, edge)?;
    }
    gate_tail(g, x_enc, gate_sig, fused, vars)
}

fn gate_tail<S: Scalar>(
    g: &mut Graph<S>,
    x_enc: Var,
    gate_sig: Var,
    x_proj: Var,
    vars: &GateVars,
) -> Result<(Var, Var)> {
    let up = g.upsample2_nearest(gate_sig);
    let tg = g.conv2d(up, vars.theta_g.0, Some(vars.theta_g.1), 1, Padding::Same)?;
    let s = g.add(x_proj, tg)?;
    let a = g.relu(s);
    let psi = g.conv2d(a, vars.psi.0, Some(vars.psi.1), 1, Padding::Same)?;
    let alpha = g.sigmoid(psi);
    let gated = g.mul_channel(x_enc, alpha)?;
    Ok((gated, alpha))
}

/// Dense-skip node: concatenates every earlier output at this level with the
/// learned 2× upsampling of the node one level below, then applies a
/// convolution block.
pub fn nested_skip_node<S: Scalar>(
    g: &mut Graph<S>,
    same_level: &[Var],
    below: Var,
    up_kernel: Var,
    block: &ConvBlockVars<S>,
) -> Result<ConvBlockOut> {
    if same_level.is_empty() {
        return Err(HorizonError::Argument(
            "nested skip node needs at least one same-level input".into(),
        ));
    }
    let up = g.conv2d_transpose(below, up_kernel)?;
    let mut cat = same_level[0];
    for &v in &same_level[1..] {
        cat = g.concat_channels(cat, v)?;
    }
    cat = g.concat_channels(cat, up)?;
    conv_block(g, cat, block)
}

/// Everything the trainer needs from one forward construction.
pub struct ForwardPass {
    /// Sigmoid probability map, same spatial extent as the input.
    pub output: Var,
    /// Learnable parameter leaves bound by this pass, in creation order.
    pub params: Vec<(String, Var)>,
    /// Train-mode batch-norm nodes keyed by their layer-path prefix.
    pub bn_nodes: Vec<(String, Var)>,
}

/// Eval-mode forward: running statistics, no dropout, no gradients.
pub fn forward_eval<S: Scalar>(weights: &Weights, g: &mut Graph<S>, input: Var) -> Result<Var> {
    Ok(build_forward(weights, g, input, Mode::Eval, None)?.output)
}

/// Train-mode forward: batch statistics, dropout after encoder blocks,
/// learnable leaves marked for gradients.
pub fn forward_train<S: Scalar>(
    weights: &Weights,
    g: &mut Graph<S>,
    input: Var,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    build_forward(weights, g, input, Mode::Train, Some(rng))
}

struct Binder<'a, 'g, S: Scalar> {
    w: &'a Weights,
    g: &'g mut Graph<S>,
    train: bool,
    params: Vec<(String, Var)>,
    bn_nodes: Vec<(String, Var)>,
}

impl<'a, 'g, S: Scalar> Binder<'a, 'g, S> {
    fn leaf(&mut self, path: &str) -> Result<Var> {
        let p = self.w.get(path)?;
        let shape = match p.dims.len() {
            4 => Shape4::new(p.dims[0], p.dims[1], p.dims[2], p.dims[3]),
            1 => Shape4::new(1, p.dims[0], 1, 1),
            r => {
                return Err(HorizonError::Invariant(format!(
                    "parameter '{path}' has unsupported rank {r}"
                )))
            }
        };
        let data: Vec<S> = p.data.iter().map(|&v| S::from_f64(v as f64)).collect();
        let t = crate::tensor::Tensor4::new(shape, data)?;
        let requires_grad = self.train && !is_buffer_path(path);
        let var = self.g.leaf(t, requires_grad);
        if requires_grad {
            self.params.push((path.to_string(), var));
        }
        Ok(var)
    }

    fn conv_pair(&mut self, prefix: &str) -> Result<(Var, Var)> {
        Ok((
            self.leaf(&format!("{prefix}.kernel"))?,
            self.leaf(&format!("{prefix}.bias"))?,
        ))
    }

    fn bn_bind(&mut self, prefix: &str) -> Result<BnBind<S>> {
        let gamma = self.leaf(&format!("{prefix}.gamma"))?;
        let beta = self.leaf(&format!("{prefix}.beta"))?;
        let eval_stats = if self.train {
            None
        } else {
            let mean = self.w.get(&format!("{prefix}.running_mean"))?;
            let var = self.w.get(&format!("{prefix}.running_var"))?;
            Some((
                mean.data.iter().map(|&v| S::from_f64(v as f64)).collect(),
                var.data.iter().map(|&v| S::from_f64(v as f64)).collect(),
            ))
        };
        Ok(BnBind {
            gamma,
            beta,
            eval_stats,
        })
    }

    fn block_vars(&mut self, prefix: &str) -> Result<ConvBlockVars<S>> {
        Ok(ConvBlockVars {
            conv1: self.conv_pair(&format!("{prefix}.conv1"))?,
            bn1: self.bn_bind(&format!("{prefix}.bn1"))?,
            conv2: self.conv_pair(&format!("{prefix}.conv2"))?,
            bn2: self.bn_bind(&format!("{prefix}.bn2"))?,
        })
    }

    fn block(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let vars = self.block_vars(prefix)?;
        let out = conv_block(self.g, x, &vars)?;
        if self.train {
            self.bn_nodes
                .push((format!("{prefix}.bn1"), out.bn_nodes[0]));
            self.bn_nodes
                .push((format!("{prefix}.bn2"), out.bn_nodes[1]));
        }
        Ok(out.out)
    }

    fn gate_vars(&mut self, prefix: &str, cfa: Option<CfaMode>) -> Result<GateVars> {
        Ok(GateVars {
            theta_x: self.conv_pair(&format!("{prefix}.theta_x"))?,
            theta_g: self.conv_pair(&format!("{prefix}.theta_g"))?,
            psi: self.conv_pair(&format!("{prefix}.psi"))?,
            theta_spatial: if cfa.is_some() {
                Some(self.conv_pair(&format!("{prefix}.theta_spatial"))?)
            } else {
                None
            },
            theta_edge: if cfa == Some(CfaMode::Full) {
                Some(self.conv_pair(&format!("{prefix}.theta_edge"))?)
            } else {
                None
            },
        })
    }
}

fn build_forward<S: Scalar>(
    weights: &Weights,
    g: &mut Graph<S>,
    input: Var,
    mode: Mode,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardPass> {
    let spec = weights.spec;
    let xs = g.shape(input);
    let (h, w, c) = spec.input;
    if xs.h != h || xs.w != w || xs.c != c {
        return Err(HorizonError::Shape(format!(
            "input {xs} does not match the model's ({h},{w}) patch with {c} channel(s)"
        )));
    }
    if mode == Mode::Train && rng.is_none() {
        return Err(HorizonError::Argument(
            "train-mode forward needs an rng for dropout".into(),
        ));
    }

    let mut b = Binder {
        w: weights,
        g,
        train: mode == Mode::Train,
        params: Vec::new(),
        bn_nodes: Vec::new(),
    };

    // Encoder column; each level's output feeds both the skip pathway and
    // the next pooling stage.
    let levels = spec.levels;
    let mut skips: Vec<Var> = Vec::with_capacity(levels);
    let mut x = input;
    for l in 1..=levels {
        let mut out = b.block(&format!("enc{l}"), x)?;
        if b.train {
            let r = rng.as_deref_mut().expect("rng checked above");
            out = b.g.dropout(out, DROPOUT_RATE, r);
        }
        skips.push(out);
        x = b.g.maxpool2d(out)?;
    }
    let bottleneck = b.block("bottleneck", x)?;

    let top = match spec.arch {
        ArchId::Unetpp => {
            // Dense grid x^{l,j}; columns[l][0] is the encoder output at
            // 0-based level l, columns[levels][0] the bottleneck.
            let mut columns: Vec<Vec<Var>> = skips.into_iter().map(|v| vec![v]).collect();
            columns.push(vec![bottleneck]);
            for j in 1..=levels {
                for l0 in 0..=(levels - j) {
                    let prefix = format!("skip{l0}_{j}");
                    let below = columns[l0 + 1][j - 1];
                    let up_kernel = b.leaf(&format!("{prefix}.up.kernel"))?;
                    let block = b.block_vars(&prefix)?;
                    let same: Vec<Var> = columns[l0][..j].to_vec();
                    let out = nested_skip_node(b.g, &same, below, up_kernel, &block)?;
                    if b.train {
                        b.bn_nodes.push((format!("{prefix}.bn1"), out.bn_nodes[0]));
                        b.bn_nodes.push((format!("{prefix}.bn2"), out.bn_nodes[1]));
                    }
                    columns[l0].push(out.out);
                }
            }
            columns[0][levels]
        }
        _ => {
            let mut d = bottleneck;
            for l in (1..=levels).rev() {
                let mut skip = skips[l - 1];
                if spec.arch.gated() {
                    let vars = b.gate_vars(&format!("gate{l}"), spec.arch.cfa_mode())?;
                    let (gated, _alpha) = match spec.arch.cfa_mode() {
                        Some(mode) => cfa_gate(b.g, skip, d, &vars, mode)?,
                        None => attention_gate(b.g, skip, d, &vars)?,
                    };
                    skip = gated;
                }
                let up_kernel = b.leaf(&format!("dec{l}.up.kernel"))?;
                let up = b.g.conv2d_transpose(d, up_kernel)?;
                let cat = b.g.concat_channels(up, skip)?;
                d = b.block(&format!("dec{l}"), cat)?;
            }
            d
        }
    };

    // Pixel-wise classifier head.
    let (hk, hb) = b.conv_pair("head")?;
    let logits = b.g.conv2d(top, hk, Some(hb), 1, Padding::Same)?;
    let output = b.g.sigmoid(logits);

    Ok(ForwardPass {
        output,
        params: b.params,
        bn_nodes: b.bn_nodes,
    })
}
