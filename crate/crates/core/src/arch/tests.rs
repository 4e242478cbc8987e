use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::objectives::{composite_loss_var, LossConfig};
use crate::tensor::finite_diff::finite_diff_check;
use crate::tensor::{Graph, Shape4, Tensor4, Var};

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(shape: Shape4, r: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| r.gen_range(-1.0..1.0))
}

fn leaf(g: &mut Graph<f64>, t: Tensor4<f64>) -> Var {
    g.leaf(t, false)
}

/// Small spec that keeps unit tests fast; forwards still cross four levels.
fn small_spec(arch: ArchId) -> ModelSpec {
    ModelSpec {
        arch,
        levels: 4,
        base_channels: 4,
        input: (32, 32, 1),
    }
}

// ── conv_block ───────────────────────────────────────────────────────

fn rand_block_vars(
    g: &mut Graph<f64>,
    in_c: usize,
    out_c: usize,
    r: &mut ChaCha8Rng,
) -> ConvBlockVars<f64> {
    let conv = |ic: usize, oc: usize, g: &mut Graph<f64>, r: &mut ChaCha8Rng| {
        (
            leaf(g, rand_t(Shape4::new(oc, ic, 3, 3), r)),
            leaf(g, rand_t(Shape4::new(1, oc, 1, 1), r)),
        )
    };
    let bn = |oc: usize, g: &mut Graph<f64>| BnBind {
        gamma: leaf(g, Tensor4::full(Shape4::new(1, oc, 1, 1), 1.0)),
        beta: leaf(g, Tensor4::full(Shape4::new(1, oc, 1, 1), 0.0)),
        eval_stats: None,
    };
    ConvBlockVars {
        conv1: conv(in_c, out_c, g, r),
        bn1: bn(out_c, g),
        conv2: conv(out_c, out_c, g, r),
        bn2: bn(out_c, g),
    }
}

#[test]
fn conv_block_preserves_extent_and_is_nonnegative() {
    let mut r = rng(40);
    let mut g = Graph::new();
    let x = leaf(&mut g, rand_t(Shape4::new(1, 3, 12, 10), &mut r));
    let vars = rand_block_vars(&mut g, 3, 5, &mut r);
    let out = conv_block(&mut g, x, &vars).unwrap();
    assert_eq!(g.shape(out.out), Shape4::new(1, 5, 12, 10));
    assert!(g.value(out.out).data().iter().all(|&v| v >= 0.0));
}

#[test]
fn conv_block_gradient_reaches_both_kernels() {
    let mut r = rng(41);
    let mut g = Graph::new();
    let x = g.leaf(rand_t(Shape4::new(1, 2, 8, 8), &mut r), false);
    let k1 = g.leaf(rand_t(Shape4::new(3, 2, 3, 3), &mut r), true);
    let b1 = g.leaf(rand_t(Shape4::new(1, 3, 1, 1), &mut r), true);
    let k2 = g.leaf(rand_t(Shape4::new(3, 3, 3, 3), &mut r), true);
    let b2 = g.leaf(rand_t(Shape4::new(1, 3, 1, 1), &mut r), true);
    let bn = |g: &mut Graph<f64>| BnBind {
        gamma: g.leaf(Tensor4::full(Shape4::new(1, 3, 1, 1), 1.0), false),
        beta: g.leaf(Tensor4::full(Shape4::new(1, 3, 1, 1), 0.0), false),
        eval_stats: None,
    };
    let bn1 = bn(&mut g);
    let bn2 = bn(&mut g);
    let vars = ConvBlockVars {
        conv1: (k1, b1),
        bn1,
        conv2: (k2, b2),
        bn2,
    };
    let out = conv_block(&mut g, x, &vars).unwrap();
    let s = g.sum(out.out);
    g.backward(s).unwrap();
    for k in [k1, k2] {
        let grad = g.grad(k).expect("kernel gradient present");
        assert!(grad.data().iter().any(|&v| v != 0.0));
    }
}

// ── gates ────────────────────────────────────────────────────────────

struct GateFixture {
    x_c: usize,
    g_c: usize,
    inter: usize,
}

impl GateFixture {
    fn vars(
        &self,
        g: &mut Graph<f64>,
        r: &mut ChaCha8Rng,
        zero_extra_heads: bool,
        cfa: bool,
        psi_override: Option<(f64, f64)>,
    ) -> GateVars {
        let (xc, gc, ic) = (self.x_c, self.g_c, self.inter);
        let conv = |oc: usize, icn: usize, k: usize, zero: bool, g: &mut Graph<f64>, r: &mut ChaCha8Rng| {
            let kt = if zero {
                Tensor4::zeros(Shape4::new(oc, icn, k, k))
            } else {
                rand_t(Shape4::new(oc, icn, k, k), r)
            };
            let bt = if zero {
                Tensor4::zeros(Shape4::new(1, oc, 1, 1))
            } else {
                rand_t(Shape4::new(1, oc, 1, 1), r)
            };
            (leaf(g, kt), leaf(g, bt))
        };
        let theta_x = conv(ic, xc, 1, false, g, r);
        let theta_g = conv(ic, gc, 1, false, g, r);
        let psi = match psi_override {
            Some((kv, bv)) => (
                leaf(g, Tensor4::full(Shape4::new(1, ic, 1, 1), kv)),
                leaf(g, Tensor4::full(Shape4::new(1, 1, 1, 1), bv)),
            ),
            None => conv(1, ic, 1, false, g, r),
        };
        GateVars {
            theta_x,
            theta_g,
            psi,
            theta_spatial: cfa.then(|| conv(ic, xc, 3, zero_extra_heads, g, r)),
            theta_edge: cfa.then(|| conv(ic, 2 * xc, 1, zero_extra_heads, g, r)),
        }
    }
}

const FIX: GateFixture = GateFixture {
    x_c: 6,
    g_c: 10,
    inter: 3,
};

#[test]
fn attention_gate_zero_psi_halves_features() {
    let mut r = rng(42);
    let mut g = Graph::new();
    let x = leaf(&mut g, rand_t(Shape4::new(1, FIX.x_c, 8, 8), &mut r));
    let sig = leaf(&mut g, rand_t(Shape4::new(1, FIX.g_c, 4, 4), &mut r));
    let vars = FIX.vars(&mut g, &mut r, false, false, Some((0.0, 0.0)));
    let (gated, alpha) = attention_gate(&mut g, x, sig, &vars).unwrap();
    assert!(g.value(alpha).data().iter().all(|&a| a == 0.5));
    let xs = g.value(x).clone();
    for (gv, xv) in g.value(gated).data().iter().zip(xs.data()) {
        assert!((gv - xv / 2.0).abs() < 1e-15);
    }
}

#[test]
fn attention_gate_saturated_psi_passes_features_through() {
    let mut r = rng(43);
    let mut g = Graph::new();
    let x = leaf(&mut g, rand_t(Shape4::new(1, FIX.x_c, 8, 8), &mut r));
    let sig = leaf(&mut g, rand_t(Shape4::new(1, FIX.g_c, 4, 4), &mut r));
    let vars = FIX.vars(&mut g, &mut r, false, false, Some((0.0, 50.0)));
    let (gated, alpha) = attention_gate(&mut g, x, sig, &vars).unwrap();
    assert!(g.value(alpha).data().iter().all(|&a| a > 1.0 - 1e-9));
    let xs = g.value(x).clone();
    for (gv, xv) in g.value(gated).data().iter().zip(xs.data()) {
        assert!((gv - xv).abs() < 1e-8);
    }
}

#[test]
fn attention_map_stays_strictly_inside_unit_interval() {
    let mut r = rng(44);
    for _ in 0..10 {
        let mut g = Graph::new();
        let x = leaf(&mut g, rand_t(Shape4::new(2, FIX.x_c, 8, 8), &mut r));
        let sig = leaf(&mut g, rand_t(Shape4::new(2, FIX.g_c, 4, 4), &mut r));
        let vars = FIX.vars(&mut g, &mut r, false, true, None);
        let (_, a1) = attention_gate(&mut g, x, sig, &vars).unwrap();
        let (_, a2) = cfa_gate(&mut g, x, sig, &vars, CfaMode::Full).unwrap();
        for v in [a1, a2] {
            assert!(g.value(v).data().iter().all(|&a| a > 0.0 && a < 1.0));
            assert_eq!(g.shape(v).c, 1);
            assert_eq!(g.shape(v).h, 8);
        }
    }
}

#[test]
fn gate_rejects_wrong_extent_ratio() {
    let mut r = rng(45);
    let mut g = Graph::new();
    let x = leaf(&mut g, rand_t(Shape4::new(1, FIX.x_c, 8, 8), &mut r));
    let sig = leaf(&mut g, rand_t(Shape4::new(1, FIX.g_c, 8, 8), &mut r));
    let vars = FIX.vars(&mut g, &mut r, false, false, None);
    assert!(matches!(
        attention_gate(&mut g, x, sig, &vars),
        Err(crate::HorizonError::Shape(_))
    ));
}

#[test]
fn cfa_gate_with_zero_heads_reduces_to_attention_gate() {
    let mut r = rng(46);
    for _ in 0..10 {
        let mut g = Graph::new();
        let x = leaf(&mut g, rand_t(Shape4::new(1, FIX.x_c, 8, 8), &mut r));
        let sig = leaf(&mut g, rand_t(Shape4::new(1, FIX.g_c, 4, 4), &mut r));
        let vars = FIX.vars(&mut g, &mut r, true, true, None);
        let (_, a_attn) = attention_gate(&mut g, x, sig, &vars).unwrap();
        let (_, a_cfa) = cfa_gate(&mut g, x, sig, &vars, CfaMode::Full).unwrap();
        for (a, b) in g.value(a_attn).data().iter().zip(g.value(a_cfa).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn cfa_edge_head_sees_only_bias_on_constant_input() {
    // Sobel responses vanish on a constant image away from the padded
    // border, so zeroing the edge-head kernel (keeping its bias) must not
    // change the gate output at interior pixels.
    let mut r = rng(47);
    let mut g = Graph::new();
    let x = leaf(&mut g, Tensor4::full(Shape4::new(1, FIX.x_c, 8, 8), 3.0));
    let sig = leaf(&mut g, rand_t(Shape4::new(1, FIX.g_c, 4, 4), &mut r));
    let mut vars = FIX.vars(&mut g, &mut r, false, true, None);
    let (_, a_full) = cfa_gate(&mut g, x, sig, &vars, CfaMode::Full).unwrap();
    let (_, edge_bias) = vars.theta_edge.unwrap();
    let zero_k = leaf(
        &mut g,
        Tensor4::zeros(Shape4::new(FIX.inter, 2 * FIX.x_c, 1, 1)),
    );
    vars.theta_edge = Some((zero_k, edge_bias));
    let (_, a_bias_only) = cfa_gate(&mut g, x, sig, &vars, CfaMode::Full).unwrap();
    for i in 1..7 {
        for j in 1..7 {
            let a = g.value(a_full).at(0, 0, i, j);
            let b = g.value(a_bias_only).at(0, 0, i, j);
            assert!((a - b).abs() < 1e-9, "interior pixel ({i},{j})");
        }
    }
}

#[test]
fn cfa_gate_gradients_match_finite_differences() {
    let mut r = rng(48);
    let x = rand_t(Shape4::new(1, 4, 8, 8), &mut r);
    let sig = rand_t(Shape4::new(1, 6, 4, 4), &mut r);
    let tx_k = rand_t(Shape4::new(2, 4, 1, 1), &mut r);
    let tx_b = rand_t(Shape4::new(1, 2, 1, 1), &mut r);
    let tg_k = rand_t(Shape4::new(2, 6, 1, 1), &mut r);
    let tg_b = rand_t(Shape4::new(1, 2, 1, 1), &mut r);
    let psi_k = rand_t(Shape4::new(1, 2, 1, 1), &mut r);
    let psi_b = rand_t(Shape4::new(1, 1, 1, 1), &mut r);
    let sp_k = rand_t(Shape4::new(2, 4, 3, 3), &mut r);
    let sp_b = rand_t(Shape4::new(1, 2, 1, 1), &mut r);
    let ed_k = rand_t(Shape4::new(2, 8, 1, 1), &mut r);
    let ed_b = rand_t(Shape4::new(1, 2, 1, 1), &mut r);
    let inputs = vec![
        x, sig, tx_k, tx_b, tg_k, tg_b, psi_k, psi_b, sp_k, sp_b, ed_k, ed_b,
    ];
    let err = finite_diff_check(
        |g, v| {
            let vars = GateVars {
                theta_x: (v[2], v[3]),
                theta_g: (v[4], v[5]),
                psi: (v[6], v[7]),
                theta_spatial: Some((v[8], v[9])),
                theta_edge: Some((v[10], v[11])),
            };
            let (gated, _) = cfa_gate(g, v[0], v[1], &vars, CfaMode::Full).unwrap();
            let sq = g.mul(gated, gated).unwrap();
            g.sum(sq)
        },
        &inputs,
        1e-5,
    );
    assert!(err < 1e-3, "cfa gate gradient error {err}");
}

// ── nested skip nodes ────────────────────────────────────────────────

#[test]
fn nested_skip_node_rejects_empty_same_level() {
    let mut r = rng(49);
    let mut g = Graph::new();
    let below = leaf(&mut g, rand_t(Shape4::new(1, 4, 4, 4), &mut r));
    let up_k = leaf(&mut g, rand_t(Shape4::new(4, 2, 2, 2), &mut r));
    let vars = rand_block_vars(&mut g, 4, 2, &mut r);
    assert!(matches!(
        nested_skip_node(&mut g, &[], below, up_k, &vars),
        Err(crate::HorizonError::Argument(_))
    ));
}

#[test]
fn nested_skip_node_concatenates_then_convolves() {
    // j=1: exactly two inputs (one same-level map + the upsampled below).
    let mut r = rng(50);
    let mut g = Graph::new();
    let x0 = leaf(&mut g, rand_t(Shape4::new(1, 2, 8, 8), &mut r));
    let below = leaf(&mut g, rand_t(Shape4::new(1, 4, 4, 4), &mut r));
    let up_k = leaf(&mut g, rand_t(Shape4::new(4, 2, 2, 2), &mut r));
    let vars = rand_block_vars(&mut g, 4, 2, &mut r);
    let out = nested_skip_node(&mut g, &[x0], below, up_k, &vars).unwrap();
    assert_eq!(g.shape(out.out), Shape4::new(1, 2, 8, 8));
}

#[test]
fn unetpp_instantiates_the_dense_node_index_set() {
    // Independent enumeration of {(l, j): 0 <= l <= 3, 1 <= j <= 4 - l}.
    let levels = 4usize;
    let mut expected: Vec<(usize, usize)> = Vec::new();
    for l in 0..levels {
        for j in 1..=(levels - l) {
            expected.push((l, j));
        }
    }
    expected.sort_unstable();
    assert_eq!(expected.len(), 10);

    let w = build_model(&small_spec(ArchId::Unetpp), 1).unwrap();
    let mut found: Vec<(usize, usize)> = w
        .iter()
        .filter_map(|(p, _)| {
            let rest = p.strip_prefix("skip")?.strip_suffix(".conv1.kernel")?;
            let (l, j) = rest.split_once('_')?;
            Some((l.parse().ok()?, j.parse().ok()?))
        })
        .collect();
    found.sort_unstable();
    assert_eq!(found, expected);

    // Channel arithmetic: the node convolution consumes (j+1)·c channels.
    for &(l, j) in &expected {
        let c = w.spec.channels(l + 1);
        let kernel = w.get(&format!("skip{l}_{j}.conv1.kernel")).unwrap();
        assert_eq!(kernel.dims, vec![c, (j + 1) * c, 3, 3]);
    }
}

// ── build_model ──────────────────────────────────────────────────────

#[test]
fn build_model_is_deterministic() {
    let spec = ModelSpec::for_arch(ArchId::CfaUnet);
    let a = build_model(&spec, 77).unwrap();
    let b = build_model(&spec, 77).unwrap();
    assert_eq!(a, b);
    let c = build_model(&spec, 78).unwrap();
    assert_ne!(a, c);
}

#[test]
fn parameter_count_ordering() {
    let count = |arch| {
        build_model(&ModelSpec::for_arch(arch), 5)
            .unwrap()
            .param_count()
    };
    let compressed = count(ArchId::UnetCompressed);
    let unet = count(ArchId::Unet);
    let unetpp = count(ArchId::Unetpp);
    let attn = count(ArchId::AttnUnet);
    let cfa_s = count(ArchId::CfaSUnet);
    let cfa = count(ArchId::CfaUnet);
    assert!(compressed < unet, "{compressed} vs {unet}");
    assert!(unet < attn, "{unet} vs {attn}");
    assert!(attn < cfa_s, "{attn} vs {cfa_s}");
    assert!(cfa_s < cfa, "{cfa_s} vs {cfa}");
    assert!(unetpp > unet, "{unetpp} vs {unet}");
}

#[test]
fn build_model_rejects_indivisible_input() {
    let spec = ModelSpec {
        arch: ArchId::Unet,
        levels: 4,
        base_channels: 8,
        input: (100, 128, 1),
    };
    assert!(matches!(
        build_model(&spec, 0),
        Err(crate::HorizonError::Argument(_))
    ));
}

#[test]
fn plain_unet_has_no_gate_parameters() {
    // Wiring contract: the plain decoder consumes raw encoder features.
    for arch in [ArchId::Unet, ArchId::UnetCompressed, ArchId::Unetpp] {
        let w = build_model(&ModelSpec::for_arch(arch), 3).unwrap();
        assert!(w.iter().all(|(p, _)| !p.starts_with("gate")), "{arch}");
    }
    for arch in [ArchId::AttnUnet, ArchId::CfaSUnet, ArchId::CfaUnet] {
        let w = build_model(&ModelSpec::for_arch(arch), 3).unwrap();
        assert!(w.iter().any(|(p, _)| p.starts_with("gate")), "{arch}");
    }
    // Edge heads only on the full context-fusion variant.
    let cfa_s = build_model(&ModelSpec::for_arch(ArchId::CfaSUnet), 3).unwrap();
    assert!(cfa_s.iter().all(|(p, _)| !p.contains("theta_edge")));
    let cfa = build_model(&ModelSpec::for_arch(ArchId::CfaUnet), 3).unwrap();
    assert!(cfa.iter().any(|(p, _)| p.contains("theta_edge")));
}

#[test]
fn gate_projection_shapes() {
    let w = build_model(&ModelSpec::for_arch(ArchId::CfaUnet), 9).unwrap();
    for l in 1..=4usize {
        let c = w.spec.channels(l);
        let inter = c / 2;
        let psi = w.get(&format!("gate{l}.psi.kernel")).unwrap();
        assert_eq!(psi.dims[0], 1, "psi emits a single channel");
        assert_eq!(psi.dims[1], inter);
        let tx = w.get(&format!("gate{l}.theta_x.kernel")).unwrap();
        assert_eq!(tx.dims[..2], [inter, c]);
        let te = w.get(&format!("gate{l}.theta_edge.kernel")).unwrap();
        assert_eq!(te.dims[..2], [inter, 2 * c]);
    }
}

// ── forward ──────────────────────────────────────────────────────────

#[test]
fn all_variants_emit_probability_maps() {
    let mut r = rng(51);
    for arch in ArchId::ALL {
        let spec = small_spec(arch);
        let w = build_model(&spec, 11).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let input = g.leaf(
            Tensor4::from_fn(Shape4::new(1, 1, 32, 32), |_, _, _, _| {
                r.gen_range(-1.0f32..1.0)
            }),
            false,
        );
        let out = forward_eval(&w, &mut g, input).unwrap();
        assert_eq!(g.shape(out), Shape4::new(1, 1, 32, 32), "{arch}");
        assert!(
            g.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0),
            "{arch} output must be a probability map"
        );
    }
}

#[test]
fn full_size_patch_forward_all_variants() {
    let mut r = rng(52);
    let input = Tensor4::from_fn(Shape4::new(1, 1, 128, 128), |_, _, _, _| {
        r.gen_range(-1.0f32..1.0)
    });
    for arch in ArchId::ALL {
        let w = build_model(&ModelSpec::for_arch(arch), 4).unwrap();
        let mut g: Graph<f32> = Graph::new();
        let iv = g.leaf(input.clone(), false);
        let out = forward_eval(&w, &mut g, iv).unwrap();
        assert_eq!(g.shape(out), Shape4::new(1, 1, 128, 128), "{arch}");
        assert!(g.value(out).is_finite(), "{arch}");
    }
}

#[test]
fn forward_rejects_wrong_patch_shape() {
    let w = build_model(&small_spec(ArchId::Unet), 0).unwrap();
    let mut g: Graph<f32> = Graph::new();
    let input = g.leaf(Tensor4::zeros(Shape4::new(1, 1, 16, 32)), false);
    assert!(matches!(
        forward_eval(&w, &mut g, input),
        Err(crate::HorizonError::Shape(_))
    ));
}

#[test]
fn eval_forward_is_deterministic() {
    let mut r = rng(53);
    let w = build_model(&small_spec(ArchId::AttnUnet), 21).unwrap();
    let input = Tensor4::from_fn(Shape4::new(1, 1, 32, 32), |_, _, _, _| {
        r.gen_range(-1.0f32..1.0)
    });
    let run = || {
        let mut g: Graph<f32> = Graph::new();
        let iv = g.leaf(input.clone(), false);
        let out = forward_eval(&w, &mut g, iv).unwrap();
        g.value(out).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn train_forward_smoke_full_cfa_gradients() {
    // Full context-fusion network on a 128×128 patch: every learnable
    // parameter receives a finite gradient and at least one is nonzero.
    let w = build_model(&ModelSpec::for_arch(ArchId::CfaUnet), 99).unwrap();
    let mut r = rng(54);
    let input = Tensor4::from_fn(Shape4::new(1, 1, 128, 128), |_, _, _, _| {
        r.gen_range(-1.0f32..1.0)
    });
    let target = Tensor4::from_fn(Shape4::new(1, 1, 128, 128), |_, _, h, _| {
        if (60..=62).contains(&h) {
            1.0f32
        } else {
            0.0
        }
    });
    let mut g: Graph<f32> = Graph::new();
    let iv = g.leaf(input, false);
    let pass = forward_train(&w, &mut g, iv, &mut r).unwrap();
    let loss = composite_loss_var(&mut g, pass.output, &target, &LossConfig::default()).unwrap();
    g.backward(loss).unwrap();
    let mut any_nonzero = false;
    for (path, var) in &pass.params {
        let grad = g
            .grad(*var)
            .unwrap_or_else(|| panic!("missing gradient for {path}"));
        assert!(grad.is_finite(), "non-finite gradient at {path}");
        any_nonzero |= grad.data().iter().any(|&v| v != 0.0);
    }
    assert!(any_nonzero);
    assert_eq!(
        pass.params.len(),
        w.learnable_paths().len(),
        "every learnable parameter is bound exactly once"
    );
    assert!(!pass.bn_nodes.is_empty());
}

// ── weight file ──────────────────────────────────────────────────────

#[test]
fn weight_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.weights");
    let w = build_model(&small_spec(ArchId::CfaUnet), 1234).unwrap();
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(w, back);
}

#[test]
fn truncated_weight_file_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.weights");
    let w = build_model(&small_spec(ArchId::Unet), 5).unwrap();
    save_weights(&w, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(
        load_weights(&path),
        Err(crate::HorizonError::Corrupt { .. })
    ));
}

#[test]
fn bad_magic_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.weights");
    std::fs::write(&path, b"NOTAMODEL").unwrap();
    assert!(matches!(
        load_weights(&path),
        Err(crate::HorizonError::Corrupt { .. })
    ));
}

#[test]
fn running_stats_update_blends_with_momentum() {
    let mut w = build_model(&small_spec(ArchId::Unet), 2).unwrap();
    w.update_running_stats("enc1.bn1", &[1.0; 4], &[2.0; 4], 0.9)
        .unwrap();
    let mean = w.get("enc1.bn1.running_mean").unwrap();
    let var = w.get("enc1.bn1.running_var").unwrap();
    for &m in &mean.data {
        assert!((m - 0.1).abs() < 1e-6);
    }
    for &v in &var.data {
        assert!((v - (0.9 + 0.2)).abs() < 1e-6);
    }
}

#[test]
fn arch_id_round_trip() {
    for arch in ArchId::ALL {
        assert_eq!(ArchId::parse(arch.as_str()).unwrap(), arch);
    }
    assert!(ArchId::parse("resnet").is_err());
}
