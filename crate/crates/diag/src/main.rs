use std::collections::HashMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use horizon_core::arch::{build_model, forward_eval, forward_train, ArchId, ModelSpec};
use horizon_core::objectives::{composite_loss, composite_loss_var, LossConfig};
use horizon_core::synthetics::{generate, SynthSpec};
use horizon_core::tensor::Graph;
use horizon_core::trainer::{adam_step, default_config, extract_patches, AdamState};
use horizon_core::volume::{extract_labeled_slices, horizon_to_mask, make_split, Direction};

fn main() {
    let spec = SynthSpec {
        n_il: 8,
        n_xl: 128,
        n_t: 128,
        dt_ms: 4.0,
        peak_hz: 30.0,
        interfaces: vec![horizon_core::synthetics::Interface::flat(256.0, 1.0)],
        target_layer: 0,
        faults: vec![],
        noise_std: 0.0,
        seed: 71,
    };
    let (volume, truth) = generate(&spec).unwrap();
    let mask = horizon_to_mask(&truth, volume.dims(), volume.dt_ms, 3).unwrap();
    let plan = make_split(volume.n_il, Direction::Inline, 2).unwrap();
    let (train_slices, _) = extract_labeled_slices(&volume, &mask, &plan).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let patch = extract_patches(&train_slices[..1], 128, &mut rng, true).remove(0);

    {
        let mut img = Vec::new();
        for &v in patch.image.data() { img.extend_from_slice(&v.to_le_bytes()); }
        std::fs::write("/tmp/patch_image.f32", &img).unwrap();
        let mut lab = Vec::new();
        for &v in patch.label.data() { lab.extend_from_slice(&v.to_le_bytes()); }
        std::fs::write("/tmp/patch_label.f32", &lab).unwrap();
        println!("dumped patch");
        let w = build_model(&ModelSpec::for_arch(ArchId::Unet), 7).unwrap();
        horizon_core::arch::save_weights(&w, std::path::Path::new("/tmp/unet_init.weights")).unwrap();
        println!("dumped init");
    }
    for arch in [ArchId::Unet; 0] {
        let cfg = default_config(arch);
        let spec = ModelSpec::for_arch(arch);
        let mut weights = build_model(&spec, 7).unwrap();
        let mut adam = AdamState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        println!("=== {arch} lr={} l2={} ===", cfg.learning_rate, cfg.l2_factor);
        for step in 1..=400 {
            let mut g: Graph<f32> = Graph::new();
            let iv = g.leaf(patch.image.clone(), false);
            let pass = forward_train(&weights, &mut g, iv, &mut rng).unwrap();
            let loss = composite_loss_var(&mut g, pass.output, &patch.label, &cfg.loss).unwrap();
            let train_loss = g.value(loss).scalar_value() as f64;
            g.backward(loss).unwrap();
            let mut grads: HashMap<String, Vec<f32>> = HashMap::new();
            for (path, var) in &pass.params {
                grads.insert(path.clone(), g.grad(*var).unwrap().data().to_vec());
            }
            for (prefix, node) in &pass.bn_nodes {
                let (m, v) = g.bn_batch_stats(*node).unwrap();
                let (m, v) = (m.to_vec(), v.to_vec());
                weights.update_running_stats(prefix, &m, &v, 0.9).unwrap();
            }
            adam_step(&mut weights, &grads, &mut adam, cfg.learning_rate).unwrap();
            if step % 25 == 0 || step <= 2 {
                let mut ge: Graph<f32> = Graph::new();
                let ie = ge.leaf(patch.image.clone(), false);
                let out = forward_eval(&weights, &mut ge, ie).unwrap();
                let eval_loss = composite_loss(ge.value(out), &patch.label, &cfg.loss).unwrap();
                println!("step {step:3}  train {train_loss:.4}  eval {eval_loss:.4}");
            }
        }
    }
}
