use cloudseg::microfcn::{checkpoint, predict_scene, Head, Model, ModelConfig, PredictConfig, Tensor};
use cloudseg::raster::Raster;
use rand::Rng;

fn randomized(cfg: ModelConfig, seed: u64) -> (Model, cloudseg::seed::Rng) {
    let mut model = Model::new(cfg, seed).unwrap();
    let mut rng = cloudseg::seed::rng(seed ^ 0x5eed);
    for conv in model.convs_mut() {
        conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    (model, rng)
}

/// Compares backprop with central differences on every parameter whose
/// perturbation keeps all ReLU branches and max-pool winners unchanged.
fn check_gradients(cfg: ModelConfig, h: usize, w: usize, seed: u64) {
    let classes = cfg.classes;
    let channels = cfg.input_channels;
    let (mut model, mut rng) = randomized(cfg, seed);
    let x = Tensor::new(channels, h, w, (0..channels * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let r: Vec<f64> = (0..classes * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cache = model.forward_cached(&x).unwrap();
    let (grads, _) = model.backward(&cache, &Tensor::new(classes, h, w, r.clone()).unwrap()).unwrap();
    let analytic = grads.flatten();
    let params = model.params();
    let step = 1e-4;
    let (mut compared, mut worst) = (0, 0.0_f64);
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = params.clone();
        p[i] += step;
        model.set_params(&p).unwrap();
        let up = model.forward_cached(&x).unwrap();
        p[i] = params[i] - step;
        model.set_params(&p).unwrap();
        let down = model.forward_cached(&x).unwrap();
        if !(cache.same_pattern(&up) && cache.same_pattern(&down)) {
            continue;
        }
        let objective = |c: &cloudseg::microfcn::Cache| c.output().data.iter().zip(&r).map(|(o, v)| o * v).sum::<f64>();
        let fd = (objective(&up) - objective(&down)) / (2.0 * step);
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4));
        compared += 1;
    }
    assert!(compared * 10 >= analytic.len() * 8, "only {compared} of {} parameters comparable", analytic.len());
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn two_block_sigmoid_gradients() {
    check_gradients(ModelConfig { contracting_blocks: 2, base_width: 2, ..ModelConfig::default() }, 16, 16, 1);
}

#[test]
fn three_block_softmax_gradients_on_odd_shape() {
    let cfg = ModelConfig { contracting_blocks: 3, base_width: 2, classes: 3, head: Head::Softmax, ..ModelConfig::default() };
    check_gradients(cfg, 12, 20, 2);
}

#[test]
fn gradients_without_aggregation_branch() {
    let cfg = ModelConfig { contracting_blocks: 2, base_width: 3, use_aggregation_branch: false, ..ModelConfig::default() };
    check_gradients(cfg, 8, 8, 3);
}

#[test]
fn checkpoint_restores_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (model, mut rng) = randomized(ModelConfig { contracting_blocks: 2, base_width: 3, ..ModelConfig::default() }, 9);
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &model, 9, 4).unwrap();
    let (back, header) = checkpoint::load(&path).unwrap();
    assert_eq!((header.seed, header.epoch), (9, 4));
    assert_eq!(back.params(), model.params());
    let raw = Raster::new(37, 50, 4, (0..37 * 50 * 4).map(|_| rng.random_range(0..4000u16)).collect()).unwrap();
    let cfg = PredictConfig { patch_size: 32, ..PredictConfig::default() };
    let a = predict_scene(&model, &raw, &cfg).unwrap();
    let b = predict_scene(&back, &raw, &cfg).unwrap();
    assert_eq!(a.map.map.dims(), (37, 50));
    assert_eq!(a.map.map.data(), b.map.map.data());
    assert_eq!(a.masks, b.masks);
}
