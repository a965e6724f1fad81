use cru::nn::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // small BN net to localize: 3 -> 4 (BN, relu) -> 1 (sigmoid)
    let specs = [
        LayerSpec { in_dim: 3, out_dim: 4, batch_norm: true, activation: Activation::Relu },
        LayerSpec { in_dim: 4, out_dim: 1, batch_norm: false, activation: Activation::Sigmoid },
    ];
    for seed in 0..4u64 {
        let model = Mlp::init(&specs, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let batch = Tensor2::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let targets = Tensor2::from_vec(5, 1, (0..5).map(|i| (i % 2) as f64).collect()).unwrap();
        let params = model.params_flat();
        let (probs, cache) = model.forward(&batch, Mode::Train).unwrap();
        let (_, dprobs) = bce_loss(&probs, &targets).unwrap();
        let (grads, _) = model.backward(&cache, &dprobs).unwrap();
        let analytic = grads.flat();
        let mut probe = model.clone();
        let mut f = |p: &[f64]| {
            probe.set_params_flat(p);
            let (probs, _) = probe.forward(&batch, Mode::Train).unwrap();
            bce_loss(&probs, &targets).unwrap().0
        };
        // manual loop to find worst index
        let eps = 1e-5;
        let mut work = params.clone();
        let (mut worst, mut wi, mut wa, mut wn) = (0.0f64, 0usize, 0.0, 0.0);
        for i in 0..params.len() {
            let orig = work[i];
            work[i] = orig + eps; let fp = f(&work);
            work[i] = orig - eps; let fm = f(&work);
            work[i] = orig;
            let n = (fp - fm) / (2.0 * eps);
            let rel = (analytic[i] - n).abs() / 1e-8f64.max(analytic[i].abs() + n.abs());
            if rel > worst { worst = rel; wi = i; wa = analytic[i]; wn = n; }
        }
        // layer1: weight 12, bias 4, gamma 4, beta 4 = 24; layer2: weight 4 bias 1
        let region = if wi < 12 { "W1" } else if wi < 16 { "b1" } else if wi < 20 { "gamma" } else if wi < 24 { "beta" } else if wi < 28 { "W2" } else { "b2" };
        println!("seed {seed}: worst {worst:.3e} at {wi} ({region}): analytic {wa:.6e} numeric {wn:.6e}");
    }
}
