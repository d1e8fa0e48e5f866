mod common;

use common::{activations, fd_gradient, random_mlp, rel_err, uniform_vec};
use pgd_multitarget::losses::SurrogateLoss;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn mlp_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e1d);
    let mut worst: f64 = 0.0;
    for m in 0..150 {
        let act = &activations()[m % 3];
        let d = rng.gen_range(1..=6);
        let c = rng.gen_range(2..=6);
        let (width, depth) = (rng.gen_range(1..=16), rng.gen_range(1..=3));
        let model = random_mlp(&mut rng, d, width, depth, c, act);
        let x = uniform_vec(&mut rng, d, 1.0);
        let cot = uniform_vec(&mut rng, c, 1.0);
        let g = model.input_gradient(&x, &cot).unwrap();
        let fd = fd_gradient(&model, &x, &cot, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_gradient_chain_matches_differences(seed in any::<u64>(), which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_mlp(&mut rng, 3, 8, 2, 4, &activations()[1]);
        let x = uniform_vec(&mut rng, 3, 1.0);
        let loss = [SurrogateLoss::CrossEntropy, SurrogateLoss::LogitDiff { target: 2 }, SurrogateLoss::LogitDiff { target: 3 }][which];
        let z = model.forward(&x).unwrap();
        let cot = loss.logit_gradient(&z, 0).unwrap();
        let g = model.input_gradient(&x, &cot).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss.value(&model.forward(&xp).unwrap(), 0).unwrap()
                - loss.value(&model.forward(&xm).unwrap(), 0).unwrap())
                / (2.0 * h);
            prop_assert!(common::rel_err(g[i], fd) <= 1e-4);
        }
    }
}
