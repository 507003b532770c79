//! Compares reverse-mode gradients of a small perceptron with central
//! differences and prints the worst relative error per parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpi::diffmath::layers::Mlp;
use dpi::diffmath::{grad_check, Activation, ParamSet, Tensor};

fn main() -> dpi::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = ParamSet::new("mlp");
    let mlp = Mlp::new(&mut net, "m", &[3, 8, 2], Activation::Tanh, &mut rng)?;
    let x = Tensor::from_rows(&[vec![0.3, -1.0, 0.5], vec![1.2, 0.1, -0.4]])?;
    let target = Tensor::from_rows(&[vec![0.5, -0.5], vec![-1.0, 0.25]])?;

    let mut sets = vec![net];
    let report = grad_check(
        &mut sets,
        |g, s| {
            let input = g.input(x.clone());
            let y = mlp.forward(g, &s[0], input);
            let t = g.constant(target.clone());
            let diff = g.sub(y, t);
            let sq = g.mul(diff, diff);
            Ok(g.mean(sq))
        },
        1e-4,
    )?;
    for entry in &report.entries {
        println!(
            "{}.{:<10} max relative error {:.2e}",
            entry.set, entry.param, entry.max_rel_error
        );
    }
    println!("passed: {} (worst {:.2e})", report.passed(), report.worst());
    Ok(())
}
