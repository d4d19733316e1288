mod common;

#[test]
fn backward_matches_central_differences_on_random_nets() {
    let mut worst = (0.0f64, String::new());
    for seed in 0..200 {
        let g = common::gradcheck_random(seed);
        assert!(g.params > 0);
        if g.rel_error > worst.0 {
            worst = (g.rel_error, g.describe.clone());
        }
        assert!(g.rel_error <= 1e-5, "seed {seed}: relative error {:.3e} on {}", g.rel_error, g.describe);
    }
    eprintln!("worst relative error {:.3e} ({})", worst.0, worst.1);
}
