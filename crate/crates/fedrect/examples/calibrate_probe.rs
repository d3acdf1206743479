// Scratch probe for tuning the acceptance experiments (temporary).

use fedrect::analysis::{optimal_lambda, quadratic_descent, speedup_ratio, EstimatorStats};

fn main() {
    let stats = EstimatorStats::new(100, 0.9, 0.1, 9.9).unwrap();
    let lstar = optimal_lambda(&stats).unwrap();
    println!("speedup = {}", speedup_ratio(&stats).unwrap());
    println!("lambda* = {lstar}");
    for target in [0.9, 0.45, 0.2] {
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let zoo = quadratic_descent(&stats, 0.0, 10.0, target, 2_000_000, seed).unwrap();
            let mixed = quadratic_descent(&stats, lstar, 10.0, target, 2_000_000, seed).unwrap();
            match (zoo.iterations, mixed.iterations) {
                (Some(a), Some(b)) if b > 0 => ratios.push(a as f64 / b as f64),
                other => println!("seed {seed}: unreached {other:?}"),
            }
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if !ratios.is_empty() {
            println!(
                "target {target}: n={} median ratio = {:.3}, min {:.3}, max {:.3}",
                ratios.len(),
                ratios[ratios.len() / 2],
                ratios[0],
                ratios[ratios.len() - 1]
            );
        }
    }
}
