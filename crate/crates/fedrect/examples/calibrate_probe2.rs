// Scratch probe for the end-to-end race (temporary).

use fedrect::data::{partition_dirichlet, split_eval, synthetic_mixture};
use fedrect::federation::{
    run_experiment, uniform_weights, CostModel, DatasetBundle, ExperimentSetup, FederationConfig,
    RunMode,
};
use fedrect::guidance::AlphaMode;
use fedrect::model::Arch;

fn bundle(seed: u64, n: usize) -> DatasetBundle {
    let data = synthetic_mixture(99, 10, 3000, 1.2, 3.0, seed).unwrap();
    let (train, eval) = split_eval(&data, 0.2, seed).unwrap();
    let part = partition_dirichlet(&train, n, 1.0, 0.25, seed).unwrap();
    DatasetBundle { clients: part.clients, public: part.public, eval }
}

fn setup(mode: RunMode, seed: u64, eta: f64, m_max: usize, probes: usize, rounds: u64) -> ExperimentSetup {
    let n = 20;
    ExperimentSetup {
        mode,
        federation: FederationConfig {
            clients: n,
            weights: uniform_weights(n),
            eta,
            epsilon: 1e-3,
            alpha: 0.5,
            alpha_mode: AlphaMode::Fixed,
            gamma: 5,
            m_max,
            probes,
            rounds_total: rounds,
            cloud_sync_every: 1,
            root_seed: seed,
            client_batch_size: 8,
            cloud_batch_size: 16,
            cloud_eta: 0.1,
            basis_tol: 1e-10,
        },
        arch: Arch::new(&[99, 10]).unwrap(),
        init_seed: seed,
        cost: CostModel::default(),
        spc_enabled: true,
        dtc: None,
        pipeline_layers: None,
        model_bytes: None,
    }
}

fn main() {
    let rounds = 300u64;
    for eta in [0.5, 1.0, 2.0] {
        for m_max in [2usize, 8] {
            for probes in [1usize, 2] {
                let mut ratios = Vec::new();
                let mut zoo_accs = Vec::new();
                let mut zgr_accs = Vec::new();
                for seed in 0..3u64 {
                    let data = bundle(1000 + seed, 20);
                    let zoo = run_experiment(&setup(RunMode::PureZoo, seed, eta, m_max, probes, rounds), &data, false).unwrap();
                    let zgr = run_experiment(&setup(RunMode::Zgr, seed, eta, m_max, probes, rounds), &data, false).unwrap();
                    let zoo_final = zoo.metrics.rows().last().unwrap().eval_accuracy;
                    let reach = zgr.metrics.first_round_reaching(zoo_final);
                    zoo_accs.push(zoo_final);
                    zgr_accs.push(zgr.metrics.rows().last().unwrap().eval_accuracy);
                    match reach {
                        Some(r) => ratios.push((r + 1) as f64 / rounds as f64),
                        None => ratios.push(f64::INFINITY),
                    }
                }
                ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
                println!(
                    "eta={eta} m_max={m_max} K={probes}: ratios={ratios:?} zoo_acc={zoo_accs:?} zgr_acc={zgr_accs:?}"
                );
            }
        }
    }
}
