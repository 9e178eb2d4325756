//! q sweep on the ordered DSBM.
//!
//! `cargo run --release --example ordered_dsbm -- [N] [alpha*] [beta*]`
//! (defaults 2500, 0.1, 0.05; five seeds, 60/20/20 node split).

use magnet_core::data::node_split_fraction;
use magnet_core::dsbm::{gaussian_features, generate, ordered_params};
use magnet_core::model::MagNetConfig;
use magnet_core::train::{q_sweep, Dataset, Experiment, TaskData, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> magnet_core::Result<()> {
    let n: usize = arg(1, 2500);
    let alpha: f64 = arg(2, 0.1);
    let beta: f64 = arg(3, 0.05);
    let seeds: Vec<u64> = (0..5).collect();
    let datasets = seeds
        .iter()
        .map(|&s| {
            let sample = generate(&ordered_params(5, n, alpha, alpha, beta, s)?)?;
            Ok(Dataset {
                data: TaskData::Node {
                    features: gaussian_features(n, s),
                    labels: sample.labels,
                    split: node_split_fraction(n, (0.6, 0.2, 0.2), s)?,
                },
                graph: sample.graph,
            })
        })
        .collect::<magnet_core::Result<Vec<_>>>()?;
    let base = Experiment {
        label: String::new(),
        model: MagNetConfig {
            num_layers: 3,
            k: 1,
            ..MagNetConfig::default()
        },
        train: TrainConfig {
            lr: 1e-2,
            ..TrainConfig::default()
        },
    };
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get());
    let table = q_sweep(&[0.0, 0.05, 0.1, 0.15, 0.2, 0.25], &base, &datasets, &seeds, workers)?;
    print!("{}", table.summary_text());
    Ok(())
}
