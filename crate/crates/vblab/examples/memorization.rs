//! The memorization experiment from the guide: an over-parameterized MLP on
//! easy 10-class blobs with 60% of training labels flipped. Run with
//! `-- noisy` (default) to watch cross entropy peak and decay while the
//! bounded-ratio losses hold, or `-- clean` to confirm every family still
//! fits the uncorrupted task. Each run takes a few seconds in release mode.

use vblab::losses::LossSpec;
use vblab::nn::LrSchedule;
use vblab::noise::NoiseModel;
use vblab::trainer::{run_experiment, DatasetConfig, ExperimentConfig, OptimConfig};

fn base(loss: LossSpec, noisy: bool, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig::Blobs {
            k: 10,
            per_class: 1000,
            d: 20,
            separation: 10.0,
        },
        noise: if noisy {
            Some(NoiseModel::symmetric(0.6).unwrap())
        } else {
            None
        },
        loss,
        hidden: vec![128, 128],
        optim: OptimConfig {
            lr0: 0.05,
            momentum: 0.9,
            l1_decay: 0.0,
            schedule: LrSchedule::Cosine,
        },
        epochs: 100,
        batch_size: 128,
        eval_every: 1,
        test_fraction: 0.2,
        standardize: true,
        seed: Some(seed),
    }
}

fn report(tag: &str, cfg: &ExperimentConfig) {
    let r = run_experiment(cfg).unwrap();
    println!(
        "{tag:24} seed={} best={:.4} last={:.4} gap={:.4} wall={:.1}s diverged={:?}",
        cfg.seed.unwrap(),
        r.best_acc,
        r.last_acc,
        r.gap,
        r.wall_secs,
        r.diverged
    );
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "noisy".into());
    let nce_vce =
        || LossSpec::combined(1.0, 1.0, LossSpec::Nce, LossSpec::vce(2.0).unwrap()).unwrap();
    match mode.as_str() {
        "noisy" => {
            for seed in [101u64] {
                report("ce/0.6", &base(LossSpec::Ce, true, seed));
                report("vce(2)/0.6", &base(LossSpec::vce(2.0).unwrap(), true, seed));
                report("nce+vce(2)/0.6", &base(nce_vce(), true, seed));
            }
        }
        "clean" => {
            let losses: Vec<(&str, LossSpec)> = vec![
                ("ce", LossSpec::Ce),
                ("mae", LossSpec::Mae),
                ("el", LossSpec::El),
                ("sl", LossSpec::Sl),
                ("vce(2)", LossSpec::vce(2.0).unwrap()),
                ("vel(3)", LossSpec::vel(3.0).unwrap()),
                ("vsl(0.5)", LossSpec::vsl(0.5).unwrap()),
                ("nce", LossSpec::Nce),
                ("nce+vce(2)", nce_vce()),
            ];
            for (tag, loss) in losses {
                report(tag, &base(loss, false, 101));
            }
        }
        other => {
            eprintln!("unknown mode {other}; expected noisy or clean");
            std::process::exit(2);
        }
    }
}
