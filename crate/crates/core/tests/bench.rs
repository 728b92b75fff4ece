use std::collections::HashSet;

use sha2::{Digest, Sha256};
use uniseq::baselines::LayoutKind;
use uniseq::bench::{
    chi_square_p, fit_scaling_exponent, gen_synthetic_task, records_exponent, resampling_frequencies, run_benchmark, run_toy_task,
    toy_vocab, write_csv, BenchConfig, SyntheticRule, SyntheticTaskSpec,
};
use uniseq::model::{LossMask, ModelConfig};
use uniseq::nn::AdamConfig;
use uniseq::task::{serialize_example, TemplateRegistry};
use uniseq::train::TrainConfig;

fn fingerprint(tokens: &[u32]) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.to_le_bytes());
    }
    h.finalize().into()
}

#[test]
fn corpora_are_deterministic_and_disjoint() {
    let vocab = toy_vocab(3, 32, 32).unwrap();
    let registry = TemplateRegistry::default_registry();
    for rule in [SyntheticRule::TokenTts, SyntheticRule::Denoise] {
        let spec = SyntheticTaskSpec::reference(rule, 5);
        let (train, eval) = gen_synthetic_task(&spec, &vocab).unwrap();
        assert_eq!((train.len(), eval.len()), (2000, 200));
        assert_eq!((train.clone(), eval.clone()), gen_synthetic_task(&spec, &vocab).unwrap());
        let hashes = |xs: &[uniseq::task::TaskExample]| -> HashSet<[u8; 32]> {
            xs.iter().map(|x| fingerprint(&serialize_example(&vocab, &registry, x).unwrap().tokens)).collect()
        };
        let (a, b) = (hashes(&train), hashes(&eval));
        assert_eq!(a.len() + b.len(), 2200);
        assert_eq!(a.intersection(&b).count(), 0);
        let table = spec.table();
        for ex in &train[..20] {
            // every target frame is the image of one symbol under the table
            for t in 0..16 {
                let frame = ex.target.frame(t);
                assert!((0..32).any(|s| (0..3).all(|k| table[k][s] == frame[k])));
            }
        }
    }
}

#[test]
fn small_benchmark_grid() {
    let cfg = BenchConfig {
        archs: LayoutKind::ALL.to_vec(),
        frames: vec![8, 16, 32],
        levels: vec![2, 3],
        iters: 2,
        warmup: 1,
        ..Default::default()
    };
    let records = run_benchmark(&cfg).unwrap();
    assert_eq!(records.len(), 5 * 3 * 2);
    assert!(records.iter().all(|r| r.ms_per_iter > 0.0 && r.attn_pairs > 0));
    let flatten = records_exponent(&records, LayoutKind::Flatten, 3).unwrap();
    assert!((flatten - 2.0).abs() < 1e-9);
    let mut csv = Vec::new();
    write_csv(&records, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 31);
    assert!(run_benchmark(&BenchConfig { frames: vec![], ..cfg }).is_err());
}

#[test]
fn scaling_fit_on_analytic_series() {
    let xs = [64.0, 128.0, 256.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 0.5 * x.powi(2)).collect();
    assert!((fit_scaling_exponent(&xs, &ys).unwrap() - 2.0).abs() < 1e-9);
    assert!(fit_scaling_exponent(&[64.0; 3], &ys).is_err());
}

#[test]
fn alpha_zero_resampling_is_uniform() {
    let freq = resampling_frequencies(&[2000, 50, 700], 0.0, 10_000, 1).unwrap();
    assert!(chi_square_p(&freq, &[1.0 / 3.0; 3]).unwrap() > 0.01, "{freq:?}");
}

#[test]
fn toy_training_runs_end_to_end() {
    let spec = SyntheticTaskSpec { train: 40, eval: 5, frames: 4, ..SyntheticTaskSpec::reference(SyntheticRule::TokenTts, 0) };
    let mc = ModelConfig {
        global_width: 16, global_layers: 1, global_heads: 2, global_ff: 32,
        local_width: 8, local_layers: 1, local_heads: 2, local_ff: 16,
        continuous_dim: 1, max_patches: 24, ..Default::default()
    };
    let tc = TrainConfig {
        steps: 30, batch_size: 4, loss_mask: LossMask::TargetOnly, eval_every: 10,
        optimizer: AdamConfig { peak_lr: 3e-3, warmup: 10, ..Default::default() }, ..Default::default()
    };
    let (_, run) = run_toy_task(&spec, &mc, &tc).unwrap();
    assert_eq!(run.report.steps_run, 30);
    assert_eq!(run.report.validation.len(), 3);
    assert!(run.report.losses[29] < run.report.losses[0]);
    assert!((0.0..=1.0).contains(&run.accuracy));
}
