use std::path::{Path, PathBuf};
use std::time::Instant;

use alignlab::config::ExperimentConfig;
use alignlab::corpus::MixName;
use alignlab::pipeline::*;

fn main() {
    let out = PathBuf::from("/tmp/calib");
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = out.clone();
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.align_steps = steps;
    }
    if let Some(lr) = std::env::args().nth(2).and_then(|s| s.parse().ok()) {
        cfg.align_lr = lr;
    }
    cfg.validate().unwrap();

    std::fs::create_dir_all(out.join("weights")).unwrap();
    if !out.join("corpus/mix2.mbc1").is_file() {
        let t = Instant::now();
        synth_data(&cfg).unwrap();
        eprintln!("synth-data in {:.1?}", t.elapsed());
    }
    if !out.join("weights/encoder.mbw1").is_file() {
        let t = Instant::now();
        let acc = pretrain_encoder_stage(&cfg).unwrap();
        eprintln!("encoder in {:.1?}, frame accuracy {acc:.3}", t.elapsed());
    }
    std::fs::copy(Path::new("/tmp/bench_lm.mbw1"), out.join("weights/lm_base.mbw1")).unwrap();

    let t = Instant::now();
    let curve = train_align_stage(&cfg, MixName::Mix2, cfg.lm.d_lm).unwrap();
    eprintln!(
        "align mix2 in {:.1?}, loss {:.3} -> {:.3}",
        t.elapsed(),
        curve[0],
        curve[curve.len() - 1]
    );
    let t = Instant::now();
    let report = eval_stage(&cfg).unwrap();
    eprintln!("eval in {:.1?}", t.elapsed());
    eprint!("{}", report.to_tsv());

    if std::env::args().any(|a| a == "--sweeps") {
        let t = Instant::now();
        train_align_stage(&cfg, MixName::Mix3, cfg.lm.d_lm).unwrap();
        for &dim in &[96usize, 64, 32] {
            train_align_stage(&cfg, MixName::Mix2, dim).unwrap();
        }
        eprintln!("extra aligns in {:.1?}", t.elapsed());
        let report = eval_stage(&cfg).unwrap();
        eprint!("{}", report.to_tsv());
        let t = Instant::now();
        let report = svd_sweep_stage(&cfg).unwrap();
        eprintln!("svd sweep in {:.1?}", t.elapsed());
        eprint!("{}", report.to_tsv());
        let report = dim_sweep_stage(&cfg).unwrap();
        eprint!("{}", report.to_tsv());
    }
}
