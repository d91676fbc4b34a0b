//! Pipeline stages behind the CLI subcommands. Every stage reads its
//! dependencies from disk, writes its artifacts plus a `.meta` sidecar
//! carrying the config hash and corpus seed, and never mutates an input
//! artifact.

use std::path::{Path, PathBuf};

use crate::alignment::{
    load_alignment, save_alignment, train_alignment, AlignMeta, AlignmentModule, System,
    TrainHyper,
};
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_mix, build_test_set, instruction_corpus, lm_pretrain_corpus, load_samples, save_samples,
    write_manifest, DatasetMix, MixName, Task, TaskSample, ToyWorld,
};
use crate::encoder::{load_encoder, pretrain_encoder, save_encoder, Encoder};
use crate::error::{Error, Result};
use crate::eval::{run_eval, MetricsReport, ReportRow};
use crate::lm::{
    finetune_chat, load_lm, load_lora, lora_finetune, pretrain_lm, save_lm, save_lora, Lm,
    Variant,
};
use crate::rng::{derive_sample_seed, derive_seed};

/// Id base for the encoder pretraining corpus: above every mix id, below
/// the held-out test offset, so the sentence space stays the training one.
const ENCODER_ID_BASE: u64 = 1 << 31;

pub struct Paths {
    out: PathBuf,
}

impl Paths {
    pub fn new(cfg: &ExperimentConfig) -> Paths {
        Paths { out: cfg.out_dir.clone() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }

    pub fn weights_dir(&self) -> PathBuf {
        self.out.join("weights")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn config_dump(&self) -> PathBuf {
        self.out.join("config.resolved")
    }

    pub fn mix(&self, name: MixName) -> PathBuf {
        self.corpus_dir().join(format!("{}.mbc1", name.as_str()))
    }

    pub fn manifest(&self, name: MixName) -> PathBuf {
        self.corpus_dir().join(format!("{}.manifest.tsv", name.as_str()))
    }

    pub fn test_set(&self, task: Task) -> PathBuf {
        self.corpus_dir().join(format!("test_{}.mbc1", task.name()))
    }

    pub fn encoder_corpus(&self) -> PathBuf {
        self.corpus_dir().join("encoder_asr.mbc1")
    }

    pub fn encoder(&self) -> PathBuf {
        self.weights_dir().join("encoder.mbw1")
    }

    pub fn lm(&self, variant: Variant) -> PathBuf {
        self.weights_dir().join(format!("lm_{}.mbw1", variant.as_str()))
    }

    pub fn alignment(&self, mix: MixName, dim: usize, d_lm: usize) -> PathBuf {
        let stem = if dim == d_lm {
            format!("align_{}", mix.as_str())
        } else {
            format!("align_{}_dim{}", mix.as_str(), dim)
        };
        self.weights_dir().join(format!("{stem}.mbw1"))
    }

    pub fn lora(&self, mix: MixName) -> PathBuf {
        self.weights_dir().join(format!("lora_{}.mbw1", mix.as_str()))
    }

    pub fn loss_curve(&self, mix: MixName, dim: usize, d_lm: usize) -> PathBuf {
        let stem = if dim == d_lm {
            format!("loss_align_{}", mix.as_str())
        } else {
            format!("loss_align_{}_dim{}", mix.as_str(), dim)
        };
        self.reports_dir().join(format!("{stem}.tsv"))
    }

    pub fn main_report(&self) -> PathBuf {
        self.reports_dir().join("main.tsv")
    }

    pub fn svd_report(&self) -> PathBuf {
        self.reports_dir().join("svd_sweep.tsv")
    }

    pub fn dim_report(&self) -> PathBuf {
        self.reports_dir().join("dim_sweep.tsv")
    }

    pub fn swap_report(&self) -> PathBuf {
        self.reports_dir().join("swap.tsv")
    }

    pub fn collated_report(&self) -> PathBuf {
        self.reports_dir().join("report.tsv")
    }
}

fn ensure_dirs(paths: &Paths) -> Result<()> {
    std::fs::create_dir_all(paths.corpus_dir())?;
    std::fs::create_dir_all(paths.weights_dir())?;
    std::fs::create_dir_all(paths.reports_dir())?;
    Ok(())
}

fn stage_seed(cfg: &ExperimentConfig, name: &str) -> u64 {
    derive_seed(cfg.global_seed, name)
}

/// Write `<artifact>.meta` recording provenance.
fn write_sidecar(artifact: &Path, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut text = format!(
        "config_hash={}\ncorpus_seed={}\nglobal_seed={}\n",
        cfg.hash(),
        cfg.corpus_seed,
        cfg.global_seed
    );
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    let mut meta = artifact.as_os_str().to_owned();
    meta.push(".meta");
    std::fs::write(PathBuf::from(meta), text)?;
    Ok(())
}

fn read_sidecar_field(artifact: &Path, field: &str) -> Result<String> {
    let mut meta = artifact.as_os_str().to_owned();
    meta.push(".meta");
    let meta = PathBuf::from(meta);
    let text = std::fs::read_to_string(&meta)
        .map_err(|_| Error::Dependency(meta.display().to_string()))?;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix(&format!("{field}=")) {
            return Ok(v.trim().to_string());
        }
    }
    Err(Error::WeightFormat(format!(
        "{}: sidecar lacks field '{field}'",
        meta.display()
    )))
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Dependency(path.display().to_string()))
    }
}

// ── stages ──────────────────────────────────────────────────────────────

/// Generate all three training mixes, the held-out ASR/ST test sets, and
/// the encoder pretraining corpus.
pub fn synth_data(cfg: &ExperimentConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    std::fs::write(paths.config_dump(), cfg.resolved())?;

    let world = ToyWorld::new(cfg.corpus_seed, cfg.encoder.d_feat);
    for name in [MixName::Mix1, MixName::Mix2, MixName::Mix3] {
        let mix = DatasetMix {
            name,
            seed: derive_seed(cfg.corpus_seed, name.as_str()),
            scale: cfg.scale,
        };
        let samples = build_mix(&world, &mix)?;
        save_samples(&paths.mix(name), &samples)?;
        write_manifest(&paths.manifest(name), &samples)?;
        write_sidecar(&paths.mix(name), cfg, &[("samples", samples.len().to_string())])?;
    }

    for task in [Task::Asr, Task::St] {
        let seed = derive_seed(cfg.corpus_seed, &format!("test-{}", task.name()));
        let set = build_test_set(&world, task, cfg.test_count, seed)?;
        save_samples(&paths.test_set(task), &set)?;
        write_sidecar(&paths.test_set(task), cfg, &[("samples", set.len().to_string())])?;
    }

    let enc_seed = derive_seed(cfg.corpus_seed, "encoder-corpus");
    let enc_samples: Vec<TaskSample> = (0..cfg.encoder_corpus_size)
        .map(|i| {
            let id = ENCODER_ID_BASE + i as u64;
            world.make_task_sample(Task::Asr, derive_sample_seed(enc_seed, id), id)
        })
        .collect::<Result<_>>()?;
    save_samples(&paths.encoder_corpus(), &enc_samples)?;
    write_sidecar(&paths.encoder_corpus(), cfg, &[("samples", enc_samples.len().to_string())])?;
    Ok(())
}

/// Frame-classification pretraining of the speech encoder; freezes and
/// saves it.
pub fn pretrain_encoder_stage(cfg: &ExperimentConfig) -> Result<f32> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    require(&paths.encoder_corpus())?;
    let samples = load_samples(&paths.encoder_corpus())?;
    let (encoder, accuracy) = pretrain_encoder(&samples, cfg.encoder, stage_seed(cfg, "encoder"))?;
    save_encoder(&paths.encoder(), &encoder)?;
    write_sidecar(
        &paths.encoder(),
        cfg,
        &[
            ("frame_accuracy", format!("{accuracy:.4}")),
            ("checksum", encoder.checksum()),
        ],
    )?;
    Ok(accuracy)
}

/// Next-token pretraining of the base LM on the synthetic text corpus;
/// freezes and saves it.
pub fn pretrain_lm_stage(cfg: &ExperimentConfig) -> Result<f64> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let world = ToyWorld::new(cfg.corpus_seed, cfg.encoder.d_feat);
    let corpus = lm_pretrain_corpus(&world, cfg.lm_corpus_items, stage_seed(cfg, "lm-corpus"));
    let (lm, ppl) = pretrain_lm(&corpus, cfg.lm, stage_seed(cfg, "lm"))?;
    save_lm(&paths.lm(Variant::Base), &lm)?;
    write_sidecar(
        &paths.lm(Variant::Base),
        cfg,
        &[("perplexity", format!("{ppl:.4}")), ("checksum", lm.checksum())],
    )?;
    Ok(ppl)
}

/// Instruction fine-tuning of the base LM into the homologous chat
/// variant.
pub fn finetune_chat_stage(cfg: &ExperimentConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    require(&paths.lm(Variant::Base))?;
    let base = load_lm(&paths.lm(Variant::Base), cfg.lm, Variant::Base)?;
    let world = ToyWorld::new(cfg.corpus_seed, cfg.encoder.d_feat);
    let corpus = instruction_corpus(&world, cfg.chat_corpus_items, stage_seed(cfg, "chat-corpus"));
    let chat = finetune_chat(&base, &corpus, stage_seed(cfg, "chat"))?;
    save_lm(&paths.lm(Variant::Chat), &chat)?;
    write_sidecar(&paths.lm(Variant::Chat), cfg, &[("checksum", chat.checksum())])?;
    Ok(())
}

fn load_backbones(cfg: &ExperimentConfig, paths: &Paths) -> Result<(Encoder, Lm)> {
    require(&paths.encoder())?;
    require(&paths.lm(Variant::Base))?;
    let encoder = load_encoder(&paths.encoder(), cfg.encoder)?;
    let lm = load_lm(&paths.lm(Variant::Base), cfg.lm, Variant::Base)?;
    Ok((encoder, lm))
}

/// Train the alignment map on one mix with the given trainable dimension;
/// returns the per-step loss curve.
pub fn train_align_stage(cfg: &ExperimentConfig, mix: MixName, dim: usize) -> Result<Vec<f32>> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let (encoder, lm) = load_backbones(cfg, &paths)?;
    require(&paths.mix(mix))?;
    let samples = load_samples(&paths.mix(mix))?;

    let enc_sum = encoder.checksum();
    let lm_sum = lm.checksum();
    let seed = stage_seed(cfg, &format!("align-{}-{dim}", mix.as_str()));
    let module = AlignmentModule::new(cfg.encoder.d_enc, cfg.lm.d_lm, dim, seed)?;
    let hyper = TrainHyper {
        lr: cfg.align_lr,
        batch: cfg.align_batch,
        steps: cfg.align_steps,
        seed,
    };
    let curve = train_alignment(&samples, &module, &encoder, &lm, hyper)?;
    if encoder.checksum() != enc_sum || lm.checksum() != lm_sum {
        return Err(Error::Integrity("frozen backbone changed during alignment training".into()));
    }

    let artifact = paths.alignment(mix, dim, cfg.lm.d_lm);
    save_alignment(
        &artifact,
        &module,
        &AlignMeta {
            trainable_dim: dim,
            mix: mix.as_str().to_string(),
            seed,
            lr: hyper.lr,
            batch: hyper.batch,
            steps: hyper.steps,
        },
    )?;
    write_sidecar(&artifact, cfg, &[("checksum", module.checksum())])?;

    let mut tsv = String::from("step\tloss\n");
    for (i, l) in curve.iter().enumerate() {
        tsv.push_str(&format!("{i}\t{l:.6}\n"));
    }
    std::fs::write(paths.loss_curve(mix, dim, cfg.lm.d_lm), tsv)?;
    Ok(curve)
}

/// LoRA fine-tuning of (q, v) adapters on top of a trained, frozen
/// alignment module.
pub fn lora_finetune_stage(cfg: &ExperimentConfig, mix: MixName) -> Result<()> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let (encoder, lm) = load_backbones(cfg, &paths)?;
    let align_path = paths.alignment(mix, cfg.lm.d_lm, cfg.lm.d_lm);
    require(&align_path)?;
    let (module, _) = load_alignment(&align_path)?;
    module.freeze();
    require(&paths.mix(mix))?;
    let samples = load_samples(&paths.mix(mix))?;

    let hyper = TrainHyper {
        lr: cfg.lora_lr,
        batch: cfg.align_batch,
        steps: cfg.lora_steps,
        seed: stage_seed(cfg, &format!("lora-{}", mix.as_str())),
    };
    let lora = lora_finetune(&lm, &samples, &encoder, &module, cfg.lora, hyper)?;
    save_lora(&paths.lora(mix), &lora)?;
    write_sidecar(&paths.lora(mix), cfg, &[("params", lora.param_count().to_string())])?;
    Ok(())
}

// ── evaluation stages ───────────────────────────────────────────────────

fn load_test_sets(paths: &Paths) -> Result<(Vec<TaskSample>, Vec<TaskSample>)> {
    require(&paths.test_set(Task::Asr))?;
    require(&paths.test_set(Task::St))?;
    Ok((
        load_samples(&paths.test_set(Task::Asr))?,
        load_samples(&paths.test_set(Task::St))?,
    ))
}

/// One report row: CER from the ASR test set, ROUGE-L from the ST set.
fn eval_row(
    system: &System,
    asr: &[TaskSample],
    st: &[TaskSample],
    variant: &str,
    mix: &str,
) -> Result<ReportRow> {
    let a = run_eval(system, asr, Task::Asr)?;
    let s = run_eval(system, st, Task::St)?;
    Ok(ReportRow {
        variant: variant.to_string(),
        mix: mix.to_string(),
        k: system.svd_k,
        dim: Some(system.module.trainable_dim),
        cer: a.cer,
        rouge_l: s.rouge_l,
        n: a.n + s.n,
        fail: a.fail + s.fail,
    })
}

fn write_report(path: &Path, cfg: &ExperimentConfig, report: &MetricsReport) -> Result<()> {
    std::fs::write(path, report.to_tsv())?;
    write_sidecar(path, cfg, &[("rows", report.rows.len().to_string())])?;
    Ok(())
}

/// Main table: untrained baseline, every trained mix present, and the
/// LoRA variant when its adapter artifact exists.
pub fn eval_stage(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let (encoder, lm) = load_backbones(cfg, &paths)?;
    let (asr, st) = load_test_sets(&paths)?;
    let mut report = MetricsReport::default();

    let untrained = AlignmentModule::new(
        cfg.encoder.d_enc,
        cfg.lm.d_lm,
        cfg.lm.d_lm,
        stage_seed(cfg, "untrained"),
    )?;
    untrained.freeze();
    let mut sys = System::new(&encoder, &untrained, &lm);
    sys.max_new = cfg.max_new;
    report.rows.push(eval_row(&sys, &asr, &st, "untrained", "-")?);

    let mut any_trained = false;
    for mix in [MixName::Mix1, MixName::Mix2, MixName::Mix3] {
        let path = paths.alignment(mix, cfg.lm.d_lm, cfg.lm.d_lm);
        if !path.is_file() {
            continue;
        }
        any_trained = true;
        let (module, _) = load_alignment(&path)?;
        module.freeze();
        let mut sys = System::new(&encoder, &module, &lm);
        sys.max_new = cfg.max_new;
        report.rows.push(eval_row(&sys, &asr, &st, "base", mix.as_str())?);

        let lora_path = paths.lora(mix);
        if lora_path.is_file() {
            let lora = load_lora(&lora_path, &cfg.lm, cfg.lora)?;
            let mut sys = System::new(&encoder, &module, &lm);
            sys.lora = Some(&lora);
            sys.max_new = cfg.max_new;
            report.rows.push(eval_row(&sys, &asr, &st, "base+lora", mix.as_str())?);
        }
    }
    if !any_trained {
        return Err(Error::Dependency(
            paths.alignment(MixName::Mix2, cfg.lm.d_lm, cfg.lm.d_lm).display().to_string(),
        ));
    }
    write_report(&paths.main_report(), cfg, &report)?;
    Ok(report)
}

/// Rank-truncation sweep over the mapped speech features (mix2 module):
/// exactly one row per configured k.
pub fn svd_sweep_stage(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let (encoder, lm) = load_backbones(cfg, &paths)?;
    let (asr, st) = load_test_sets(&paths)?;
    let align_path = paths.alignment(MixName::Mix2, cfg.lm.d_lm, cfg.lm.d_lm);
    require(&align_path)?;
    let (module, _) = load_alignment(&align_path)?;
    module.freeze();

    let mut report = MetricsReport::default();
    for &k in &cfg.k_list {
        let mut sys = System::new(&encoder, &module, &lm);
        sys.svd_k = k;
        sys.max_new = cfg.max_new;
        report.rows.push(eval_row(&sys, &asr, &st, "base", "mix2")?);
    }
    write_report(&paths.svd_report(), cfg, &report)?;
    Ok(report)
}

/// Constrained-trainable-dimension sweep; requires one trained module per
/// configured dimension.
pub fn dim_sweep_stage(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let (encoder, lm) = load_backbones(cfg, &paths)?;
    let (asr, st) = load_test_sets(&paths)?;

    let mut report = MetricsReport::default();
    for &dim in &cfg.dim_list {
        let path = paths.alignment(MixName::Mix2, dim, cfg.lm.d_lm);
        require(&path)?;
        let (module, loaded_dim) = load_alignment(&path)?;
        if loaded_dim != dim {
            return Err(Error::Compatibility(format!(
                "{}: trainable_dim {loaded_dim} does not match requested {dim}",
                path.display()
            )));
        }
        module.freeze();
        let mut sys = System::new(&encoder, &module, &lm);
        sys.max_new = cfg.max_new;
        report.rows.push(eval_row(&sys, &asr, &st, "base", "mix2")?);
    }
    write_report(&paths.dim_report(), cfg, &report)?;
    Ok(report)
}

/// Transfer the mix2 alignment module, unchanged, onto the chat LM and
/// report both directions. The ST-improves / ASR-degrades direction is
/// observational output, not a gate.
pub fn swap_eval_stage(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let (encoder, base) = load_backbones(cfg, &paths)?;
    require(&paths.lm(Variant::Chat))?;
    let chat = load_lm(&paths.lm(Variant::Chat), cfg.lm, Variant::Chat)?;
    let (asr, st) = load_test_sets(&paths)?;
    let align_path = paths.alignment(MixName::Mix2, cfg.lm.d_lm, cfg.lm.d_lm);
    require(&align_path)?;
    let (module, _) = load_alignment(&align_path)?;
    module.freeze();

    let mut sys = System::new(&encoder, &module, &base);
    sys.max_new = cfg.max_new;
    let chat_sys = sys.swap_lm(&chat)?;

    let mut report = MetricsReport::default();
    report.rows.push(eval_row(&sys, &asr, &st, "base", "mix2")?);
    report.rows.push(eval_row(&chat_sys, &asr, &st, "chat-swap", "mix2")?);
    write_report(&paths.swap_report(), cfg, &report)?;
    Ok(report)
}

/// Collate every per-stage report into one table. Refuses to mix rows
/// whose sidecars record different corpus seeds.
pub fn report_stage(cfg: &ExperimentConfig) -> Result<String> {
    let paths = Paths::new(cfg);
    ensure_dirs(&paths)?;
    let tables: [(&str, PathBuf); 4] = [
        ("main", paths.main_report()),
        ("svd_sweep", paths.svd_report()),
        ("dim_sweep", paths.dim_report()),
        ("swap", paths.swap_report()),
    ];
    require(&paths.main_report())?;

    let mut out = String::from("table\tvariant\tmix\tk\tdim\tcer\trouge_l\tn\tfail\n");
    let mut seen_seed: Option<String> = None;
    for (name, path) in &tables {
        if !path.is_file() {
            continue;
        }
        let seed = read_sidecar_field(path, "corpus_seed")?;
        match &seen_seed {
            None => seen_seed = Some(seed),
            Some(s) if *s != seed => {
                return Err(Error::Config(format!(
                    "{}: corpus seed {seed} differs from {s}; refusing to collate",
                    path.display()
                )))
            }
            Some(_) => {}
        }
        let text = std::fs::read_to_string(path)?;
        for line in text.lines().skip(1) {
            out.push_str(&format!("{name}\t{line}\n"));
        }
    }
    std::fs::write(paths.collated_report(), &out)?;
    write_sidecar(&paths.collated_report(), cfg, &[])?;
    Ok(out)
}

/// The whole protocol in dependency order; what the run-all script does.
pub fn run_all(cfg: &ExperimentConfig) -> Result<()> {
    synth_data(cfg)?;
    pretrain_encoder_stage(cfg)?;
    pretrain_lm_stage(cfg)?;
    finetune_chat_stage(cfg)?;
    for &dim in &cfg.dim_list {
        train_align_stage(cfg, MixName::Mix2, dim)?;
    }
    if !cfg.dim_list.contains(&cfg.lm.d_lm) {
        train_align_stage(cfg, MixName::Mix2, cfg.lm.d_lm)?;
    }
    train_align_stage(cfg, MixName::Mix3, cfg.lm.d_lm)?;
    lora_finetune_stage(cfg, MixName::Mix2)?;
    eval_stage(cfg)?;
    svd_sweep_stage(cfg)?;
    dim_sweep_stage(cfg)?;
    swap_eval_stage(cfg)?;
    report_stage(cfg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = dir.to_path_buf();
        cfg.scale = 20;
        cfg.test_count = 3;
        cfg
    }

    #[test]
    fn synth_data_writes_all_artifacts_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        synth_data(&cfg).unwrap();
        let paths = Paths::new(&cfg);
        let first = std::fs::read(paths.mix(MixName::Mix2)).unwrap();
        assert!(paths.test_set(Task::Asr).is_file());
        assert!(paths.test_set(Task::St).is_file());
        assert!(paths.encoder_corpus().is_file());
        assert!(paths.manifest(MixName::Mix3).is_file());
        synth_data(&cfg).unwrap();
        let second = std::fs::read(paths.mix(MixName::Mix2)).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn stages_fail_with_dependency_error_when_inputs_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        assert!(matches!(pretrain_encoder_stage(&cfg), Err(Error::Dependency(_))));
        assert!(matches!(
            train_align_stage(&cfg, MixName::Mix2, 128),
            Err(Error::Dependency(_))
        ));
        assert!(matches!(eval_stage(&cfg), Err(Error::Dependency(_))));
        assert!(matches!(report_stage(&cfg), Err(Error::Dependency(_))));
    }

    #[test]
    fn report_refuses_mismatched_corpus_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let paths = Paths::new(&cfg);
        ensure_dirs(&paths).unwrap();
        let report = MetricsReport::default();
        write_report(&paths.main_report(), &cfg, &report).unwrap();
        let mut other = cfg.clone();
        other.corpus_seed += 1;
        write_report(&paths.swap_report(), &other, &report).unwrap();
        assert!(matches!(report_stage(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn sidecars_record_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        synth_data(&cfg).unwrap();
        let paths = Paths::new(&cfg);
        let hash = read_sidecar_field(&paths.mix(MixName::Mix1), "config_hash").unwrap();
        assert_eq!(hash, cfg.hash());
    }
}
