//! Command-line surface: corpus generation, staged training, captioning,
//! evaluation and the gradient-check battery.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::data::{generate_corpus, Corpus, ImageFeature, Split, Vocab};
use crate::decoding;
use crate::error::{Error, Result};
use crate::metrics::{corpus_report, DecodeMode, DecodeSettings};
use crate::numerics::finite_diff_check_conditioned;
use crate::policy::{PolicyDims, PolicyNet};
use crate::reward::{RewardDims, RewardModel};
use crate::rng::seeded;
use crate::training::{
    self, joint_train, mean_greedy_reward, policy_surrogate_value, pretrain_policy,
    pretrain_value, reward_separation, rollout, train_reward, value_surrogate_value, EpochLog,
    Trajectory,
};
use crate::value::{ValueDims, ValueNet};

#[derive(Parser)]
#[command(name = "accap", version, about = "Actor-critic caption generation on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigFlags {
    /// JSON config file; flags override file values, which override defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed (shorthand for --set seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config key, e.g. --set gamma=0.3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Use the full-scale 512-dimensional preset as the base.
    #[arg(long)]
    paper512: bool,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => Some(RunConfig::load_file(path)?),
            None => None,
        };
        let mut overlay = serde_json::Map::new();
        if self.paper512 {
            // The preset acts as a lower layer than explicit keys.
            let preset = serde_json::to_value(RunConfig::paper512()).expect("preset serializes");
            for (k, v) in preset.as_object().unwrap() {
                overlay.insert(k.clone(), v.clone());
            }
        }
        for kv in &self.set {
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| Error::Arg(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
            overlay.insert(key.to_string(), value);
        }
        if let Some(seed) = self.seed {
            overlay.insert("seed".into(), json!(seed));
        }
        RunConfig::resolve(file.as_ref(), &Value::Object(overlay))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic captioned-scene corpus.
    Datagen {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of scenes.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing output file.
        #[arg(long)]
        force: bool,
    },
    /// Train one stage of the pipeline.
    Train {
        #[command(flatten)]
        config: ConfigFlags,
        #[arg(long, value_parser = ["policy", "reward", "value", "joint"])]
        stage: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Epochs for this stage (defaults to the stage's config value).
        #[arg(long)]
        epochs: Option<u32>,
        /// Policy checkpoint (required by the value and joint stages).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Reward checkpoint (required by the value and joint stages).
        #[arg(long)]
        reward: Option<PathBuf>,
        /// Value checkpoint (required by the joint stage).
        #[arg(long)]
        value: Option<PathBuf>,
        /// Output checkpoint (single-model stages).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output policy checkpoint (joint stage).
        #[arg(long)]
        out_policy: Option<PathBuf>,
        /// Output value checkpoint (joint stage).
        #[arg(long)]
        out_value: Option<PathBuf>,
        /// Also append epoch logs to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Decode captions for a corpus split or a single feature vector.
    Caption {
        #[command(flatten)]
        config: ConfigFlags,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Value checkpoint (required by value-guided beam decoding).
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated feature vector; captions this instead of a split.
        #[arg(long)]
        feature: Option<String>,
        #[arg(long, value_parser = ["greedy", "beam"], default_value = "greedy")]
        decoder: String,
    },
    /// Evaluate a split: BLEU, ROUGE-L, consensus score and mean reward.
    Eval {
        #[command(flatten)]
        config: ConfigFlags,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_parser = ["greedy", "beam"], default_value = "greedy")]
        decoder: String,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable training objective.
    Gradcheck {
        #[command(flatten)]
        config: ConfigFlags,
        /// Fault-injection hook: corrupt one gradient and expect failure.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Dump a checkpoint header.
    Inspect {
        #[arg(long)]
        path: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen { seed, n, out, force } => cmd_datagen(seed, n, &out, force),
        Command::Train {
            config,
            stage,
            corpus,
            epochs,
            policy,
            reward,
            value,
            out,
            out_policy,
            out_value,
            log,
        } => cmd_train(TrainArgs {
            config: config.resolve()?,
            stage,
            corpus,
            epochs,
            policy,
            reward,
            value,
            out,
            out_policy,
            out_value,
            log,
        }),
        Command::Caption {
            config,
            corpus,
            policy,
            value,
            split,
            feature,
            decoder,
        } => cmd_caption(&config.resolve()?, &corpus, &policy, value.as_deref(), &split, feature.as_deref(), &decoder),
        Command::Eval {
            config,
            corpus,
            policy,
            value,
            reward,
            split,
            decoder,
            out,
        } => cmd_eval(
            &config.resolve()?,
            &corpus,
            &policy,
            value.as_deref(),
            &reward,
            &split,
            &decoder,
            out.as_deref(),
        ),
        Command::Gradcheck { config, corrupt } => cmd_gradcheck(&config.resolve()?, corrupt),
        Command::Inspect { path } => {
            let ckpt = Checkpoint::load(&path)?;
            print!("{}", checkpoint::describe(&ckpt));
            Ok(())
        }
    }
}

fn cmd_datagen(seed: u64, n: usize, out: &Path, force: bool) -> Result<()> {
    if out.exists() && !force {
        return Err(Error::Arg(format!(
            "{} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    let corpus = generate_corpus(seed, n)?;
    corpus.save(out)?;
    println!(
        "wrote {} scenes (vocab {} tokens) to {}",
        corpus.len(),
        corpus.vocab.len(),
        out.display()
    );
    Ok(())
}

struct TrainArgs {
    config: RunConfig,
    stage: String,
    corpus: PathBuf,
    epochs: Option<u32>,
    policy: Option<PathBuf>,
    reward: Option<PathBuf>,
    value: Option<PathBuf>,
    out: Option<PathBuf>,
    out_policy: Option<PathBuf>,
    out_value: Option<PathBuf>,
    log: Option<PathBuf>,
}

fn require_ckpt(path: &Option<PathBuf>, stage: &str, missing: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| {
        Error::Dependency(format!(
            "stage {stage:?} needs --{missing}, the checkpoint of the {missing} stage"
        ))
    })
}

fn require_out(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Arg(format!("missing --{flag}")))
}

fn load_corpus_checked(path: &Path) -> Result<Corpus> {
    Corpus::load(path)
}

fn check_vocab(ckpt: &Checkpoint, corpus: &Corpus, what: &str) -> Result<()> {
    if ckpt.dims.vocab as usize != corpus.vocab.len()
        || ckpt.meta.vocab_fingerprint != corpus.vocab.fingerprint()
    {
        return Err(Error::Consistency(format!(
            "{what} checkpoint was trained on a different vocabulary than this corpus"
        )));
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = &args.config;
    let corpus = load_corpus_checked(&args.corpus)?;
    let vocab_len = corpus.vocab.len();
    let fingerprint = corpus.vocab.fingerprint();

    let mut log_file = match &args.log {
        Some(path) => Some(fs::File::create(path).map_err(|e| Error::io(path, e))?),
        None => None,
    };
    let mut emit = move |line: &EpochLog| {
        let rendered = line.render();
        println!("{rendered}");
        if let Some(f) = &mut log_file {
            let _ = writeln!(f, "{rendered}");
        }
    };

    let meta = |stage: &str, epoch: u32| CheckpointMeta {
        stage: stage.to_string(),
        epoch,
        seed: cfg.seed,
        vocab_fingerprint: fingerprint,
    };

    match args.stage.as_str() {
        "policy" => {
            let out = require_out(&args.out, "out")?;
            let epochs = args.epochs.unwrap_or(cfg.epochs_policy);
            let mut net = PolicyNet::new(
                PolicyDims {
                    vocab: vocab_len,
                    d_h: cfg.d_h,
                    d_e: cfg.d_e,
                    feat_dim: cfg.feat_dim,
                },
                &mut seeded(cfg.seed),
            );
            pretrain_policy(&mut net, &corpus, &cfg.train_config(epochs), &mut emit)?;
            checkpoint::from_policy(&net, meta("policy", epochs)).save(&out)?;
            println!("wrote policy checkpoint to {}", out.display());
        }
        "reward" => {
            let out = require_out(&args.out, "out")?;
            let epochs = args.epochs.unwrap_or(cfg.epochs_reward);
            let mut model = RewardModel::new(
                RewardDims {
                    vocab: vocab_len,
                    d_emb: cfg.d_emb,
                    d_e: cfg.d_e,
                    feat_dim: cfg.feat_dim,
                },
                cfg.gamma,
                cfg.alpha,
                &mut seeded(cfg.seed),
            )?;
            train_reward(&mut model, &corpus, &cfg.train_config(epochs), &mut emit)?;
            let (matched, mismatched) = reward_separation(&model, &corpus, Split::Val)?;
            println!(
                "separation matched={matched} mismatched={mismatched} gap={}",
                matched - mismatched
            );
            checkpoint::from_reward(&model, meta("reward", epochs)).save(&out)?;
            println!("wrote reward checkpoint to {}", out.display());
        }
        "value" => {
            let out = require_out(&args.out, "out")?;
            let policy_path = require_ckpt(&args.policy, "value", "policy")?;
            let reward_path = require_ckpt(&args.reward, "value", "reward")?;
            let policy_ckpt = Checkpoint::load(&policy_path)?;
            let reward_ckpt = Checkpoint::load(&reward_path)?;
            check_vocab(&policy_ckpt, &corpus, "policy")?;
            check_vocab(&reward_ckpt, &corpus, "reward")?;
            let policy = checkpoint::to_policy(&policy_ckpt)?;
            let reward = checkpoint::to_reward(&reward_ckpt)?;
            let epochs = args.epochs.unwrap_or(cfg.epochs_value);
            let mut value = ValueNet::new(
                ValueDims {
                    vocab: vocab_len,
                    d_h: cfg.d_h,
                    d_e: cfg.d_e,
                    feat_dim: cfg.feat_dim,
                    hidden_layers: cfg.value_hidden_layers,
                },
                &mut seeded(cfg.seed),
            )?;
            pretrain_value(
                &mut value,
                &policy,
                &reward,
                &corpus,
                &cfg.train_config(epochs),
                &mut emit,
            )?;
            checkpoint::from_value(&value, meta("value", epochs)).save(&out)?;
            println!("wrote value checkpoint to {}", out.display());
        }
        "joint" => {
            let policy_path = require_ckpt(&args.policy, "joint", "policy")?;
            let reward_path = require_ckpt(&args.reward, "joint", "reward")?;
            let value_path = require_ckpt(&args.value, "joint", "value")?;
            let out_policy = require_out(&args.out_policy, "out-policy")?;
            let out_value = require_out(&args.out_value, "out-value")?;
            let policy_ckpt = Checkpoint::load(&policy_path)?;
            let reward_ckpt = Checkpoint::load(&reward_path)?;
            let value_ckpt = Checkpoint::load(&value_path)?;
            check_vocab(&policy_ckpt, &corpus, "policy")?;
            check_vocab(&reward_ckpt, &corpus, "reward")?;
            check_vocab(&value_ckpt, &corpus, "value")?;
            let mut policy = checkpoint::to_policy(&policy_ckpt)?;
            let mut value = checkpoint::to_value(&value_ckpt)?;
            let reward = checkpoint::to_reward(&reward_ckpt)?;
            let epochs = args.epochs.unwrap_or(cfg.epochs_joint);
            let baseline =
                mean_greedy_reward(&policy, &reward, &corpus, Split::Val, cfg.max_len)?;
            println!("pretrained mean_reward_val={baseline}");
            joint_train(
                &mut policy,
                &mut value,
                &reward,
                &corpus,
                &cfg.train_config(epochs),
                &mut emit,
            )?;
            checkpoint::from_policy(&policy, meta("joint", epochs)).save(&out_policy)?;
            checkpoint::from_value(&value, meta("joint", epochs)).save(&out_value)?;
            println!(
                "wrote joint checkpoints to {} and {}",
                out_policy.display(),
                out_value.display()
            );
        }
        other => return Err(Error::Arg(format!("unknown stage {other:?}"))),
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

fn decode_settings(cfg: &RunConfig, decoder: &str) -> DecodeSettings {
    let mode = match decoder {
        "beam" => DecodeMode::Beam {
            k: cfg.k,
            beta: cfg.beta,
        },
        _ => DecodeMode::Greedy,
    };
    DecodeSettings {
        mode,
        max_len: cfg.max_len,
    }
}

fn load_value_for_decoder(
    decoder: &str,
    value: Option<&Path>,
    corpus: &Corpus,
    cfg: &RunConfig,
) -> Result<ValueNet> {
    match (decoder, value) {
        ("beam", Some(path)) => {
            let ckpt = Checkpoint::load(path)?;
            check_vocab(&ckpt, corpus, "value")?;
            checkpoint::to_value(&ckpt)
        }
        ("beam", None) => Err(Error::Dependency(
            "beam decoding needs --value, the checkpoint of the value stage".into(),
        )),
        // Greedy decoding never consults the value net; a zeroed one keeps
        // the call signatures uniform.
        _ => ValueNet::zeroed(ValueDims {
            vocab: corpus.vocab.len(),
            d_h: cfg.d_h,
            d_e: cfg.d_e,
            feat_dim: cfg.feat_dim,
            hidden_layers: cfg.value_hidden_layers,
        }),
    }
}

fn decode_one(
    policy: &PolicyNet,
    value: &ValueNet,
    feature: &ImageFeature,
    settings: &DecodeSettings,
) -> Result<Vec<usize>> {
    match settings.mode {
        DecodeMode::Greedy => decoding::greedy_decode(policy, feature, settings.max_len, Vocab::EOS),
        DecodeMode::Beam { k, beta } => Ok(decoding::beam_decode(
            policy,
            value,
            feature,
            k,
            beta,
            settings.max_len,
            Vocab::EOS,
        )?
        .best),
    }
}

fn cmd_caption(
    cfg: &RunConfig,
    corpus_path: &Path,
    policy_path: &Path,
    value_path: Option<&Path>,
    split: &str,
    feature: Option<&str>,
    decoder: &str,
) -> Result<()> {
    let corpus = load_corpus_checked(corpus_path)?;
    let policy_ckpt = Checkpoint::load(policy_path)?;
    check_vocab(&policy_ckpt, &corpus, "policy")?;
    let policy = checkpoint::to_policy(&policy_ckpt)?;
    let value = load_value_for_decoder(decoder, value_path, &corpus, cfg)?;
    let settings = decode_settings(cfg, decoder);

    let print_caption = |tokens: &[usize]| {
        println!("{}", corpus.vocab.decode(tokens).join(" "));
    };

    if let Some(raw) = feature {
        let values: Vec<f64> = raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Arg(format!("bad feature entry {s:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        let feature = ImageFeature { values };
        let caption = decode_one(&policy, &value, &feature, &settings)?;
        print_caption(&caption);
        return Ok(());
    }

    for example in corpus.iter_split(parse_split(split)?) {
        let caption = decode_one(&policy, &value, &example.feature, &settings)?;
        print_caption(&caption);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &RunConfig,
    corpus_path: &Path,
    policy_path: &Path,
    value_path: Option<&Path>,
    reward_path: &Path,
    split: &str,
    decoder: &str,
    out: Option<&Path>,
) -> Result<()> {
    let corpus = load_corpus_checked(corpus_path)?;
    let policy_ckpt = Checkpoint::load(policy_path)?;
    let reward_ckpt = Checkpoint::load(reward_path)?;
    check_vocab(&policy_ckpt, &corpus, "policy")?;
    check_vocab(&reward_ckpt, &corpus, "reward")?;
    let policy = checkpoint::to_policy(&policy_ckpt)?;
    let reward = checkpoint::to_reward(&reward_ckpt)?;
    let value = load_value_for_decoder(decoder, value_path, &corpus, cfg)?;

    let report = corpus_report(
        &policy,
        &value,
        &reward,
        &corpus,
        parse_split(split)?,
        &decode_settings(cfg, decoder),
    )?;
    let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{rendered}");
    if let Some(path) = out {
        fs::write(path, &rendered).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

struct GradCheckRow {
    objective: &'static str,
    max_rel_error: f64,
    coords: usize,
}

/// The five-objective battery at tiny dims (D_h=4, V=6, eps=1e-5).
fn gradcheck_battery(corrupt: bool) -> Result<Vec<GradCheckRow>> {
    const EPS: f64 = 1e-5;
    let pdims = PolicyDims {
        vocab: 6,
        d_h: 4,
        d_e: 3,
        feat_dim: 5,
    };
    let vdims = ValueDims {
        vocab: 6,
        d_h: 4,
        d_e: 3,
        feat_dim: 5,
        hidden_layers: 2,
    };
    let rdims = RewardDims {
        vocab: 6,
        d_emb: 4,
        d_e: 3,
        feat_dim: 5,
    };
    let mut rng = seeded(2024);
    let policy = PolicyNet::new(pdims, &mut rng);
    let value = ValueNet::new(vdims, &mut rng)?;
    let reward = RewardModel::new(rdims, 0.2, 0.5, &mut rng)?;
    let feature = ImageFeature {
        values: vec![0.9, -0.3, 0.2, 0.5, -0.8],
    };
    let feature2 = ImageFeature {
        values: vec![-0.2, 0.7, -0.5, 0.1, 0.4],
    };
    let mut rows = Vec::new();

    // Teacher-forced sequence loss.
    {
        let reference = vec![4usize, 0, 3, Vocab::EOS];
        let (_, mut grads) = policy.teacher_forced_loss(&feature, &reference)?;
        if corrupt {
            grads.get_mut("w_o").data_mut()[0] += 1e-2;
        }
        let f = feature.clone();
        let r = reference.clone();
        let report = finite_diff_check_conditioned(policy.store(), &grads, EPS, move |s| {
            PolicyNet::from_store(pdims, s.clone())?.teacher_forced_loss_value(&f, &r)
        })?;
        rows.push(GradCheckRow {
            objective: "teacher_forced_loss",
            max_rel_error: report.max_rel_error,
            coords: report.coords_checked,
        });
    }

    // Squared value regression loss.
    {
        let prefix = vec![3usize, 5, 1];
        let (_, grads) = value.value_loss(&feature, &prefix, 0.55)?;
        let f = feature.clone();
        let p = prefix.clone();
        let report = finite_diff_check_conditioned(value.store(), &grads, EPS, move |s| {
            ValueNet::from_store(vdims, s.clone())?.value_loss_value(&f, &p, 0.55)
        })?;
        rows.push(GradCheckRow {
            objective: "value_loss",
            max_rel_error: report.max_rel_error,
            coords: report.coords_checked,
        });
    }

    // Bidirectional margin ranking loss over a batch of three.
    {
        let c1 = vec![4usize, 1, Vocab::EOS];
        let c2 = vec![0usize, 5, 3, Vocab::EOS];
        let c3 = vec![3usize, 3, Vocab::EOS];
        let f3 = ImageFeature {
            values: vec![0.3, 0.3, -0.9, 0.6, 0.0],
        };
        let batch = vec![
            (&feature, c1.as_slice()),
            (&feature2, c2.as_slice()),
            (&f3, c3.as_slice()),
        ];
        let (_, grads) = reward.margin_loss(&batch)?;
        let (fa, fb, fc) = (feature.clone(), feature2.clone(), f3.clone());
        let report = finite_diff_check_conditioned(reward.store(), &grads, EPS, move |s| {
            let m = RewardModel::from_store(rdims, 0.2, 0.5, s.clone())?;
            let batch = vec![
                (&fa, c1.as_slice()),
                (&fb, c2.as_slice()),
                (&fc, c3.as_slice()),
            ];
            m.margin_loss_value(&batch)
        })?;
        rows.push(GradCheckRow {
            objective: "margin_loss",
            max_rel_error: report.max_rel_error,
            coords: report.coords_checked,
        });
    }

    // Advantage-weighted policy surrogate.
    {
        let actions = vec![1usize, 4, Vocab::EOS];
        let advantages = vec![0.03, -0.02, 0.04];
        let traj = Trajectory {
            feature: feature.clone(),
            actions: actions.clone(),
            log_probs: vec![0.0; 3],
            values: advantages.iter().map(|a| -a).collect(),
            reward: 0.0,
        };
        let grads = training::policy_grad(&traj, &policy, 0.0)?;
        let f = feature.clone();
        let report = finite_diff_check_conditioned(policy.store(), &grads, EPS, move |s| {
            let p = PolicyNet::from_store(pdims, s.clone())?;
            policy_surrogate_value(&p, &f, &actions, &advantages, 0.0)
        })?;
        rows.push(GradCheckRow {
            objective: "policy_surrogate",
            max_rel_error: report.max_rel_error,
            coords: report.coords_checked,
        });
    }

    // Critic surrogate with detached targets, both target modes.
    for (label, mode) in [
        ("value_surrogate_terminal", training::AdvantageMode::Terminal),
        ("value_surrogate_td0", training::AdvantageMode::Td0),
    ] {
        let traj = rollout(&policy, &value, &reward, &feature2, &mut seeded(5), 5)?;
        let targets = training::value_targets(&traj, &value, mode)?;
        let (_, grads) = training::value_grad(&traj, &value, mode)?;
        let f = traj.feature.clone();
        let actions = traj.actions.clone();
        let report = finite_diff_check_conditioned(value.store(), &grads, EPS, move |s| {
            let v = ValueNet::from_store(vdims, s.clone())?;
            value_surrogate_value(&v, &f, &actions, &targets)
        })?;
        rows.push(GradCheckRow {
            objective: label,
            max_rel_error: report.max_rel_error,
            coords: report.coords_checked,
        });
    }

    Ok(rows)
}

/// Runs the battery and reports pass/fail per objective; used by the command
/// and by the acceptance suite.
pub fn run_gradcheck(corrupt: bool) -> Result<(Vec<String>, bool)> {
    let rows = gradcheck_battery(corrupt)?;
    let mut lines = Vec::new();
    let mut all_pass = true;
    for row in rows {
        let pass = row.max_rel_error <= 1e-4;
        all_pass &= pass;
        lines.push(format!(
            "objective={} max_rel_error={:.3e} coords={} status={}",
            row.objective,
            row.max_rel_error,
            row.coords,
            if pass { "pass" } else { "fail" }
        ));
    }
    Ok((lines, all_pass))
}

fn cmd_gradcheck(_cfg: &RunConfig, corrupt: bool) -> Result<()> {
    let (lines, all_pass) = run_gradcheck(corrupt)?;
    for line in &lines {
        println!("{line}");
    }
    if !all_pass {
        return Err(Error::Numeric("gradient check failed".into()));
    }
    Ok(())
}
