//! `mte`: pretrain, train schemes, report, tune τ and dump datasets.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiticket::config::ExperimentConfig;
use multiticket::data::gen_source_task;
use multiticket::ensemble::{MemberCheckpoint, Scheme};
use multiticket::experiment::{evaluate_members, Lab};
use multiticket::io::{
    load_checkpoint, mask_to_bytes, write_artifact, ArtifactRef, CheckpointFile, MemberEntry, RunManifest, Stage,
};
use multiticket::report::{align, Report, SWEEP_MAX_K, TICKET_SCHEMES};
use multiticket::{Error, ParamVector, Result};

#[derive(Parser)]
#[command(name = "mte", version, about = "Multi-ticket ensemble experiments at desk scale")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the built-in desk-scale config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.tau=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Member seeds, overriding `seeds.members`.
    #[arg(long, value_delimiter = ',', global = true)]
    seeds: Option<Vec<u64>>,
    /// Run directory for checkpoints, manifests and reports.
    #[arg(long, default_value = "runs", global = true)]
    out: PathBuf,
    /// Parallel seed jobs (active-lt always runs one seed at a time).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared body on the source task.
    Pretrain,
    /// Train every member seed of one scheme.
    Train {
        /// baseline | bagging | base-lt | active-lt | random-lt (else `scheme.name`)
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Evaluate trained schemes and write the report tables.
    Report {
        /// Ensemble size.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Scheme manifests. Defaults to `<out>/<scheme>/manifest.toml` for all five.
        manifests: Vec<PathBuf>,
    },
    /// Train one scheme at several τ values and compare.
    SweepTau {
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.03, 0.05, 0.1, 0.3])]
        taus: Vec<f64>,
        #[arg(long, default_value = "random-lt")]
        scheme: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Write a generated dataset as CSV.
    GenData {
        /// Dump the pretraining source task instead of the downstream task.
        #[arg(long)]
        source: bool,
        /// Output file. Defaults to `<out>/data-<seed>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        e if e.is_numeric() => 3,
        Error::MissingArtifact(_)
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated { .. }
        | Error::Malformed { .. }
        | Error::Io { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    let ctx = Ctx {
        out: c.out.clone(),
        jobs: c.jobs.unwrap_or_else(default_jobs).max(1),
        quiet: c.quiet,
    };
    match cli.command {
        Command::Pretrain => cmd_pretrain(&ctx, &cfg),
        Command::Train { scheme } => {
            let scheme = pick_scheme(scheme.as_deref(), &cfg)?;
            cmd_train(&ctx, &cfg, scheme)
        }
        Command::Report { k, manifests } => cmd_report(&ctx, &cfg, k, manifests),
        Command::SweepTau { taus, scheme, k } => cmd_sweep_tau(&ctx, &cfg, &taus, Scheme::parse(&scheme)?, k),
        Command::GenData { source, output } => cmd_gen_data(&ctx, &cfg, source, output),
    }
}

struct Ctx {
    out: PathBuf,
    jobs: usize,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn pretrain_manifest(&self) -> PathBuf {
        self.out.join("pretrain.toml")
    }

    fn scheme_manifest(&self, scheme: Scheme) -> PathBuf {
        self.out.join(scheme.name()).join("manifest.toml")
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk_scale(),
    };
    let mut overrides = Vec::with_capacity(c.overrides.len());
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seeds) = &c.seeds {
        let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        overrides.push(("seeds.members".into(), format!("[{}]", list.join(","))));
    }
    if overrides.is_empty() {
        Ok(base)
    } else {
        base.with_overrides(&overrides)
    }
}

fn pick_scheme(flag: Option<&str>, cfg: &ExperimentConfig) -> Result<Scheme> {
    match (flag, &cfg.scheme) {
        (Some(name), _) => Scheme::parse(name),
        (None, Some(s)) => Ok(s.name),
        (None, None) => Err(Error::Config("no scheme given (use --scheme or [scheme] name)".into())),
    }
}

fn cmd_pretrain(ctx: &Ctx, cfg: &ExperimentConfig) -> Result<()> {
    ctx.note(format!("pretraining body {:?} on source task", cfg.model.body));
    let started = std::time::Instant::now();
    let body = multiticket::experiment::pretrain(cfg)?;
    let bytes = CheckpointFile::body(body, cfg.pretrain.seed, cfg.hash()).to_bytes();
    let body_ref = write_artifact(&ctx.out, "body.mte", &bytes)?;
    let manifest = RunManifest {
        stage: Stage::Pretrained,
        scheme: None,
        gen_seed: cfg.data.gen_seed,
        config_hash: hex_hash(cfg),
        seeds: vec![cfg.pretrain.seed],
        groups: Vec::new(),
        body: body_ref.clone(),
        members: Vec::new(),
        config: cfg.clone(),
    };
    manifest.save(&ctx.pretrain_manifest())?;
    ctx.note(format!("done in {:.1}s", started.elapsed().as_secs_f64()));
    println!("body {} sha256 {}", ctx.out.join(&body_ref.path).display(), body_ref.sha256);
    Ok(())
}

/// Loads the pretrained body and checks it belongs to this config.
fn load_body(ctx: &Ctx, cfg: &ExperimentConfig) -> Result<(ParamVector, ArtifactRef)> {
    let path = ctx.pretrain_manifest();
    let manifest = RunManifest::load(&path).map_err(|e| match e {
        Error::MissingArtifact(m) => Error::MissingArtifact(format!("{m} (run `mte pretrain` first)")),
        other => other,
    })?;
    let p = &manifest.config;
    if p.model != cfg.model || p.pretrain != cfg.pretrain || p.data.source_seed != cfg.data.source_seed {
        return Err(Error::Config(format!(
            "{} was pretrained with different model/pretrain settings; rerun `mte pretrain`",
            path.display()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let ckpt = load_checkpoint(&RunManifest::resolve(base, &manifest.body))?;
    Ok((ckpt.params, manifest.body))
}

fn cmd_train(ctx: &Ctx, cfg: &ExperimentConfig, scheme: Scheme) -> Result<()> {
    let (body, body_ref) = load_body(ctx, cfg)?;
    let lab = Lab::new(cfg.clone(), body)?;
    let jobs = if scheme == Scheme::ActiveLt { 1 } else { ctx.jobs };
    ctx.note(format!(
        "training {scheme}: {} seeds, {jobs} job(s)",
        cfg.seeds.members.len()
    ));
    let started = std::time::Instant::now();
    let quiet = ctx.quiet;
    let members = lab.train_scheme_with(scheme, jobs, &|s, seed| {
        if !quiet {
            eprintln!("  {s} seed {seed} done ({:.1}s)", started.elapsed().as_secs_f64());
        }
    })?;
    let manifest = write_members(ctx, cfg, scheme, &members, body_ref)?;
    ctx.note(format!("done in {:.1}s", started.elapsed().as_secs_f64()));
    for e in &manifest.members {
        println!("{scheme} seed {} group {} -> {}", e.seed, e.group, e.checkpoint.path);
    }
    Ok(())
}

fn write_members(
    ctx: &Ctx,
    cfg: &ExperimentConfig,
    scheme: Scheme,
    members: &[MemberCheckpoint],
    body: ArtifactRef,
) -> Result<RunManifest> {
    let dir = ctx.out.join(scheme.name());
    let hash = cfg.hash();
    let mut entries = Vec::with_capacity(members.len());
    for m in members {
        let ckpt = write_artifact(&dir, &format!("seed-{}.mte", m.seed), &CheckpointFile::member(m, hash).to_bytes())?;
        let mask = match &m.mask {
            Some(mask) => Some(write_artifact(&dir, &format!("seed-{}.mask", m.seed), &mask_to_bytes(mask))?),
            None => None,
        };
        entries.push(MemberEntry {
            seed: m.seed,
            group: m.group,
            checkpoint: ckpt,
            mask,
        });
    }
    let manifest = RunManifest {
        stage: Stage::Member,
        scheme: Some(scheme),
        gen_seed: cfg.data.gen_seed,
        config_hash: hex_hash(cfg),
        seeds: cfg.seeds.members.clone(),
        groups: cfg.groups(),
        body: ArtifactRef {
            path: format!("../{}", body.path),
            sha256: body.sha256,
        },
        members: entries,
        config: cfg.clone(),
    };
    manifest.save(&ctx.scheme_manifest(scheme))?;
    Ok(manifest)
}

fn cmd_report(ctx: &Ctx, cfg: &ExperimentConfig, k: usize, manifests: Vec<PathBuf>) -> Result<()> {
    let explicit = !manifests.is_empty();
    let paths: Vec<PathBuf> = if explicit {
        manifests
    } else {
        Scheme::ALL.iter().map(|&s| ctx.scheme_manifest(s)).collect()
    };
    let mut missing = Vec::new();
    let mut loaded = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        match RunManifest::read(path) {
            Ok(m) => loaded.push((path.clone(), m)),
            Err(Error::MissingArtifact(_)) if !explicit => {
                let s = Scheme::ALL[i];
                missing.extend(cfg.seeds.members.iter().map(|seed| format!("{s}/seed {seed}")));
            }
            Err(e) => return Err(e),
        }
    }
    for (_, m) in &loaded {
        if let Some(s) = m.scheme {
            for seed in &m.config.seeds.members {
                if !m.members.iter().any(|e| e.seed == *seed) {
                    missing.push(format!("{s}/seed {seed}"));
                }
            }
        }
    }
    for s in Scheme::ALL {
        if explicit && !loaded.iter().any(|(_, m)| m.scheme == Some(s)) {
            missing.push(format!("{s} (no manifest given)"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifact(format!("incomplete runs: {}", missing.join(", "))));
    }
    let reference = loaded[0].1.config.clone();
    let mut runs = Vec::with_capacity(loaded.len());
    for (path, m) in &loaded {
        RunManifest::load(path)?;
        if m.body.sha256 != loaded[0].1.body.sha256 || m.config.data != reference.data || m.config.model != reference.model {
            return Err(Error::Config(format!(
                "{} was trained on a different body, model or dataset than {}",
                path.display(),
                loaded[0].0.display()
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let members = m
            .members
            .iter()
            .map(|e| load_checkpoint(&RunManifest::resolve(base, &e.checkpoint))?.into_member())
            .collect::<Result<Vec<_>>>()?;
        runs.push(members);
    }
    let scheme_order = |r: &Vec<MemberCheckpoint>| r.first().map_or(0, |m| m.scheme.code());
    runs.sort_by_key(scheme_order);
    let spec = reference.model_spec();
    let data = multiticket::data::gen_downstream(reference.data.gen_seed, &reference.task_params())?;
    ctx.note(format!("evaluating {} schemes at k={k}", runs.len()));
    let report = Report::build(&spec, &data, &runs, k)?;
    let seeds = &reference.seeds.members;
    let dir = ctx.out.join("report");
    let mut text = String::new();
    let mut put = |name: &str, csv: String, txt: String| -> Result<()> {
        write_artifact(&dir, &format!("{name}.csv"), csv.as_bytes())?;
        write_artifact(&dir, &format!("{name}.txt"), txt.as_bytes())?;
        text.push_str(&format!("== {name} ==\n{txt}\n"));
        Ok(())
    };
    put("accuracy", report.accuracy_csv(), report.accuracy_text())?;
    match (report.diversity_csv(), report.diversity_text()) {
        (Ok(csv), Ok(txt)) => put("diversity", csv, txt)?,
        (Err(e), _) | (_, Err(e)) => ctx.note(format!("skipping diversity table: {e}")),
    }
    for s in TICKET_SCHEMES {
        put(&format!("iou-{s}"), report.iou_csv(s, seeds)?, report.iou_text(s, seeds)?)?;
    }
    put("sweep", report.sweep_csv(), report.sweep_text())?;
    print!("{text}");
    ctx.note(format!("tables written to {}", dir.display()));
    Ok(())
}

fn cmd_sweep_tau(ctx: &Ctx, cfg: &ExperimentConfig, taus: &[f64], scheme: Scheme, k: usize) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::Config("--taus is empty".into()));
    }
    let (body, _) = load_body(ctx, cfg)?;
    let lab = Lab::new(cfg.clone(), body)?;
    let jobs = if scheme == Scheme::ActiveLt { 1 } else { ctx.jobs };
    ctx.note("training baseline reference");
    let baseline = evaluate_members(&lab.spec, &lab.data, &lab.train_scheme(Scheme::Baseline, ctx.jobs)?, k, SWEEP_MAX_K)?;
    let mut csv = String::from("tau,single,ens,diff,baseline_ens\n");
    let mut rows = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &tau in taus {
        ctx.note(format!("training {scheme} at tau={tau}"));
        let mut c = cfg.clone();
        c.train.tau = tau;
        c.validate()?;
        let lab_t = Lab {
            cfg: c,
            ..lab.clone()
        };
        let r = evaluate_members(&lab_t.spec, &lab_t.data, &lab_t.train_scheme(scheme, jobs)?, k, SWEEP_MAX_K)?;
        csv.push_str(&format!(
            "{tau},{:.6},{:.6},{:.6},{:.6}\n",
            r.score.single, r.score.ens, r.score.diff, baseline.score.ens
        ));
        rows.push(vec![
            format!("{tau}"),
            format!("{:.2}", r.score.single),
            format!("{:.2}", r.score.ens),
            format!("{:.2}", r.score.diff),
        ]);
        if best.is_none_or(|(_, e)| r.score.ens > e) {
            best = Some((tau, r.score.ens));
        }
    }
    write_artifact(&ctx.out, "sweep-tau.csv", csv.as_bytes())?;
    let header: Vec<String> = ["tau", "single", "ens.", "diff."].map(String::from).to_vec();
    print!("{scheme}, k={k}\n{}", align(&header, &rows));
    let (tau, ens) = best.expect("taus is not empty");
    println!(
        "baseline ens {:.2}; best tau {tau} (ens {ens:.2})",
        baseline.score.ens
    );
    Ok(())
}

fn cmd_gen_data(ctx: &Ctx, cfg: &ExperimentConfig, source: bool, output: Option<PathBuf>) -> Result<()> {
    let (data, default_name) = if source {
        (gen_source_task(cfg.data.source_seed), format!("source-{}.csv", cfg.data.source_seed))
    } else {
        (
            multiticket::data::gen_downstream(cfg.data.gen_seed, &cfg.task_params())?,
            format!("data-{}.csv", cfg.data.gen_seed),
        )
    };
    let path = output.unwrap_or_else(|| ctx.out.join(default_name));
    data.write_csv(&path)?;
    println!("{} rows -> {}", data.len(), path.display());
    Ok(())
}

fn hex_hash(cfg: &ExperimentConfig) -> String {
    multiticket::io::sha256_hex(cfg.to_toml().as_bytes())
}
