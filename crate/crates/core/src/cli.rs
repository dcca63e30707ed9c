//! Command-line verbs. Settings come from an optional `--config` file of
//! `key=value` lines; flags override it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pckd::backbone::{load_checkpoint, Checkpoint};
use pckd::data::{chrono_split, generate_synthetic, load_interactions, load_snapshot, preprocess, save_snapshot, write_interactions, Dataset, SplitRatios};
use pckd::diagnostics::{estimate_inconsistency, groupwise_csv, groupwise_inconsistency, projected_features, GROUPS};
use pckd::distill::rebuild_rank_table;
use pckd::eval::{evaluate, Split};
use pckd::io::{read_to_string, write_atomic};
use pckd::projector::TemperatureSchedule;
use pckd::trainer::{distill, grid_csv, run_experiment_grid, save_run, train_teacher, GridSpec, RunConfig};

const METHODS: [&str; 6] = ["none", "fitnet", "de", "pckd_p", "pckd_l", "pckd_h"];

#[derive(Debug, Parser)]
#[command(name = "pckd", version, about = "Preference-consistent distillation for top-N recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic interaction log.
    Synth {
        #[arg(long)]
        users: usize,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        density: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        latent_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, re-index and chronologically split a raw log into a dataset directory.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_interactions: usize,
        /// Train,val,test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split: String,
    },
    /// Train a teacher on the base loss.
    TrainTeacher {
        /// Teacher embedding dimension.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Train a student against a frozen teacher.
    Distill {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Report Recall@N and NDCG@N of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_parser = ["val", "test"], default_value = "test")]
        split: String,
        #[arg(long = "N", alias = "n", value_delimiter = ',', default_value = "10,20")]
        n: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure preference inconsistency between a student and its projected teacher.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 50)]
        cells_pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Group-wise CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a hyperparameter grid.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        /// Directory for per-cell runs and `summary.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags mirroring [`RunConfig`] keys.
#[derive(Debug, Args)]
struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, value_parser = ["mf", "gcn"])]
    backbone: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_teacher: Option<usize>,
    #[arg(long)]
    d_student: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = METHODS)]
    method: Option<String>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    gumbel_start: Option<f64>,
    #[arg(long)]
    gumbel_end: Option<f64>,
    #[arg(long)]
    gumbel_decay: Option<f64>,
    #[arg(long, value_parser = ["rank_aware", "random"])]
    sampling: Option<String>,
    #[arg(long = "Q", alias = "q")]
    q: Option<usize>,
    #[arg(long = "T", alias = "t")]
    t: Option<f64>,
    #[arg(long = "T1", alias = "t1")]
    t1: Option<f64>,
    #[arg(long = "T2", alias = "t2")]
    t2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda_de: Option<f64>,
    #[arg(long)]
    lambda_pckd: Option<f64>,
    /// Rank-table refresh period in epochs.
    #[arg(long = "K", alias = "rank-refresh")]
    k: Option<usize>,
    #[arg(long)]
    fd_squared: Option<bool>,
    #[arg(long)]
    diag_every: Option<usize>,
    #[arg(long)]
    diag_pairs: Option<usize>,
    #[arg(long)]
    diag_cell_pairs: Option<usize>,
    /// Record elapsed seconds in the run log (breaks byte-identical replays).
    #[arg(long)]
    wall_clock: bool,
}

impl RunFlags {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(out: &mut Vec<(&'static str, String)>, k: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((k, v.to_string()));
            }
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut o = Vec::new();
        put(&mut o, "data", &path(&self.data));
        put(&mut o, "teacher", &path(&self.teacher));
        put(&mut o, "backbone", &self.backbone);
        put(&mut o, "layers", &self.layers);
        put(&mut o, "d_teacher", &self.d_teacher);
        put(&mut o, "d_student", &self.d_student);
        put(&mut o, "lr", &self.lr);
        put(&mut o, "weight_decay", &self.weight_decay);
        put(&mut o, "batch_size", &self.batch_size);
        put(&mut o, "max_epochs", &self.max_epochs);
        put(&mut o, "patience", &self.patience);
        put(&mut o, "seed", &self.seed);
        put(&mut o, "method", &self.method);
        put(&mut o, "experts", &self.experts);
        put(&mut o, "gumbel_start", &self.gumbel_start);
        put(&mut o, "gumbel_end", &self.gumbel_end);
        put(&mut o, "gumbel_decay", &self.gumbel_decay);
        put(&mut o, "sampling", &self.sampling);
        put(&mut o, "q", &self.q);
        put(&mut o, "t", &self.t);
        put(&mut o, "t1", &self.t1);
        put(&mut o, "t2", &self.t2);
        put(&mut o, "alpha", &self.alpha);
        put(&mut o, "lambda_de", &self.lambda_de);
        put(&mut o, "lambda_pckd", &self.lambda_pckd);
        put(&mut o, "rank_refresh", &self.k);
        put(&mut o, "fd_squared", &self.fd_squared);
        put(&mut o, "diag_every", &self.diag_every);
        put(&mut o, "diag_pairs", &self.diag_pairs);
        put(&mut o, "diag_cell_pairs", &self.diag_cell_pairs);
        if self.wall_clock {
            o.push(("wall_clock", "true".into()));
        }
        o
    }

    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_text(&read_to_string(p)?).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dataset_for(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let Some(dir) = &cfg.data else {
        bail!(pckd::Error::config("no dataset given (--data or data= in the config)"));
    };
    load_snapshot(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn parse_split(s: &str) -> anyhow::Result<SplitRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| pckd::Error::config(format!("invalid split {s:?}")))?;
    let [train, val, test] = parts[..] else {
        bail!(pckd::Error::config(format!("split needs three fractions, got {s:?}")));
    };
    Ok(SplitRatios { train, val, test })
}

fn print_run(dir: &Path) -> anyhow::Result<()> {
    print!("{}", read_to_string(&dir.join("summary"))?);
    println!("wrote {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { users, items, density, seed, latent_dim, out } => {
            let log = generate_synthetic(users, items, latent_dim, density, seed)?;
            write_interactions(&log, &out)?;
            println!("wrote {} interactions to {}", log.len(), out.display());
        }
        Command::Prep { input, out, min_interactions, split } => {
            let ratios = parse_split(&split)?;
            let raw = load_interactions(&input).with_context(|| format!("reading {}", input.display()))?;
            let (log, _) = preprocess(&raw, min_interactions)?;
            let ds = chrono_split(&log, ratios)?;
            save_snapshot(&ds, &out)?;
            println!(
                "users={} items={} train={} val={} test={} dropped_val={} dropped_test={}",
                ds.n_users,
                ds.n_items,
                ds.train_records.len(),
                ds.val_records.len(),
                ds.test_records.len(),
                ds.dropped_val,
                ds.dropped_test
            );
        }
        Command::TrainTeacher { dim, out, run } => {
            let mut cfg = run.resolve()?;
            if let Some(d) = dim {
                cfg.d_teacher = d;
                cfg.validate()?;
            }
            let ds = dataset_for(&cfg)?;
            let outcome = train_teacher(&cfg, &ds)?;
            save_run(&out, &cfg, &outcome)?;
            print_run(&out)?;
        }
        Command::Distill { out, run } => {
            let cfg = run.resolve()?;
            let ds = dataset_for(&cfg)?;
            let teacher = match (&cfg.teacher, cfg.method.uses_teacher()) {
                (Some(p), true) => Some(load_checkpoint(p).with_context(|| format!("loading teacher {}", p.display()))?),
                (None, true) => bail!(pckd::Error::config(format!(
                    "method {} needs --teacher",
                    cfg.method.name()
                ))),
                (_, false) => None,
            };
            let outcome = distill(&cfg, &ds, teacher.as_ref())?;
            save_run(&out, &cfg, &outcome)?;
            print_run(&out)?;
        }
        Command::Eval { data, ckpt, split, n, out } => {
            let ds = load_snapshot(&data)?;
            let c = load_checkpoint(&ckpt)?;
            let model = c.to_backbone(c.kind, &ds)?;
            let split: Split = split.parse()?;
            let res = evaluate(&model.all_features(), &ds, split, &n)?;
            let text = res.to_key_values();
            print!("{text}");
            if let Some(p) = out {
                write_atomic(&p, text.as_bytes())?;
            }
        }
        Command::Diagnose { data, student, teacher, pairs, cells_pairs, seed, out } => {
            let ds = load_snapshot(&data)?;
            let s = load_checkpoint(&student)?;
            let t = load_checkpoint(&teacher)?;
            let banks = projector_bank(&s)?;
            let sf = s.to_backbone(s.kind, &ds)?.all_features();
            let tf = t.to_backbone(t.kind, &ds)?.all_features();
            let proj = projected_features(&banks, &sf, &tf)?;
            let report = estimate_inconsistency(&sf, &proj, pairs, seed, 0)?;
            println!("C={}", report.c);
            if ds.n_items >= GROUPS {
                let table = rebuild_rank_table(&sf, 0);
                let g = groupwise_inconsistency(&sf, &proj, &table, cells_pairs, seed, 0)?;
                let csv = groupwise_csv(&g);
                print!("{csv}");
                if let Some(p) = out {
                    write_atomic(&p, csv.as_bytes())?;
                }
            }
        }
        Command::Grid { spec, out } => {
            let spec = GridSpec::from_text(&read_to_string(&spec)?).with_context(|| format!("reading grid {}", spec.display()))?;
            let ds = dataset_for(&spec.base)?;
            let teacher = match &spec.base.teacher {
                Some(p) => Some(load_checkpoint(p)?),
                None => None,
            };
            let rows = run_experiment_grid(&spec, &ds, teacher.as_ref(), out.as_deref());
            let csv = grid_csv(&rows);
            print!("{csv}");
            if let Some(dir) = out {
                write_atomic(&dir.join("summary.csv"), csv.as_bytes())?;
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed == rows.len() {
                bail!(pckd::Error::domain(format!("all {failed} grid cells failed")));
            }
        }
    }
    Ok(())
}

fn projector_bank(student: &Checkpoint) -> anyhow::Result<pckd::projector::ProjectorPair<f32>> {
    match student.projectors(TemperatureSchedule::default())? {
        Some(p) => Ok(p),
        None => bail!(pckd::Error::config("student checkpoint carries no projectors")),
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<pckd::Error>() {
        Some(pckd::Error::Config(_)) | Some(pckd::Error::Parse { .. }) => 2,
        _ => 1,
    }
}

/// Parses `argv` (program name first), runs the verb and returns the
/// process exit code: 0 on success, 1 on a runtime failure, 2 on a usage
/// or configuration error.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use pckd::trainer::DistillMethod;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn method_names_match_the_parser() {
        for m in METHODS {
            assert_eq!(m.parse::<DistillMethod>().unwrap().name(), m);
        }
        assert_eq!(METHODS.join("|"), DistillMethod::NAMES);
    }

    #[test]
    fn unknown_verb_and_method_are_usage_errors() {
        assert_eq!(dispatch(["pckd", "frobnicate"]), 2);
        assert_eq!(dispatch(["pckd", "distill", "--method", "bogus", "--out", "x"]), 2);
        assert_eq!(dispatch(["pckd", "eval", "--data", "d"]), 2);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "seed=4\nlr=0.5\nmethod=de\n").unwrap();
        let cli = Cli::try_parse_from(["pckd", "distill", "--out", "o", "--config", cfg.to_str().unwrap(), "--lr", "0.25", "--Q", "7"]).unwrap();
        let Command::Distill { run, .. } = cli.command else { panic!() };
        let c = run.resolve().unwrap();
        assert_eq!(c.lr, 0.25);
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.method, DistillMethod::De);
        assert_eq!(c.pckd.q, 7);
    }

    #[test]
    fn flag_order_does_not_matter() {
        let a = Cli::try_parse_from(["pckd", "distill", "--out", "o", "--seed", "1", "--lr", "0.1", "--T", "3"]).unwrap();
        let b = Cli::try_parse_from(["pckd", "distill", "--T", "3", "--lr", "0.1", "--out", "o", "--seed", "1"]).unwrap();
        let (Command::Distill { run: ra, .. }, Command::Distill { run: rb, .. }) = (a.command, b.command) else { panic!() };
        assert_eq!(ra.resolve().unwrap(), rb.resolve().unwrap());
    }
}
