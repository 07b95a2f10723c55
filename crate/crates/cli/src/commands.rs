use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use recnet_core::config::RunConfig;
use recnet_core::dataset::{candidate_sets, load_interactions, prepare, InputFormat};
use recnet_core::metrics::{read_per_user_ap, wilcoxon_rank_sum};
use recnet_core::theory::{bound_report, check_cover, fractional_chromatic};
use recnet_core::trainer::train_with_hook;
use recnet_core::{
    evaluate, topk_insertion, CandidateSetting, CoverMethod, Dataset, DependencyGraph, Error,
    EvalOptions, ModelParams,
};

use crate::{Cli, Command};

pub struct CliError {
    usage: bool,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            usage: true,
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.usage {
            2
        } else {
            1
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            usage: e.is_usage(),
            msg: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError {
        usage: false,
        msg: format!("writing {}: {e}", path.display()),
    })
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &Option<String>) -> Result<Option<T>> {
    s.as_deref()
        .map(str::parse)
        .transpose()
        .map_err(CliError::from)
}

fn dataset_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| cfg.data.prepared.clone())
        .ok_or_else(|| CliError::usage("no prepared dataset: pass --data or set data.prepared"))?;
    existing(&dir, "dataset directory")?;
    Ok(dir)
}

fn load_model(path: &Path, ds: &Dataset) -> Result<ModelParams> {
    existing(path, "checkpoint")?;
    let p = ModelParams::load(path)?;
    if p.n_users() != ds.n_users() || p.n_items() != ds.n_items() {
        return Err(CliError::usage(format!(
            "checkpoint has {} users and {} items, dataset has {} and {}",
            p.n_users(),
            p.n_items(),
            ds.n_users(),
            ds.n_items()
        )));
    }
    Ok(p)
}

fn setting_name(s: CandidateSetting) -> &'static str {
    match s {
        CandidateSetting::Interacted => "interacted",
        CandidateSetting::All => "all",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut cfg = match &g.config {
        Some(p) => {
            existing(p, "config")?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if g.seed.is_some() {
        cfg.seed = g.seed;
    }
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                usage: false,
                msg: format!("thread pool: {e}"),
            })?;
    }

    // Command-line overrides are folded into `cfg` before validation, so the
    // copy written to the output directory describes the run exactly.
    match &cli.command {
        Command::Prepare { raw, format } => {
            if raw.is_some() {
                cfg.data.raw = raw.clone();
            }
            if let Some(f) = format {
                cfg.data.format = match f.as_str() {
                    "tsv_rating" => InputFormat::TsvRating,
                    "tsv_click" => InputFormat::TsvClick,
                    _ => return Err(CliError::usage(format!("unknown format {f:?}"))),
                };
            }
        }
        Command::Eval {
            setting,
            cutoffs,
            skip_no_relevant,
            ..
        } => {
            if let Some(s) = parse(setting)? {
                cfg.eval.setting = s;
            }
            if let Some(c) = cutoffs {
                cfg.eval.cutoffs = c.clone();
            }
            cfg.eval.skip_no_relevant |= skip_no_relevant;
        }
        Command::Rank { setting, .. } => {
            if let Some(s) = parse(setting)? {
                cfg.eval.setting = s;
            }
        }
        Command::Bound { delta, method, .. } => {
            if let Some(d) = delta {
                cfg.bound.delta = *d;
            }
            if let Some(m) = parse(method)? {
                cfg.bound.method = m;
            }
        }
        _ => {}
    }
    cfg.apply_seed();
    let cfg = cfg.validated()?;

    fs::create_dir_all(&g.out).map_err(|e| CliError {
        usage: false,
        msg: format!("creating {}: {e}", g.out.display()),
    })?;
    let out = g.out.as_path();
    write(&out.join("config.toml"), &cfg.to_toml())?;

    match cli.command {
        Command::Prepare { .. } => cmd_prepare(&cfg, out),
        Command::Train { data } => cmd_train(&cfg, &dataset_dir(&data, &cfg)?, out),
        Command::Eval {
            checkpoint, data, ..
        } => cmd_eval(&cfg, &checkpoint, &dataset_dir(&data, &cfg)?, out),
        Command::Rank {
            checkpoint,
            data,
            users,
            k,
            ..
        } => cmd_rank(&cfg, &checkpoint, &dataset_dir(&data, &cfg)?, users, k, out),
        Command::Bound {
            checkpoint, data, ..
        } => cmd_bound(&cfg, &checkpoint, &dataset_dir(&data, &cfg)?, out),
        Command::Cover {
            n_pos,
            n_neg,
            method,
        } => cmd_cover(n_pos, n_neg, method.parse()?, out),
        Command::Compare { a, b, cutoff } => cmd_compare(&a, &b, cutoff, out),
    }
}

fn cmd_prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let raw = cfg
        .data
        .raw
        .as_ref()
        .ok_or_else(|| CliError::usage("no raw file: pass --raw or set data.raw"))?;
    existing(raw, "raw file")?;
    let rows = load_interactions(raw, cfg.data.format)?;
    let (ds, report) = prepare(rows, cfg.data.format, &cfg.split)?;
    ds.write_dir(out)?;
    write(&out.join("stats.txt"), &report.to_text())
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::read_dir(data)?;
    let ckpt = out.join("checkpoint.json");
    let val = EvalOptions {
        cutoffs: vec![1],
        ..cfg.eval.clone()
    };
    let (params, log) =
        train_with_hook(&ds, &cfg.model, &cfg.objective, &cfg.train, &mut |_, p| {
            p.save(&ckpt)?;
            if ds.test().is_empty() {
                return Ok(None);
            }
            Ok(evaluate(p, &ds, &val)?.map(1))
        })?;
    params.save(&ckpt)?;
    write(&out.join("train_log.tsv"), &log.to_tsv())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::read_dir(data)?;
    let params = load_model(checkpoint, &ds)?;
    let report = evaluate(&params, &ds, &cfg.eval)?;
    let name = setting_name(cfg.eval.setting);
    write(&out.join(format!("eval_{name}.txt")), &report.to_text())?;
    let ids = ds.users();
    write(
        &out.join(format!("per_user_ap_{name}.tsv")),
        &report.per_user_tsv(|u| ids.id(u).unwrap_or_default().to_string()),
    )
}

fn cmd_rank(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    users: Option<Vec<String>>,
    k: usize,
    out: &Path,
) -> Result<()> {
    let ds = Dataset::read_dir(data)?;
    let params = load_model(checkpoint, &ds)?;
    let cands = candidate_sets(&ds, cfg.eval.setting, cfg.eval.all_includes_train);
    let selected: Vec<&(u32, Vec<u32>)> = match &users {
        None => cands.iter().collect(),
        Some(ids) => {
            ids.iter()
                .map(|id| {
                    let u = ds
                        .users()
                        .get(id)
                        .ok_or_else(|| CliError::usage(format!("unknown user {id:?}")))?;
                    cands.iter().find(|(c, _)| *c == u).ok_or_else(|| {
                        CliError::usage(format!("user {id:?} has no test candidates"))
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let mut text = String::new();
    for (u, c) in selected {
        let list = topk_insertion(&params, *u, c, k)?;
        let uid = ds.users().id(*u).unwrap_or_default();
        list.write_tsv(&mut text, uid, |i| {
            ds.items().id(i).unwrap_or_default().to_string()
        });
    }
    write(&out.join("rankings.tsv"), &text)
}

fn cmd_bound(cfg: &RunConfig, checkpoints: &[PathBuf], data: &Path, out: &Path) -> Result<()> {
    let ds = Dataset::read_dir(data)?;
    let mut text = String::new();
    let mut curve = String::from("checkpoint\tk\tcomplexity\tB\tworst_case_loss\tbound\n");
    for path in checkpoints {
        let params = load_model(path, &ds)?;
        let r = bound_report(&params, &ds, cfg.bound.delta, cfg.bound.method)?;
        if checkpoints.len() > 1 {
            text.push_str(&format!("checkpoint\t{}\n", path.display()));
        }
        text.push_str(&r.to_text());
        curve.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            path.display(),
            params.embed_dim(),
            r.inputs.complexity,
            r.inputs.b,
            r.loss.worst_case,
            r.bound
        ));
    }
    write(&out.join("bound.txt"), &text)?;
    write(&out.join("bound_curve.tsv"), &curve)
}

fn cmd_cover(n_pos: usize, n_neg: usize, method: CoverMethod, out: &Path) -> Result<()> {
    if n_pos == 0 || n_neg == 0 {
        return Err(CliError::usage("grid sides must be at least 1"));
    }
    let graph = DependencyGraph::rook_grid(n_pos, n_neg);
    let cover = fractional_chromatic(&graph, method)?;
    check_cover(&graph, &cover, 1e-9).map_err(|e| CliError {
        usage: false,
        msg: format!("invalid cover: {e}"),
    })?;
    let mut text = format!(
        "n_pos\t{n_pos}\nn_neg\t{n_neg}\nnodes\t{}\nedges\t{}\n",
        graph.n_nodes(),
        graph.n_edges()
    );
    text.push_str(&cover.to_text());
    write(&out.join("cover.txt"), &text)
}

fn cmd_compare(a: &Path, b: &Path, cutoff: usize, out: &Path) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<f64>> {
        existing(p, "per-user AP table")?;
        let text = fs::read_to_string(p).map_err(|e| CliError {
            usage: false,
            msg: format!("reading {}: {e}", p.display()),
        })?;
        Ok(read_per_user_ap(&text, cutoff)?)
    };
    let t = wilcoxon_rank_sum(&read(a)?, &read(b)?)?;
    let text = format!(
        "cutoff\t{cutoff}\nrank_sum\t{}\nu\t{}\np_value\t{}\nexact\t{}\n",
        t.rank_sum, t.u, t.p_value, t.exact
    );
    write(&out.join("compare.txt"), &text)
}
