use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;

use inrflow::data::{
    atomic_write, load_configurations, read_coords, read_fpc, read_tsm, save_configurations,
    write_query, FEATURE_NAMES,
};
use inrflow::eval::{correlation_report, extract_slice, metrics, Axis, Conditioned, FieldSource, Masked, SliceSpec};
use inrflow::gradcheck::{self, Scale, TOLERANCE};
use inrflow::oracle::{self, Family};
use inrflow::train::{recenter_all, train_backbone, train_hyper, EpochRecord};
use inrflow::{
    BackboneConfig, Checkpoint, Configuration, ConfigurationSet, EncoderConfig, HyperConfig, LossKind, Matrix, Model,
    OracleParams, PositionalEncoder, SurfaceMesh, TrainPlan,
};

use crate::{Cli, Command, Global};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_CHECK: u8 = 4;

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_CHECK;
        }
        if let Some(err) = cause.downcast_ref::<inrflow::Error>() {
            return match err {
                inrflow::Error::Config(_) | inrflow::Error::Usage(_) => EXIT_USAGE,
                inrflow::Error::Divergence { .. } | inrflow::Error::ZeroVariance => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_INPUT
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a, g),
        Command::TrainBackbone(a) => train_backbone_cmd(a, g),
        Command::TrainHyper(a) => train_hyper_cmd(a, g),
        Command::Query(a) => query(a),
        Command::Slice(a) => slice(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a, g),
        Command::Info(a) => info(a),
    }
}

fn to_core(e: anyhow::Error) -> inrflow::Error {
    match e.downcast::<inrflow::Error>() {
        Ok(e) => e,
        Err(e) => inrflow::Error::Usage(format!("{e:#}")),
    }
}

fn parse_theta(s: &str) -> Result<OracleParams> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| usage(format!("theta {s:?}: {e}")))?;
    let [a, c_y, s_, x_s] = v[..] else {
        return Err(usage(format!("theta needs four values a,c_y,s,x_s, got {}", v.len())));
    };
    Ok(OracleParams::new(a, c_y, s_, x_s)?)
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| usage(format!("grid {s:?} is not NxM")))?;
    let n = a.trim().parse().map_err(|_| usage(format!("grid {s:?} is not NxM")))?;
    let m = b.trim().parse().map_err(|_| usage(format!("grid {s:?} is not NxM")))?;
    Ok((n, m))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn history_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".history.csv");
        PathBuf::from(s)
    })
}

fn log_epoch(total: usize) -> impl FnMut(&EpochRecord) {
    move |r| {
        eprintln!(
            "epoch {}/{} train_loss {:.6e} val_loss {:.6e} lr {:.4e}",
            r.epoch, total, r.train_loss, r.val_loss, r.lr
        )
    }
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

#[derive(Debug, Args)]
pub struct GenSynth {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub n_configs: usize,
    /// Volume points per configuration.
    #[arg(long, default_value_t = 20_000)]
    pub points: usize,
    /// Fixed parameters a,c_y,s,x_s for every configuration.
    #[arg(long)]
    pub theta: Option<String>,
    /// Parameter family when --theta is absent: geometric (a, c_y vary) or full.
    #[arg(long, default_value = "geometric")]
    pub family: String,
    #[arg(long, default_value_t = 64)]
    pub mesh_circ: usize,
    #[arg(long, default_value_t = 16)]
    pub mesh_span: usize,
    /// Minimum distance of sampled points from the obstacle surface.
    #[arg(long, default_value_t = 1e-3)]
    pub wall_offset: f64,
}

fn gen_synth(a: &GenSynth, g: &Global) -> Result<()> {
    if a.n_configs == 0 || a.points == 0 {
        return Err(usage("--n-configs and --points must be positive"));
    }
    let thetas = match &a.theta {
        Some(t) => vec![parse_theta(t)?; a.n_configs],
        None => {
            let family = match a.family.as_str() {
                "geometric" => Family::default(),
                "full" => Family::Full,
                other => return Err(usage(format!("unknown family {other:?}"))),
            };
            family.sample_many(a.n_configs, g.seed)
        }
    };
    let configs = thetas
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(Configuration {
                id: format!("c{i:03}"),
                mesh: oracle::surface_mesh(t, a.mesh_circ, a.mesh_span)?,
                field: oracle::sample_dataset(t, a.points, g.seed.wrapping_add(1 + i as u64), a.wall_offset)?,
                theta: Some(*t),
            })
        })
        .collect::<inrflow::Result<Vec<_>>>()?;
    let meta = json!({
        "seed": g.seed,
        "points": a.points,
        "family": if a.theta.is_some() { "fixed" } else { a.family.as_str() },
        "mesh": [a.mesh_circ, a.mesh_span],
        "wall_offset": a.wall_offset,
    });
    save_configurations(&a.out, &configs, meta)?;
    eprintln!("wrote {} configurations to {}", configs.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BackboneArgs {
    #[arg(long, default_value_t = 4)]
    pub pe_levels: usize,
    #[arg(long, default_value_t = 0.5)]
    pub pe_base: f64,
    #[arg(long, default_value_t = 112)]
    pub hidden: usize,
    /// Hidden layers after the input layer.
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
}

impl BackboneArgs {
    fn config(&self) -> Result<BackboneConfig> {
        let cfg = BackboneConfig {
            hidden: self.hidden,
            depth: self.layers,
            encoder: PositionalEncoder::new(self.pe_base, self.pe_levels, 3)?,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainBackbone {
    /// FPC file with the field samples.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub batch: usize,
    #[arg(long, default_value = "mae")]
    pub loss: LossKind,
    /// Fraction of the training split to keep.
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
    #[command(flatten)]
    pub backbone: BackboneArgs,
}

fn train_backbone_cmd(a: &TrainBackbone, g: &Global) -> Result<()> {
    let cfg = a.backbone.config()?;
    let ds = read_fpc(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let plan = TrainPlan {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        loss: a.loss,
        seed: g.seed,
        subsample: a.subsample,
        ..TrainPlan::backbone()
    };
    let mut log = log_epoch(a.epochs);
    let run = train_backbone(&ds, &plan, &cfg, Some(&mut log))?;
    eprintln!(
        "normalized MAE train {:.6e} val {:.6e} test {:.6e}",
        run.train_mae, run.val_mae, run.test_mae
    );
    let metadata = json!({
        "command": "train-backbone",
        "plan": plan,
        "deterministic": g.deterministic,
        "points": {"train": run.train.len(), "val": run.val.len(), "test": run.test.len()},
        "normalized_mae": {"train": run.train_mae, "val": run.val_mae, "test": run.test_mae},
    });
    let ck = Checkpoint { model: Model::Backbone(run.model), seed: g.seed, metadata };
    let mut hist = Vec::new();
    run.history.write_csv(&mut hist)?;
    write_atomic(&history_path(&a.out, &a.history), &hist)?;
    ck.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainHyper {
    /// Directory written by gen-synth (manifest plus FPC/TSM files).
    #[arg(long)]
    pub configs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Points per batch within one configuration.
    #[arg(long, default_value_t = 20_000)]
    pub config_batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 5.0)]
    pub augment_deg: f64,
    #[arg(long, default_value_t = 16)]
    pub embedding_dim: usize,
    /// Fraction of configurations held out for validation.
    #[arg(long, default_value_t = 0.15)]
    pub val_fraction: f64,
    #[arg(long, default_value = "mae")]
    pub loss: LossKind,
    #[command(flatten)]
    pub backbone: BackboneArgs,
}

fn train_hyper_cmd(a: &TrainHyper, g: &Global) -> Result<()> {
    let bb = a.backbone.config()?;
    if a.embedding_dim == 0 {
        return Err(usage("--embedding-dim must be at least 1"));
    }
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(usage("--val-fraction must lie in [0, 1)"));
    }
    let enc = EncoderConfig { embedding_dim: a.embedding_dim, ..Default::default() };
    let hyp = HyperConfig::for_backbone(&bb, a.embedding_dim);
    let set = ConfigurationSet::new(load_configurations(&a.configs)?)?;
    let (train, val) = if a.val_fraction > 0.0 && set.len() >= 2 {
        let mut parts = set.split(&[1.0 - a.val_fraction, a.val_fraction], g.seed)?;
        let val = parts.pop().expect("two parts");
        (parts.pop().expect("two parts"), val)
    } else {
        (set.configs.clone(), Vec::new())
    };
    let strip = |cs: &[Configuration]| -> Result<Vec<Configuration>> {
        Ok(recenter_all(cs)?.into_iter().map(|(c, _)| c).collect())
    };
    let (train_r, val_r) = (strip(&train)?, strip(&val)?);
    let plan = TrainPlan {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.config_batch,
        loss: a.loss,
        seed: g.seed,
        dropout: a.dropout,
        augment_deg: a.augment_deg,
        ..TrainPlan::hyper()
    };
    eprintln!("{} training and {} validation configurations", train.len(), val.len());
    let mut log = log_epoch(a.epochs);
    let run = train_hyper(&train_r, &val_r, &plan, bb, enc, hyp, Some(&mut log))?;
    let last = run.history.records.last().expect("at least one epoch");
    let metadata = json!({
        "command": "train-hyper",
        "plan": plan,
        "deterministic": g.deterministic,
        "train_ids": train.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
        "val_ids": val.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(),
        "initial_val_loss": run.initial_val_loss,
        "final_train_loss": last.train_loss,
        "final_val_loss": last.val_loss,
    });
    let ck = Checkpoint { model: Model::Hyper(run.model), seed: g.seed, metadata };
    let mut hist = Vec::new();
    run.history.write_csv(&mut hist)?;
    write_atomic(&history_path(&a.out, &a.history), &hist)?;
    ck.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

/// Predictions in physical units; hyper checkpoints need the mesh.
fn predict(model: &Model, mesh: Option<&SurfaceMesh>, coords: &Matrix) -> Result<Matrix> {
    match model {
        Model::Backbone(m) => Ok(m.predict(coords)?),
        Model::Hyper(m) => {
            let mesh = mesh.ok_or_else(|| usage("hyper checkpoints need --mesh"))?;
            Ok(m.predict_recentered(mesh, coords)?)
        }
    }
}

#[derive(Debug, Args)]
pub struct Query {
    #[arg(long)]
    pub model: PathBuf,
    /// Surface mesh (TSM), required for hyper checkpoints.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// CSV with x,y,z columns.
    #[arg(long)]
    pub coords: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn query(a: &Query) -> Result<()> {
    let ck = load_model(&a.model)?;
    let mesh = a.mesh.as_deref().map(read_tsm).transpose()?;
    let file = std::fs::File::open(&a.coords).with_context(|| format!("opening {}", a.coords.display()))?;
    let coords = read_coords(std::io::BufReader::new(file))?;
    let feats = predict(&ck.model, mesh.as_ref(), &coords)?;
    let mut buf = Vec::new();
    write_query(&mut buf, &coords, &feats)?;
    write_atomic(&a.out, &buf)
}

#[derive(Debug, Args)]
pub struct Slice {
    #[arg(long, required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    /// Analytic field a,c_y,s,x_s; with --model it only marks the obstacle interior.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value = "x")]
    pub axis: Axis,
    /// Plane position in normalized units.
    #[arg(long)]
    pub value: f64,
    #[arg(long, default_value = "64x64")]
    pub grid: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn slice(a: &Slice) -> Result<()> {
    let spec = SliceSpec { axis: a.axis, value: a.value, grid: parse_grid(&a.grid)? };
    let theta = a.oracle.as_deref().map(parse_theta).transpose()?;
    let mesh = a.mesh.as_deref().map(read_tsm).transpose()?;
    let ck = a.model.as_deref().map(load_model).transpose()?;
    let result = match (&ck, &theta) {
        (None, Some(t)) => extract_slice(t, &spec, &oracle::box_normalizer())?,
        (Some(ck), _) => {
            let (norm, _) = ck.model.normalizers();
            let conditioned;
            let source: &dyn FieldSource = match &ck.model {
                Model::Backbone(m) => m,
                Model::Hyper(m) => {
                    let mesh = mesh.as_ref().ok_or_else(|| usage("hyper checkpoints need --mesh"))?;
                    conditioned = Conditioned { model: m, mesh };
                    &conditioned
                }
            };
            match &theta {
                Some(t) => extract_slice(&Masked { field: source, mask: t }, &spec, norm)?,
                None => extract_slice(source, &spec, norm)?,
            }
        }
        (None, None) => return Err(usage("slice needs --model or --oracle")),
    };
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub model: PathBuf,
    /// Single field (FPC); hyper checkpoints also need --mesh.
    #[arg(long, conflicts_with = "configs")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Configuration directory.
    #[arg(long, required_unless_present = "data")]
    pub configs: Option<PathBuf>,
    /// Comma-separated subset of mae,mse,pearson.
    #[arg(long, default_value = "mae,mse")]
    pub metrics: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-configuration quantities behind the pearson rows.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Plane position for the aggregated quantities.
    #[arg(long, default_value_t = 0.0)]
    pub x_out: f64,
    #[arg(long, default_value_t = 41)]
    pub plane_grid: usize,
}

fn eval_cmd(a: &Eval) -> Result<()> {
    let wanted: Vec<&str> = a.metrics.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = wanted.iter().find(|m| !["mae", "mse", "pearson"].contains(m)) {
        return Err(usage(format!("unknown metric {bad:?}")));
    }
    let ck = load_model(&a.model)?;
    let (_, fnorm) = ck.model.normalizers();
    let configs = match (&a.data, &a.configs) {
        (Some(d), _) => {
            let field = read_fpc(d)?;
            let mesh = match a.mesh.as_deref().map(read_tsm).transpose()? {
                Some(m) => m,
                None => SurfaceMesh { vertices: vec![[0.0; 3]], triangles: vec![] },
            };
            vec![Configuration { id: "data".into(), mesh, field, theta: None }]
        }
        (None, Some(dir)) => load_configurations(dir)?,
        (None, None) => return Err(usage("eval needs --data or --configs")),
    };
    let needs_mesh = matches!(ck.model, Model::Hyper(_)) && a.data.is_some() && a.mesh.is_none();
    if needs_mesh {
        return Err(usage("hyper checkpoints need --mesh"));
    }
    let mut pred_all = Vec::new();
    let mut true_all = Vec::new();
    for c in &configs {
        pred_all.push(fnorm.normalize(&predict(&ck.model, Some(&c.mesh), &c.field.coords)?)?);
        true_all.push(fnorm.normalize(&c.field.features)?);
    }
    let stack = |ms: &[Matrix]| -> Result<Matrix> {
        let mut it = ms.iter();
        let mut acc = it.next().expect("at least one configuration").clone();
        for m in it {
            acc = acc.vstack(m)?;
        }
        Ok(acc)
    };
    let m = metrics(&stack(&pred_all)?, &stack(&true_all)?)?;
    let mut out = String::from("metric,feature,value\n");
    for (name, total, per) in [("mae", m.mae, &m.mae_per_feature), ("mse", m.mse, &m.mse_per_feature)] {
        if !wanted.contains(&name) {
            continue;
        }
        out.push_str(&format!("{name},all,{total}\n"));
        for (f, v) in FEATURE_NAMES.iter().zip(per.iter()) {
            out.push_str(&format!("{name},{f},{v}\n"));
        }
        eprintln!("normalized {name} {total:.6e}");
    }
    if wanted.contains(&"pearson") {
        let rep = correlation_report(
            |c, x| predict(&ck.model, Some(&c.mesh), x).map_err(to_core),
            &configs,
            a.x_out,
            a.plane_grid,
        )?;
        for (q, r) in &rep.r {
            out.push_str(&format!("pearson,{q},{r}\n"));
            eprintln!("pearson {q} {r:.6}");
        }
        if let Some(p) = &a.report {
            let mut buf = Vec::new();
            rep.write_csv(&mut buf)?;
            write_atomic(p, &buf)?;
        }
    }
    write_atomic(&a.out, out.as_bytes())
}

#[derive(Debug, Args)]
pub struct Gradcheck {
    #[arg(long, default_value = "small")]
    pub scale: Scale,
}

fn gradcheck_cmd(a: &Gradcheck, g: &Global) -> Result<()> {
    let report = gradcheck::gradcheck(a.scale, g.seed)?;
    for c in &report.cases {
        println!(
            "{:<28} checked {:>6}  max rel error {:.3e}  at {}",
            c.name, c.checked, c.max_rel_error, c.worst
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e} (tolerance {TOLERANCE:.0e})");
    if !report.passed() {
        return Err(CheckFailed(format!("gradient check failed: {worst:.3e} ≥ {TOLERANCE:.0e}")).into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct Info {
    #[arg(long)]
    pub model: PathBuf,
}

fn info(a: &Info) -> Result<()> {
    let ck = load_model(&a.model)?;
    let bb = ck.model.backbone_config();
    println!("kind: {}", ck.model.kind());
    println!(
        "backbone: hidden {} layers {} pe levels {} base {}",
        bb.hidden, bb.depth, bb.encoder.levels, bb.encoder.base_frequency
    );
    match &ck.model {
        Model::Backbone(m) => println!("parameters: {}", m.params.len()),
        Model::Hyper(m) => {
            let n = m.count_parameters();
            println!("encoder: widths {}/{} blocks {} embedding {}", m.encoder.main_width, m.encoder.residual_width, m.encoder.residual_blocks, m.encoder.embedding_dim);
            println!("hyper-net: widths {}/{} blocks {} outputs {} dropout {}", m.hyper.main_width, m.hyper.residual_width, m.hyper.blocks, m.hyper.out_dim, m.hyper.dropout);
            println!("parameters: backbone {} encoder {} hyper-net {} encoder+hyper-net {} total {}", n.backbone, n.encoder, n.hyper, n.encoder_and_hyper, n.total);
        }
    }
    let (cn, fnorm) = ck.model.normalizers();
    for (i, axis) in ["x", "y", "z"].iter().enumerate() {
        println!("range {axis}: [{}, {}]", cn.min[i], cn.max[i]);
    }
    for (i, f) in FEATURE_NAMES.iter().enumerate() {
        println!("range {f}: [{}, {}]", fnorm.min[i], fnorm.max[i]);
    }
    println!("seed: {}", ck.seed);
    println!("metadata: {}", ck.metadata);
    Ok(())
}

