//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,2,7` restricts the run to the listed criteria.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inrflow::backbone::modulation_slots;
use inrflow::data::{
    augment_rotation, decode_fpc, decode_tsm, encode_fpc, encode_tsm, Configuration, FieldDataset, VY, VZ,
};
use inrflow::eval::{embedding_study, hyper_correlation_report, StudyBudget};
use inrflow::geometry::encode_geometry;
use inrflow::gradcheck::{gradcheck, Scale, TOLERANCE};
use inrflow::oracle::{box_normalizer, sample_dataset, surface_mesh, Family};
use inrflow::train::{dataset_loss, recenter_all, train_backbone, train_hyper, BackboneRun, HyperRun};
use inrflow::{
    BackboneConfig, Checkpoint, EncoderConfig, HyperConfig, HyperModel, LossKind, Matrix, Model,
    Normalizer, OracleParams, SurfaceMesh, TrainPlan,
};

type Outcome = inrflow::Result<(bool, String)>;
type Criterion = (&'static str, fn(&mut Shared) -> Outcome);

/// Total samples whose 80/20 then 90/10 split leaves exactly 50,000 training points.
const SOLO_POINTS: usize = 69_445;
const HYPER_POINTS: usize = 4_000;
const PLANE_X: f64 = 0.0;
const PLANE_GRID: usize = 41;
const SEEDS: [u64; 3] = [0, 1, 2];

fn solo_theta() -> OracleParams {
    OracleParams::new(0.2, 0.05, 15.0, 0.5).unwrap()
}

fn shock_theta() -> OracleParams {
    OracleParams::new(0.2, 0.0, 25.0, 0.5).unwrap()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

struct HyperSetup {
    run: HyperRun,
    held_out: Vec<Configuration>,
    train_mae: f64,
    held_out_mae: f64,
    seconds: f64,
}

#[derive(Default)]
struct Shared {
    solo: Vec<Option<BackboneRun>>,
    solo_seconds: f64,
    hyper: Option<HyperSetup>,
}

impl Shared {
    fn solo(&mut self, seed_index: usize) -> inrflow::Result<&BackboneRun> {
        if self.solo.len() < SEEDS.len() {
            self.solo.resize_with(SEEDS.len(), || None);
        }
        if self.solo[seed_index].is_none() {
            let ds = sample_dataset(&solo_theta(), SOLO_POINTS, 42, 1e-3)?;
            let plan = TrainPlan { seed: SEEDS[seed_index], ..TrainPlan::backbone() };
            let t = Instant::now();
            let run = single_thread(|| train_backbone(&ds, &plan, &BackboneConfig::default(), None))?;
            if seed_index == 0 {
                self.solo_seconds = t.elapsed().as_secs_f64();
            }
            self.solo[seed_index] = Some(run);
        }
        Ok(self.solo[seed_index].as_ref().unwrap())
    }

    fn hyper(&mut self) -> inrflow::Result<&HyperSetup> {
        if self.hyper.is_none() {
            let thetas = Family::default().sample_many(40, 2024);
            let configs: Vec<Configuration> = thetas
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    Ok(Configuration {
                        id: format!("c{i:03}"),
                        mesh: surface_mesh(t, 64, 16)?,
                        field: sample_dataset(t, HYPER_POINTS, 100 + i as u64, 1e-3)?,
                        theta: Some(*t),
                    })
                })
                .collect::<inrflow::Result<_>>()?;
            let rc: Vec<Configuration> = recenter_all(&configs)?.into_iter().map(|(c, _)| c).collect();
            let plan = TrainPlan { batch_size: 20_000.min(HYPER_POINTS), ..TrainPlan::hyper() };
            let bb = BackboneConfig::default();
            let t = Instant::now();
            let run = train_hyper(
                &rc[..32],
                &[],
                &plan,
                bb,
                EncoderConfig::default(),
                HyperConfig::for_backbone(&bb, 16),
                None,
            )?;
            let seconds = t.elapsed().as_secs_f64();
            let train_mae = dataset_loss(&run.model, &rc[..32], LossKind::Mae)?;
            let held_out_mae = dataset_loss(&run.model, &rc[32..], LossKind::Mae)?;
            self.hyper = Some(HyperSetup { run, held_out: configs[32..].to_vec(), train_mae, held_out_mae, seconds });
        }
        Ok(self.hyper.as_ref().unwrap())
    }
}

fn gradients(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let small = gradcheck(Scale::Small, 0)?;
    let full = gradcheck(Scale::Default, 0)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = small.max_rel_error().max(full.max_rel_error());
    let detail = small
        .cases
        .iter()
        .map(|c| ("small", c))
        .chain(full.cases.iter().map(|c| ("default", c)))
        .map(|(scale, c)| format!("{scale} {} {:.2e}", c.name, c.max_rel_error))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((worst < TOLERANCE && secs < 60.0, format!("max rel error {worst:.2e} < {TOLERANCE:.0e} in {secs:.1}s ({detail})")))
}

fn architecture(_: &mut Shared) -> Outcome {
    let bb = BackboneConfig::default();
    let n_bb = bb.param_count();
    let slots = modulation_slots(&bb).total;
    let hyp = HyperConfig::default();
    let w_out = hyp.main_width * hyp.out_dim;
    let n_hyp = hyp.param_count();
    let n_enc = EncoderConfig::default().param_count();
    let ok = n_bb == 79_637 && slots == 4_373 && w_out == 209_904 && (200_000..=300_000).contains(&n_hyp);
    Ok((
        ok,
        format!(
            "backbone {n_bb}, modulated {slots}, W_out term {w_out}, hyper-net {n_hyp} (with encoder {})",
            n_hyp + n_enc
        ),
    ))
}

fn backbone_solo(s: &mut Shared) -> Outcome {
    let r = s.solo(0)?;
    let (train, test) = (r.train_mae, r.test_mae);
    let ratio = test / train;
    let secs = s.solo_seconds;
    Ok((
        test <= 5e-3 && ratio <= 1.3 && secs <= 900.0,
        format!("{} train points, test MAE {test:.3e} (≤ 5e-3), train {train:.3e}, ratio {ratio:.3} (≤ 1.3), {secs:.0}s single-threaded", s.solo[0].as_ref().unwrap().train.len()),
    ))
}

fn subsample(s: &mut Shared) -> Outcome {
    let ds = sample_dataset(&solo_theta(), SOLO_POINTS, 42, 1e-3)?;
    let mut by_frac: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for (i, &seed) in SEEDS.iter().enumerate() {
        for (k, frac) in [0.01, 0.05].into_iter().enumerate() {
            let plan = TrainPlan { seed, subsample: frac, ..TrainPlan::backbone() };
            by_frac[k].push(single_thread(|| train_backbone(&ds, &plan, &BackboneConfig::default(), None))?.test_mae);
        }
        by_frac[2].push(s.solo(i)?.test_mae);
    }
    let finite = by_frac.iter().flatten().all(|v| v.is_finite());
    let m: Vec<f64> = by_frac.iter().cloned().map(median).collect();
    Ok((
        finite && m[0] >= m[1] && m[1] >= m[2],
        format!("median test MAE 1% {:.3e} ≥ 5% {:.3e} ≥ 100% {:.3e} (per seed 1% [{}], 5% [{}], 100% [{}])", m[0], m[1], m[2], list(&by_frac[0]), list(&by_frac[1]), list(&by_frac[2])),
    ))
}

fn hyper_generalization(s: &mut Shared) -> Outcome {
    let h = s.hyper()?;
    let ratio = h.held_out_mae / h.train_mae;
    Ok((
        h.held_out_mae <= 1.5e-2 && ratio <= 2.5,
        format!(
            "held-out MAE {:.3e} (≤ 1.5e-2), train {:.3e}, ratio {ratio:.2} (≤ 2.5), 32+8 configs × {HYPER_POINTS} points, {:.0}s on {} thread(s)",
            h.held_out_mae,
            h.train_mae,
            h.seconds,
            rayon::current_num_threads()
        ),
    ))
}

fn correlation(s: &mut Shared) -> Outcome {
    let h = s.hyper()?;
    let rep = hyper_correlation_report(&h.run.model, &h.held_out, PLANE_X, PLANE_GRID)?;
    let ok = rep.r.iter().all(|(_, r)| *r >= 0.95);
    let detail = rep.r.iter().map(|(q, r)| format!("{q} r = {r:.4}")).collect::<Vec<_>>().join(", ");
    Ok((ok, format!("{detail} (≥ 0.95, plane x = {PLANE_X}, 8 held-out configs)")))
}

fn random_mesh(rng: &mut ChaCha8Rng) -> SurfaceMesh {
    let t = Family::Full.sample(rng);
    surface_mesh(&t, rng.random_range(8..40), rng.random_range(2..10)).unwrap()
}

fn zero_init(_: &mut Shared) -> Outcome {
    let fnorm = Normalizer::new(vec![0.7, 0.0, -0.2, -0.6, 0.0], vec![1.3, 1.4, 2.0, 0.6, 0.1])?;
    let bb = BackboneConfig::default();
    let m = HyperModel::init(bb, EncoderConfig::default(), HyperConfig::for_backbone(&bb, 16), box_normalizer(), fnorm, 9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = sample_dataset(&OracleParams::new(0.1, 0.0, 15.0, 0.5)?, 256, 3, 1e-3)?.coords;
    let base = m.predict_base(&x)?;
    let mut equal = 0;
    for _ in 0..10 {
        let mesh = random_mesh(&mut rng);
        let p = m.predict_field(&mesh, &x)?;
        if p.as_slice().iter().zip(base.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            equal += 1;
        }
    }
    Ok((equal == 10, format!("{equal}/10 meshes give bitwise-identical predictions to the base backbone")))
}

fn invariance(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut notes = Vec::new();
    let mut ok = true;

    let enc = EncoderConfig::default();
    let p = enc.init_params(8);
    let mesh = random_mesh(&mut rng);
    let mut shuffled = mesh.clone();
    shuffled.vertices.shuffle(&mut rng);
    shuffled.triangles.clear();
    let a = encode_geometry(&enc, &p, &mesh)?;
    let b = encode_geometry(&enc, &p, &shuffled)?;
    let perm = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    ok &= perm;
    notes.push(format!("permutation {}", if perm { "bitwise" } else { "differs" }));

    let theta = OracleParams::new(0.25, -0.1, 15.0, 0.5)?;
    let ds = sample_dataset(&theta, 2000, 8, 1e-3)?;
    let mut rot = ds.clone();
    let mut m = surface_mesh(&theta, 16, 4)?;
    let mut worst_v = 0.0f64;
    let mut worst_s = 0.0f64;
    for _ in 0..5 {
        augment_rotation(&mut rot, &mut m, (-5.0, 5.0), &mut rng)?;
    }
    for (r0, r1) in ds.features.row_iter().zip(rot.features.row_iter()) {
        let n0 = (r0[2] * r0[2] + r0[VY] * r0[VY] + r0[VZ] * r0[VZ]).sqrt();
        let n1 = (r1[2] * r1[2] + r1[VY] * r1[VY] + r1[VZ] * r1[VZ]).sqrt();
        worst_v = worst_v.max((n0 - n1).abs());
        worst_s = worst_s.max((r0[0] - r1[0]).abs()).max((r0[1] - r1[1]).abs());
    }
    ok &= worst_v <= 1e-12 && worst_s == 0.0;
    notes.push(format!("|v| drift {worst_v:.1e}"));

    let data: Vec<f64> = (0..5000).map(|_| rng.random_range(-50.0..50.0)).collect();
    let mat = Matrix::from_vec(1000, 5, data)?;
    let norm = Normalizer::fit(&mat)?;
    let back = norm.denormalize(&norm.normalize(&mat)?)?;
    let rt = mat.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ok &= rt <= 1e-12;
    notes.push(format!("normalizer round trip {rt:.1e}"));

    let f32ish = FieldDataset::new(
        Matrix::from_vec(100, 3, (0..300).map(|_| rng.random::<f32>() as f64).collect())?,
        Matrix::from_vec(100, 5, (0..500).map(|_| rng.random::<f32>() as f64).collect())?,
    )?;
    let fpc = decode_fpc(&encode_fpc(&f32ish)?)? == f32ish;
    let mut mesh32 = mesh.clone();
    for v in &mut mesh32.vertices {
        *v = v.map(|c| c as f32 as f64);
    }
    let tsm = decode_tsm(&encode_tsm(&mesh32)?)? == mesh32;
    let hyper = HyperModel::init(BackboneConfig::default(), enc, HyperConfig::default(), box_normalizer(), norm.clone(), 1)?;
    let ck = Checkpoint { model: Model::Hyper(hyper), seed: 1, metadata: serde_json::json!({"k": 1}) };
    let ckpt = Checkpoint::from_bytes(&ck.to_bytes()?)? == ck;
    ok &= fpc && tsm && ckpt;
    notes.push(format!("files fpc {fpc} tsm {tsm} checkpoint {ckpt}"));

    let small = BackboneConfig { hidden: 24, depth: 2, ..Default::default() };
    let plan = TrainPlan { epochs: 3, batch_size: 1500, ..TrainPlan::backbone() };
    let field = sample_dataset(&theta, 3000, 5, 1e-3)?;
    let in_pool = |n: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| train_backbone(&field, &plan, &small, None))
    };
    let (r1, r4) = (in_pool(1)?, in_pool(4)?);
    let configs: Vec<Configuration> = [0.15, 0.25]
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let t = OracleParams::new(a, 0.0, 15.0, 0.5).unwrap();
            Configuration {
                id: format!("d{i}"),
                mesh: surface_mesh(&t, 12, 3).unwrap(),
                field: sample_dataset(&t, 1200, i as u64, 1e-3).unwrap(),
                theta: Some(t),
            }
        })
        .collect();
    let rc: Vec<Configuration> = recenter_all(&configs)?.into_iter().map(|(c, _)| c).collect();
    let hplan = TrainPlan { epochs: 2, batch_size: 1200, ..TrainPlan::hyper() };
    let henc = EncoderConfig { main_width: 16, residual_width: 16, residual_blocks: 1, embedding_dim: 4, ..Default::default() };
    let hyp = HyperConfig { main_width: 8, residual_width: 8, ..HyperConfig::for_backbone(&small, 4) };
    let hyper_in = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| train_hyper(&rc[..1], &rc[1..], &hplan, small, henc, hyp, None))
    };
    let (h1, h4) = (hyper_in(1)?, hyper_in(4)?);
    let threads = r1.history.bitwise_eq(&r4.history) && r1.model == r4.model && h1.history.bitwise_eq(&h4.history) && h1.model == h4.model;
    ok &= threads;
    notes.push(format!("1 vs 4 threads {}", if threads { "bitwise" } else { "differ" }));
    Ok((ok, notes.join(", ")))
}

fn embedding(_: &mut Shared) -> Outcome {
    let meshes: Vec<SurfaceMesh> = Family::default()
        .sample_many(8, 3)
        .iter()
        .map(|t| surface_mesh(t, 16, 8))
        .collect::<inrflow::Result<_>>()?;
    let (mut d0, mut d4) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let r = embedding_study(&meshes, &[0, 4], &EncoderConfig::default(), &StudyBudget::default(), seed)?;
        d0.push(r[0].final_loss);
        d4.push(r[1].final_loss);
    }
    let (m0, m4) = (median(d0.clone()), median(d4.clone()));
    Ok((m4 < m0, format!("median Chamfer d=4 {m4:.4e} < d=0 {m0:.4e} (seeds d=0 [{}], d=4 [{}])", list(&d0), list(&d4))))
}

fn loss_choice(_: &mut Shared) -> Outcome {
    let ds = sample_dataset(&shock_theta(), 10_000, 77, 1e-3)?;
    let (mut mae, mut mse) = (Vec::new(), Vec::new());
    let mut finite = true;
    for seed in SEEDS {
        for (kind, out) in [(LossKind::Mae, &mut mae), (LossKind::Mse, &mut mse)] {
            let plan = TrainPlan { seed, loss: kind, ..TrainPlan::backbone() };
            let r = single_thread(|| train_backbone(&ds, &plan, &BackboneConfig::default(), None))?;
            finite &= r.history.is_finite();
            out.push(r.test_mae);
        }
    }
    let (a, b) = (median(mae.clone()), median(mse.clone()));
    Ok((
        finite && a <= b,
        format!("median test MAE with MAE training {a:.3e} ≤ with MSE training {b:.3e} (per seed [{}] vs [{}])", list(&mae), list(&mse)),
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradients),
        ("architecture arithmetic", architecture),
        ("backbone solo", backbone_solo),
        ("subsample study", subsample),
        ("hyper-net generalization", hyper_generalization),
        ("quantity correlation", correlation),
        ("zero-init identity", zero_init),
        ("invariance suite", invariance),
        ("embedding study", embedding),
        ("MAE vs MSE", loss_choice),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f(&mut shared) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
