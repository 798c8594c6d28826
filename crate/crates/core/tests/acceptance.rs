//! Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//!
//! Exits non-zero on a failure only when `ACCEPTANCE_STRICT=1`, so the
//! workspace test run reports results without hiding them. The optional
//! real-data criterion runs when `GVPR_DATASET_DIR` points at transcoded
//! recordings (`train.evpr`, `train_poses.csv`, `test.evpr`,
//! `test_poses.csv`).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gvpr_core::autodiff::{grad_check, Graph, SpikeForward, Tensor, Var};
use gvpr_core::config::{Profile, RunConfig};
use gvpr_core::eventio::{load_events, load_poses, make_samples, EventFormat, EventSample, SampleSet};
use gvpr_core::localization::{build_sequences, cosine_similarity_seq, localization_report, LatentSequence, ReferenceDatabase};
use gvpr_core::model::GuidedVae;
use gvpr_core::pipeline::{coords, excitation_accuracy, latent_means, latent_probe, localize_samples, synth_samples, LatentPart};
use gvpr_core::spiking::lif_unroll_with;
use gvpr_core::training::{
    beta_vae_loss, evaluate, excitation_loss, inhibition_encoder_loss, train, write_metrics_csv, TrainConfig,
    TrainOutcome,
};
use gvpr_core::Result;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Line {
    name: &'static str,
    verdict: Verdict,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Line {
    Line {
        name,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

fn gradients() -> Line {
    type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels = vec![2usize, 9, 15];
    let target = Tensor::new(vec![2, 2, 3, 3], (0..36).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
    let mut relu_in = random(&mut rng, &[4, 5]);
    relu_in.data_mut().iter_mut().for_each(|v| *v += 0.1 * v.signum());
    let lif = gvpr_core::LifParams::default();
    let cases: Vec<(&str, Build, Vec<Tensor>)> = vec![
        (
            "conv2d",
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
            vec![random(&mut rng, &[2, 2, 6, 6]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3])],
        ),
        (
            "conv_transpose2d",
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], v[2], 2, 1, 1)),
            vec![random(&mut rng, &[2, 3, 3, 3]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[2])],
        ),
        (
            "linear",
            Box::new(|g, v| g.linear(v[0], v[1], v[2])),
            vec![random(&mut rng, &[3, 5]), random(&mut rng, &[4, 5]), random(&mut rng, &[4])],
        ),
        ("relu", Box::new(|g, v| g.relu(v[0])), vec![relu_in]),
        (
            "beta_vae_loss",
            Box::new(move |g, v| {
                let r = g.sigmoid(v[0])?;
                Ok(beta_vae_loss(g, r, &target, v[1], v[2], 2.5)?.total)
            }),
            vec![random(&mut rng, &[2, 2, 3, 3]), random(&mut rng, &[2, 6]), random(&mut rng, &[2, 6])],
        ),
        (
            "excitation_ce",
            Box::new(move |g, v| excitation_loss(g, v[0], &labels)),
            vec![random(&mut rng, &[3, 16])],
        ),
        (
            "inhibition_ce",
            Box::new(|g, v| inhibition_encoder_loss(g, v[0])),
            vec![random(&mut rng, &[3, 16])],
        ),
        (
            "lif_unroll",
            Box::new(move |g, v| {
                let s = lif_unroll_with(g, v, &lif, SpikeForward::Smoothed)?;
                let mut acc = s[0];
                for &x in &s[1..] {
                    acc = g.add(acc, x)?;
                }
                Ok(acc)
            }),
            (0..6).map(|_| random(&mut rng, &[2, 3])).collect(),
        ),
    ];
    let mut worst = (0.0f64, "");
    for (name, build, inputs) in cases {
        match grad_check(build, &inputs) {
            Ok(r) if r.max_rel_error > worst.0 => worst = (r.max_rel_error, name),
            Ok(_) => {}
            Err(e) => return check("gradient correctness", false, format!("{name}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "gradient correctness",
        worst.0 <= 1e-4 && secs < 60.0,
        format!("max rel error {:.2e} ({}) <= 1e-4, {secs:.2} s < 60 s", worst.0, worst.1),
    )
}

fn closed_forms() -> Line {
    let run = || -> Result<(f64, f64, f64)> {
        let mut g = Graph::new();
        let zeros = g.input(Tensor::zeros(&[1, 64]));
        let kl0 = g.gaussian_kl(zeros, zeros)?;
        let ones = g.input(Tensor::full(&[1, 64], 1.0));
        let kl1 = g.gaussian_kl(ones, zeros)?;
        let logits = g.input(Tensor::full(&[2, 16], 0.7));
        let ce = excitation_loss(&mut g, logits, &[3, 12])?;
        Ok((g.value(kl0).data()[0], g.value(kl1).data()[0], g.value(ce).data()[0]))
    };
    match run() {
        Ok((kl0, kl1, ce)) => check(
            "closed-form losses",
            kl0 == 0.0 && (kl1 - 32.0).abs() <= 1e-9 && (ce - 16f64.ln()).abs() <= 1e-9,
            format!("KL(0,0) = {kl0}, KL(1,0) = {kl1:.12}, CE(uniform) = {ce:.12} vs ln 16"),
        ),
        Err(e) => check("closed-form losses", false, e.to_string()),
    }
}

fn cosine_properties() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let seq = |rng: &mut ChaCha8Rng| {
        let rows = (0..80).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        LatentSequence::new(5, 16, rows, (0.0, 0.0)).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let alpha = 10f64.powf(rng.random::<f64>() * 6.0 - 3.0);
        let ab = cosine_similarity_seq(&a, &b).unwrap();
        worst = worst
            .max((cosine_similarity_seq(&a, &a).unwrap() - 1.0).abs())
            .max((ab - cosine_similarity_seq(&b, &a).unwrap()).abs())
            .max((cosine_similarity_seq(&a.scaled(alpha), &b).unwrap() - ab).abs());
    }
    let a = LatentSequence::new(5, 16, vec![1.0; 80], (0.0, 0.0)).unwrap();
    let b = LatentSequence::new(5, 16, (0..80).map(|i| f64::from(i < 40)).collect(), (0.0, 0.0)).unwrap();
    let example = cosine_similarity_seq(&a, &b).unwrap();
    check(
        "sequence cosine properties",
        worst <= 1e-12 && (example - 0.70711).abs() <= 1e-5,
        format!("max deviation {worst:.1e} <= 1e-12 over 1000 pairs, example {example:.6} vs 0.70711"),
    )
}

struct Synthetic {
    cfg: RunConfig,
    train: SampleSet,
    test: SampleSet,
}

fn synthetic() -> Result<Synthetic> {
    let cfg = RunConfig::profile(Profile::Tiny);
    let train = synth_samples(&cfg.recording(false), &cfg.arena, &cfg.sampling)?;
    let test = synth_samples(&cfg.recording(true), &cfg.arena, &cfg.sampling)?;
    Ok(Synthetic { cfg, train, test })
}

fn fit(data: &Synthetic, tcfg: &TrainConfig) -> Result<(TrainOutcome, f64)> {
    let start = Instant::now();
    let model = GuidedVae::new(data.cfg.arch.clone(), data.cfg.lif, tcfg.seed)?;
    let out = train(&data.train, model, tcfg, |_| {})?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn recon_bce(model: &GuidedVae, samples: &[EventSample], cap: u8) -> Result<f64> {
    let refs: Vec<&EventSample> = samples.iter().collect();
    Ok(evaluate(model, &refs, cap)?.recon)
}

fn end_to_end(data: &Synthetic, guided: &GuidedVae, secs: f64) -> Result<Line> {
    let exc = excitation_accuracy(guided, &data.test.samples)?;
    let probe = latent_probe(guided, &data.train.samples, &data.test.samples, LatentPart::Inhibition, &data.cfg.probe)?;
    let chance = 1.0 / data.cfg.arena.num_cells() as f64;
    Ok(check(
        "synthetic end-to-end",
        exc >= 0.85 && probe.test_acc <= chance + 0.15 && secs <= 900.0,
        format!(
            "{} train / {} test samples; exc acc {:.1}% >= 85%, inhibition probe {:.1}% <= {:.0}%, training {secs:.0} s <= 900 s",
            data.train.len(),
            data.test.len(),
            100.0 * exc,
            100.0 * probe.test_acc,
            100.0 * (chance + 0.15)
        ),
    ))
}

fn localization(data: &Synthetic, guided: &GuidedVae) -> Result<Line> {
    let len = data.cfg.localization.sequence_len;
    let half_diag = data.cfg.arena.cell_diagonal() / 2.0;
    let held_out = localize_samples(guided, &data.train.samples, &data.test.samples, len)?;
    let frac = held_out.fraction_below(half_diag);
    let k = guided.arch().excitation_dim;
    let refs = build_sequences(&latent_means(guided, &data.train.samples)?, k, &coords(&data.train.samples), len)?;
    let own = localization_report(&refs, &ReferenceDatabase::new(refs.clone())?)?;
    let exact = own.matches.iter().enumerate().filter(|(i, m)| i == *m).count();
    let zero = own.errors.iter().all(|&e| e == 0.0);
    Ok(check(
        "synthetic localization",
        frac >= 0.85 && exact == refs.len() && zero,
        format!(
            "{:.1}% of {} queries within {half_diag:.2} m (>= 85%); self-retrieval {exact}/{} exact, zero error: {zero}",
            100.0 * frac,
            held_out.errors.len(),
            refs.len()
        ),
    ))
}

fn unguided(data: &Synthetic, guided: &GuidedVae) -> Result<Line> {
    let (out, _) = fit(data, &data.cfg.train.unguided())?;
    let probe = latent_probe(&out.model, &data.train.samples, &data.test.samples, LatentPart::Excitation, &data.cfg.probe)?;
    let cap = data.cfg.sampling.binning.clip_cap;
    let (bce_u, bce_g) = (recon_bce(&out.model, &data.test.samples, cap)?, recon_bce(guided, &data.test.samples, cap)?);
    let chance = 1.0 / data.cfg.arena.num_cells() as f64;
    let rel = (bce_u - bce_g).abs() / bce_g;
    Ok(check(
        "unguided ablation",
        probe.test_acc <= chance + 0.10 && rel <= 0.20,
        format!(
            "probe on excitation slots {:.1}% <= {:.0}%, test BCE {bce_u:.1} vs guided {bce_g:.1} ({:.1}% <= 20%)",
            100.0 * probe.test_acc,
            100.0 * (chance + 0.10),
            100.0 * rel
        ),
    ))
}

/// Metrics CSV with the wall-clock column dropped.
fn metrics_without_time(out: &TrainOutcome) -> Result<String> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("m.csv");
    write_metrics_csv(&path, &out.metrics)?;
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n"))
}

fn determinism(data: &Synthetic, guided: &GuidedVae) -> Result<Line> {
    let tcfg = TrainConfig {
        epochs: 3,
        ..data.cfg.train.clone()
    };
    let (a, _) = fit(data, &tcfg)?;
    let (b, _) = fit(data, &tcfg)?;
    let same_metrics = metrics_without_time(&a)? == metrics_without_time(&b)?;
    let same_weights = a.model.params() == b.model.params();
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.gvae");
    guided.save(&path, serde_json::json!({}))?;
    let bytes = std::fs::read(&path)?;
    let (back, _) = GuidedVae::load(&path)?;
    let path2 = dir.path().join("again.gvae");
    back.save(&path2, serde_json::json!({}))?;
    let stored: Vec<Vec<f32>> = guided.params().iter().map(|t| t.data().iter().map(|&v| v as f32).collect()).collect();
    let loaded: Vec<Vec<f32>> = back.params().iter().map(|t| t.data().iter().map(|&v| v as f32).collect()).collect();
    let round_trip = stored == loaded && bytes == std::fs::read(&path2)?;
    Ok(check(
        "determinism",
        same_metrics && same_weights && round_trip,
        format!(
            "metrics CSVs identical (wall_s excluded): {same_metrics}, weights identical: {same_weights}, checkpoint round trip bit-exact: {round_trip}"
        ),
    ))
}

fn real_dataset() -> Result<Line> {
    let Some(dir) = std::env::var_os("GVPR_DATASET_DIR") else {
        return Ok(Line {
            name: "real-data reproduction (optional)",
            verdict: Verdict::Skip,
            detail: "GVPR_DATASET_DIR not set".into(),
        });
    };
    let dir = std::path::PathBuf::from(dir);
    let cfg = RunConfig::profile(Profile::Paper);
    let load = |which: &str| -> Result<SampleSet> {
        let stream = load_events(&dir.join(format!("{which}.evpr")), EventFormat::Binary)?;
        let poses = load_poses(&dir.join(format!("{which}_poses.csv")))?;
        Ok(SampleSet {
            arena: cfg.arena,
            binning: cfg.sampling.binning,
            samples: make_samples(&stream, &poses, &cfg.arena, &cfg.sampling)?,
        })
    };
    let data = Synthetic {
        train: load("train")?,
        test: load("test")?,
        cfg,
    };
    let (out, _) = fit(&data, &data.cfg.train)?;
    let acc = excitation_accuracy(&out.model, &data.test.samples)?;
    let r = localize_samples(&out.model, &data.train.samples, &data.test.samples, data.cfg.localization.sequence_len)?;
    let frac = r.fraction_below(0.5);
    Ok(check(
        "real-data reproduction (optional)",
        acc >= 0.80 && frac >= 0.80,
        format!("classification {:.1}% >= 80%, errors < 0.5 m {:.1}% >= 80%", 100.0 * acc, 100.0 * frac),
    ))
}

fn synthetic_suite() -> Vec<Line> {
    let failed = |name: &'static str, e: gvpr_core::Error| check(name, false, format!("error: {e}"));
    let data = match synthetic() {
        Ok(d) => d,
        Err(e) => {
            return ["synthetic end-to-end", "synthetic localization", "unguided ablation", "determinism"]
                .into_iter()
                .map(|n| failed(n, gvpr_core::Error::Config(e.to_string())))
                .collect();
        }
    };
    let (guided, secs) = match fit(&data, &data.cfg.train) {
        Ok((o, s)) => (o.model, s),
        Err(e) => return vec![failed("synthetic end-to-end", e)],
    };
    vec![
        end_to_end(&data, &guided, secs).unwrap_or_else(|e| failed("synthetic end-to-end", e)),
        localization(&data, &guided).unwrap_or_else(|e| failed("synthetic localization", e)),
        unguided(&data, &guided).unwrap_or_else(|e| failed("unguided ablation", e)),
        determinism(&data, &guided).unwrap_or_else(|e| failed("determinism", e)),
    ]
}

fn main() {
    let mut lines = vec![gradients(), closed_forms(), cosine_properties()];
    lines.extend(synthetic_suite());
    lines.push(real_dataset().unwrap_or_else(|e| check("real-data reproduction (optional)", false, format!("error: {e}"))));
    let mut failures = 0;
    for l in &lines {
        let tag = match l.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failures += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} {}: {}", l.name, l.detail);
    }
    println!("acceptance: {} criteria, {failures} failed", lines.len());
    if failures > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
