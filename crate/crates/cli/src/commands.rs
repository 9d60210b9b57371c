use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use voclip::autodiff::write_checkpoint;
use voclip::clips::{assemble_batches, sample_clip_pairs, Clip, OverlapMap, SamplerConfig};
use voclip::error::{Error, Result};
use voclip::eval::{align, evaluate, AlignmentMode};
use voclip::geometry::Pose6DoF;
use voclip::io::{
    export_report_csv, export_trajectory_csv, format_report, generate_synthetic, read_config, read_kitti_poses,
    read_predictions, read_report, report_to_json, write_config, write_kitti_poses, write_string_atomic, RunConfig,
    SyntheticSpec,
};
use voclip::loss::{mc_loss_batch, mc_loss_oracle, total_loss, LossConfig, McReduction};
use voclip::training::run_toy_training;
use voclip::verify::{run_suite, SuiteConfig};

use crate::{Cli, Command, ExportArgs, GradcheckArgs, LosscheckArgs, PairArgs, SampleArgs, SynthArgs, TrainArgs};

/// Relative tolerance between the closed-form and brute-force consistency sums.
const MC_CROSSCHECK_TOL: f64 = 1e-12;

pub enum Outcome {
    Success,
    VerificationFailed(String),
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Losscheck(a) => losscheck(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::TrainToy(a) => train_toy(cli, a),
        Command::Evaluate(a) => evaluate_cmd(cli, a),
        Command::Align(a) => align_cmd(cli, a),
        Command::Export(a) => export(cli, a),
    }
}

fn emit(text: &str) {
    print!("{text}");
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.global.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn required_out(cli: &Cli, what: &str) -> Result<PathBuf> {
    cli.global
        .out
        .clone()
        .ok_or_else(|| Error::InvalidArgument(format!("--out is required for {what}")))
}

/// Config file (or defaults) with command-line overrides applied.
fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(a) = cli.global.alpha {
        cfg.loss.alpha = a;
    }
    if let Some(m) = cli.global.align {
        cfg.eval.alignment = m.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn alpha(cli: &Cli) -> Result<f64> {
    let a = match (cli.global.alpha, &cli.global.config) {
        (Some(a), _) => a,
        (None, Some(_)) => run_config(cli)?.loss.alpha,
        (None, None) => LossConfig::default().alpha,
    };
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::Config {
            key: "loss.alpha".into(),
            msg: format!("must be finite and ≥ 0, got {a}"),
        });
    }
    Ok(a)
}

fn alignment(cli: &Cli) -> Result<AlignmentMode> {
    Ok(match (cli.global.align, &cli.global.config) {
        (Some(m), _) => m.into(),
        (None, Some(_)) => run_config(cli)?.eval.alignment,
        (None, None) => RunConfig::default().eval.alignment,
    })
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<Outcome> {
    let spec = SyntheticSpec {
        shape: a.shape.into(),
        n_frames: a.frames,
        step: a.step,
        curvature: a.curvature,
        noise_std: a.noise,
        seed: cli.global.seed.unwrap_or(0),
    };
    let (gt, noisy) = generate_synthetic(&spec)?;
    let dir = out_dir(cli)?;
    write_kitti_poses(&gt, &dir.join("gt.txt"))?;
    write_kitti_poses(&noisy, &dir.join("noisy.txt"))?;
    let length = voclip::eval::trajectory_distances(&gt).last().copied().unwrap_or(0.0);
    emit(&format!(
        "shape={} frames={} length_m={:.6} noise_std={} seed={}\nwrote=gt.txt\nwrote=noisy.txt\n",
        spec.shape, spec.n_frames, length, spec.noise_std, spec.seed
    ));
    Ok(Outcome::Success)
}

fn sample(cli: &Cli, a: &SampleArgs) -> Result<Outcome> {
    let cfg = SamplerConfig {
        n_frames: a.n_frames,
        stride: a.stride,
        batch_size: a.batch_size,
        shuffle_seed: cli.global.seed.unwrap_or(0),
    };
    let sampled = sample_clip_pairs(a.length, &cfg)?;
    let mut text = format!(
        "length={} n_frames={} stride={} pairs={} sequence_too_short={}\n",
        a.length,
        a.n_frames,
        a.stride,
        sampled.pairs.len(),
        sampled.sequence_too_short
    );
    let span = |c: &Clip| format!("{}..{}", c.start(), c.start() + c.n_frames() - 1);
    let mut csv = String::from("batch,slot,first_start,first_end,second_start,second_end\n");
    let batches = assemble_batches(&sampled.pairs, &cfg)?;
    for (b, batch) in batches.iter().enumerate() {
        for (i, p) in batch.pairs().iter().enumerate() {
            writeln!(
                text,
                "batch={b} slot={i} first={} second={}",
                span(&p.first),
                span(&p.second)
            )
            .expect("string");
            writeln!(
                csv,
                "{b},{i},{},{},{},{}",
                p.first.start(),
                p.first.start() + p.first.n_frames() - 1,
                p.second.start(),
                p.second.start() + p.second.n_frames() - 1
            )
            .expect("string");
        }
    }
    if let Some(path) = &cli.global.out {
        write_string_atomic(path, &csv)?;
    }
    emit(&text);
    Ok(Outcome::Success)
}

fn losscheck(cli: &Cli, a: &LosscheckArgs) -> Result<Outcome> {
    let preds = read_predictions(&a.pred)?;
    let targets = read_predictions(&a.target)?;
    if preds.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction clips but {} target clips",
            preds.len(),
            targets.len()
        )));
    }
    if preds.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} clips do not form pairs",
            preds.len()
        )));
    }
    let targets = targets
        .iter()
        .map(|t| {
            t.rows()
                .iter()
                .map(|r| Pose6DoF::from_array(*r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let nf = preds[0].n_frames();
    let reduction: McReduction = a.reduction.parse()?;
    let loss = LossConfig {
        alpha: alpha(cli)?,
        mc_reduction: reduction,
    };
    let pairs: Vec<(usize, usize)> = (0..preds.len() / 2).map(|i| (2 * i, 2 * i + 1)).collect();
    let breakdown = total_loss(&preds, &targets, &pairs, &loss)?;
    let clips = (0..preds.len())
        .map(|i| Clip::new(i % 2, nf))
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<usize> = (0..preds.len()).map(|i| i / 2).collect();
    let oracle = mc_loss_oracle(&OverlapMap::from_clips(&clips, &groups)?, &preds)?;
    let (closed_sum, _) = mc_loss_batch(&preds, &pairs, McReduction::Sum)?;
    let diff = (closed_sum - oracle).abs();
    emit(&format!(
        "clips={} pairs={} n_frames={nf} alpha={} reduction={reduction:?}\nmse={:.12e}\nmc={:.12e}\ntotal={:.12e}\nconsistency_terms={}\nmc_closed_sum={:.12e}\nmc_oracle_sum={:.12e}\nmc_abs_diff={:.3e}\n",
        preds.len(),
        pairs.len(),
        loss.alpha,
        breakdown.mse,
        breakdown.mc,
        breakdown.total,
        breakdown.n_consistency_pairs,
        closed_sum,
        oracle,
        diff
    ).to_lowercase());
    if diff > MC_CROSSCHECK_TOL * (1.0 + oracle.abs()) {
        return Ok(Outcome::VerificationFailed(format!(
            "closed-form consistency loss differs from enumeration by {diff:e}"
        )));
    }
    Ok(Outcome::Success)
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<Outcome> {
    let cfg = SuiteConfig {
        seed: cli.global.seed.unwrap_or(0),
        loss_instances: a.instances,
        coords_per_param: a.coords_per_param,
        corrupt_backward: a.inject_fault,
    };
    let results = run_suite(&cfg)?;
    let mut text = String::new();
    for r in &results {
        text.push_str(&r.line());
        text.push('\n');
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.component.as_str())
        .collect();
    writeln!(text, "components={} failed={}", results.len(), failed.len()).expect("string");
    emit(&text);
    if failed.is_empty() {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::VerificationFailed(format!(
            "gradient check above tolerance: {}",
            failed.join(", ")
        )))
    }
}

fn train_toy(cli: &Cli, a: &TrainArgs) -> Result<Outcome> {
    let mut cfg = run_config(cli)?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.optim.lr = lr;
    }
    cfg.validate()?;
    let dir = out_dir(cli)?;
    let mut log = format!(
        "seed={} alpha={} lr={} steps={} train_sequences={} test_sequences={}\n",
        cfg.seed,
        cfg.loss.alpha,
        cfg.optim.lr,
        cfg.train.steps,
        cfg.data.train_sequences.join(","),
        cfg.data.test_sequences.join(",")
    );
    emit(&log);
    let outcome = run_toy_training(&cfg, |s| {
        let line = s.line() + "\n";
        emit(&line);
        log.push_str(&line);
    })?;
    let mut tail = format!(
        "initial_mse={:.12e} initial_mc={:.12e} initial_total={:.12e}\nfinal_mse={:.12e} final_mc={:.12e} final_total={:.12e}\n",
        outcome.initial.mse, outcome.initial.mc, outcome.initial.total, outcome.last.mse, outcome.last.mc, outcome.last.total
    );
    for (name, report) in &outcome.reports {
        let fields: Vec<String> = report.metrics().iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        writeln!(
            tail,
            "sequence={name} alignment={} {} segments_available={}",
            report.alignment,
            fields.join(" "),
            report.segments_available
        )
        .expect("string");
        write_string_atomic(&dir.join(format!("report_{name}.txt")), &format_report(report))?;
        export_report_csv(report, &dir.join(format!("report_{name}.csv")))?;
    }
    write_checkpoint(&dir.join("checkpoint.bin"), outcome.params(), Some(&outcome.adam))?;
    write_config(&cfg, &dir.join("config.toml"))?;
    tail.push_str("wrote=checkpoint.bin\n");
    emit(&tail);
    log.push_str(&tail);
    write_string_atomic(&dir.join("log.txt"), &log)?;
    Ok(Outcome::Success)
}

fn read_pair(a: &PairArgs) -> Result<(voclip::geometry::Trajectory, voclip::geometry::Trajectory)> {
    Ok((read_kitti_poses(&a.pred)?, read_kitti_poses(&a.gt)?))
}

fn evaluate_cmd(cli: &Cli, a: &PairArgs) -> Result<Outcome> {
    let (pred, gt) = read_pair(a)?;
    let segments = match &cli.global.config {
        Some(_) => run_config(cli)?.eval.segments(),
        None => voclip::eval::SegmentConfig::default(),
    };
    let report = evaluate(&pred, &gt, alignment(cli)?, &segments)?;
    let text = format_report(&report);
    if let Some(dir) = &cli.global.out {
        std::fs::create_dir_all(dir)?;
        write_string_atomic(&dir.join("report.txt"), &text)?;
        write_string_atomic(&dir.join("report.json"), &(report_to_json(&report)? + "\n"))?;
        export_report_csv(&report, &dir.join("report.csv"))?;
    }
    emit(&text);
    Ok(Outcome::Success)
}

fn align_cmd(cli: &Cli, a: &PairArgs) -> Result<Outcome> {
    let (pred, gt) = read_pair(a)?;
    let mode = alignment(cli)?;
    let (aligned, sim) = align(&pred, &gt, mode)?;
    let r = sim.rotation.matrix();
    let mut text = format!("alignment={mode}\nscale={:.12e}\n", sim.scale);
    for row in 0..3 {
        writeln!(
            text,
            "rotation.{row}={:.12e} {:.12e} {:.12e}",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)]
        )
        .expect("string");
    }
    let t = sim.translation;
    writeln!(text, "translation={:.12e} {:.12e} {:.12e}", t.x, t.y, t.z).expect("string");
    writeln!(
        text,
        "ate={:.6}",
        voclip::eval::ate(&aligned, &gt, AlignmentMode::None)?
    )
    .expect("string");
    if let Some(path) = &cli.global.out {
        write_kitti_poses(&aligned, path)?;
    }
    emit(&text);
    Ok(Outcome::Success)
}

fn export(cli: &Cli, a: &ExportArgs) -> Result<Outcome> {
    let out = required_out(cli, "export")?;
    match (&a.trajectory, &a.report) {
        (Some(t), _) => export_trajectory_csv(&read_kitti_poses(t)?, &out)?,
        (None, Some(r)) => export_report_csv(&read_report(r)?, &out)?,
        (None, None) => unreachable!("clap requires one input"),
    }
    emit(&format!("wrote={}\n", display_name(&out)));
    Ok(Outcome::Success)
}

fn display_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned())
}
