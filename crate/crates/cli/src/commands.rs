//! Subcommand implementations. Every command writes its outputs plus one
//! run manifest into the output directory.

use crate::config::AppConfig;
use crate::manifest::ManifestBuilder;
use jkoflow::datasets::{format_f64, SampleMatrix};
use jkoflow::jko::{self, StageStack};
use jkoflow::metrics::{mmd2_noise_floor, mmd2_slice, mmd2_unbiased};
use jkoflow::objective::LossBreakdown;
use jkoflow::params::param_count;
use jkoflow::Error;
use std::io::Write;
use std::path::{Path, PathBuf};

pub type CmdResult = Result<(), Error>;

fn write_loss_csv(path: &Path, curve: &[LossBreakdown]) -> Result<(), Error> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,kinetic,nll,total")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            i,
            format_f64(l.kinetic),
            format_f64(l.nll),
            format_f64(l.total)
        )?;
    }
    Ok(())
}

fn write_stage_mmd_csv(path: &Path, stack: &StageStack) -> Result<(), Error> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "stage,mmd2,final_kinetic,final_nll,final_total")?;
    for m in &stack.metrics {
        writeln!(
            w,
            "{},{},{},{},{}",
            m.stage,
            m.mmd2.map(format_f64).unwrap_or_default(),
            format_f64(m.final_loss.kinetic),
            format_f64(m.final_loss.nll),
            format_f64(m.final_loss.total)
        )?;
    }
    Ok(())
}

fn approach_label(stages: usize) -> &'static str {
    if stages == 1 {
        "single_shot"
    } else {
        "jko"
    }
}

/// Train a stage stack and write checkpoint, loss curves, per-stage MMD and
/// the run manifest.
pub fn cmd_train(cfg: &AppConfig, out: &Path) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new(
        "train",
        cfg,
        serde_json::json!({
            "dataset_seed": cfg.dataset.seed,
            "trainer_seed": cfg.trainer.seed,
            "approach": approach_label(cfg.stages),
        }),
    );
    let (train, _eval) = cfg.build_datasets()?;
    let stack = jko::run_jko(&train, &cfg.jko_config(), None)?;

    let ckpt_dir = out.join("checkpoint");
    jko::save_checkpoint(&stack, &ckpt_dir)?;
    manifest.record(&ckpt_dir.join("manifest.json"));

    for (i, curve) in stack.stage_curves.iter().enumerate() {
        let path = out.join(format!("loss_stage_{:02}.csv", i + 1));
        write_loss_csv(&path, curve)?;
        manifest.record(&path);

        // training report as JSON (the weights live in the checkpoint blobs)
        let report_path = out.join(format!("report_stage_{:02}.json", i + 1));
        let metrics = &stack.metrics[i];
        let report = serde_json::json!({
            "stage": metrics.stage,
            "config": stack.config,
            "steps": curve.len(),
            "final_loss": metrics.final_loss,
            "val_curve": stack.stage_val_curves.get(i),
            "wall_time_s": metrics.train_wall_time_s,
        });
        std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("serializes"))?;
        manifest.record(&report_path);
    }
    let mmd_path = out.join("stage_mmd.csv");
    write_stage_mmd_csv(&mmd_path, &stack)?;
    manifest.record(&mmd_path);

    manifest.write(out)?;
    if let Some(reason) = &stack.incomplete {
        return Err(Error::InvalidArgument(format!(
            "training aborted; partial checkpoint saved: {reason}"
        )));
    }
    Ok(())
}

/// Generate samples from a checkpoint into a CSV (+ provenance sidecar).
pub fn cmd_generate(cfg: &AppConfig, checkpoint: &Path, n: usize, seed: u64, out: &Path) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let stack = jko::load_checkpoint(checkpoint)?;
    let mut manifest = ManifestBuilder::new(
        "generate",
        cfg,
        serde_json::json!({"generate_seed": seed, "n": n, "checkpoint": checkpoint.display().to_string()}),
    );
    let samples = jko::generate(&stack, n, seed)?;
    let path = out.join("samples.csv");
    samples.write_csv(&path)?;
    manifest.record(&path);
    manifest.write(out)?;
    Ok(())
}

/// Evaluate log-density on a regular grid; CSV always, PPM image on request.
pub fn cmd_density_grid(
    cfg: &AppConfig,
    checkpoint: &Path,
    bounds: (f64, f64),
    resolution: usize,
    image: bool,
    out: &Path,
) -> CmdResult {
    if resolution < 2 {
        return Err(Error::invalid("resolution must be >= 2"));
    }
    let (lo, hi) = bounds;
    if !(hi > lo) {
        return Err(Error::invalid("bounds must satisfy hi > lo"));
    }
    let stack = jko::load_checkpoint(checkpoint)?;
    if stack.net.d != 2 {
        return Err(Error::invalid(format!(
            "density grids are 2D only; checkpoint has d = {}",
            stack.net.d
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new(
        "density_grid",
        cfg,
        serde_json::json!({"bounds": [lo, hi], "resolution": resolution,
                           "checkpoint": checkpoint.display().to_string()}),
    );

    let step = (hi - lo) / (resolution - 1) as f64;
    let mut points = Vec::with_capacity(resolution * resolution * 2);
    for iy in 0..resolution {
        for ix in 0..resolution {
            points.push(lo + ix as f64 * step);
            points.push(lo + iy as f64 * step);
        }
    }
    let grid = SampleMatrix::from_flat(
        resolution * resolution,
        2,
        points,
        jkoflow::datasets::Provenance::new("density_grid", 0),
    )?;
    let logp = jko::log_density_batch(&stack, &grid, &cfg.integ_eval(), cfg.exec())?;

    let csv_path = out.join("density.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        writeln!(w, "x1,x2,logp")?;
        for (row, lp) in grid.rows().zip(&logp) {
            writeln!(w, "{},{},{}", format_f64(row[0]), format_f64(row[1]), format_f64(*lp))?;
        }
    }
    manifest.record(&csv_path);

    if image {
        let ppm_path = out.join("density.ppm");
        write_density_ppm(&ppm_path, &logp, resolution)?;
        manifest.record(&ppm_path);
    }
    manifest.write(out)?;
    Ok(())
}

/// Grayscale P6 PPM of exp(logp), normalized to [0, 255].
fn write_density_ppm(path: &Path, logp: &[f64], resolution: usize) -> Result<(), Error> {
    let max_lp = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut bytes = Vec::with_capacity(logp.len() * 3);
    // image rows run top-down: flip the y axis
    for iy in (0..resolution).rev() {
        for ix in 0..resolution {
            let lp = logp[iy * resolution + ix];
            let v = ((lp - max_lp).exp() * 255.0).round().clamp(0.0, 255.0) as u8;
            bytes.extend_from_slice(&[v, v, v]);
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P6\n{resolution} {resolution}\n255\n")?;
    w.write_all(&bytes)?;
    Ok(())
}

/// MMD of generated samples against held-out data (full + optional slices),
/// permutation noise floor, and the per-stage trajectory.
pub fn cmd_evaluate(cfg: &AppConfig, checkpoint: &Path, out: &Path) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let stack = jko::load_checkpoint(checkpoint)?;
    let mut manifest = ManifestBuilder::new(
        "evaluate",
        cfg,
        serde_json::json!({"eval_seed": cfg.evaluate.seed,
                           "checkpoint": checkpoint.display().to_string()}),
    );
    let (_train, eval_data) = cfg.build_datasets()?;
    let generated = jko::generate(&stack, cfg.evaluate.n_generate, cfg.evaluate.seed)?;

    let full = mmd2_unbiased(&generated, &eval_data)?;
    let slices = match &cfg.evaluate.dims {
        Some(pairs) => mmd2_slice(&generated, &eval_data, pairs)?,
        None => Vec::new(),
    };
    let floor = mmd2_noise_floor(&eval_data, cfg.evaluate.n_perms, cfg.evaluate.seed)?;
    let trajectory = jko::mmd_trajectory(&stack, &eval_data, cfg.evaluate.dims.as_deref(), cfg.evaluate.seed)?;

    let metrics_path = out.join("metrics.json");
    let json = serde_json::json!({
        "mmd2": full,
        "slices": slices,
        "noise_floor_95": floor,
        "n_perms": cfg.evaluate.n_perms,
    });
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&json).expect("serializes"))?;
    manifest.record(&metrics_path);

    let traj_path = out.join("mmd_trajectory.csv");
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&traj_path)?);
        writeln!(w, "stages_used,dims,mmd2")?;
        for point in &trajectory {
            for r in &point.results {
                let dims = r
                    .dims
                    .map(|(a, b)| format!("{a}-{b}"))
                    .unwrap_or_else(|| "full".to_string());
                writeln!(w, "{},{},{}", point.stages_used, dims, format_f64(r.value))?;
            }
        }
    }
    manifest.record(&traj_path);
    manifest.write(out)?;
    Ok(())
}

struct SweepCell {
    label: String,
    stages: usize,
    mmd2: Result<f64, String>,
    params: usize,
}

fn run_sweep_cell(cfg: &AppConfig, out_root: &Path, label: &str) -> Result<f64, Error> {
    let cell_dir = out_root.join(label);
    cmd_train(cfg, &cell_dir)?;
    let stack = jko::load_checkpoint(&cell_dir.join("checkpoint"))?;
    let (_train, eval_data) = cfg.build_datasets()?;
    let generated = jko::generate(&stack, cfg.evaluate.n_generate, cfg.evaluate.seed)?;
    Ok(mmd2_unbiased(&generated, &eval_data)?.value)
}

fn write_sweep_csv(path: &Path, dataset: &str, axis: &str, cells: &[(String, SweepCell)]) -> Result<(), Error> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "dataset,{axis},approach,stages,param_count,mmd2,error")?;
    for (axis_value, cell) in cells {
        let (value, err) = match &cell.mmd2 {
            Ok(v) => (format_f64(*v), String::new()),
            Err(e) => (String::new(), e.replace(',', ";")),
        };
        writeln!(
            w,
            "{dataset},{axis_value},{},{},{},{value},{err}",
            approach_label(cell.stages),
            cell.stages,
            cell.params,
        )?;
    }
    Ok(())
}

fn sweep(
    cfg: &AppConfig,
    out: &Path,
    command: &str,
    axis: &str,
    cells_cfg: Vec<(String, AppConfig)>,
) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new(
        command,
        cfg,
        serde_json::json!({"dataset_seed": cfg.dataset.seed, "trainer_seed": cfg.trainer.seed}),
    );
    let dataset = cfg.dataset.kind.clone().unwrap_or_default();
    let mut cells: Vec<(String, SweepCell)> = Vec::new();
    let mut failures = 0usize;
    for (axis_value, cell_cfg) in cells_cfg {
        let label = format!("{axis}_{axis_value}_k{}", cell_cfg.stages);
        let result = run_sweep_cell(&cell_cfg, out, &label).map_err(|e| e.to_string());
        if result.is_err() {
            failures += 1;
        }
        cells.push((
            axis_value,
            SweepCell {
                label,
                stages: cell_cfg.stages,
                mmd2: result,
                params: param_count(&cell_cfg.net_config()),
            },
        ));
    }
    for (_, cell) in &cells {
        manifest.record(&out.join(&cell.label).join("manifest.json"));
    }
    let summary = out.join("summary.csv");
    write_sweep_csv(&summary, &dataset, axis, &cells)?;
    manifest.record(&summary);
    manifest.write(out)?;
    if failures > 0 {
        Err(Error::InvalidArgument(format!(
            "{failures} sweep cell(s) failed; results recorded in summary.csv"
        )))
    } else {
        Ok(())
    }
}

/// Train the configured stage count and the single-shot baseline per α and
/// summarize MMD² in one table.
pub fn cmd_sweep_alpha(cfg: &AppConfig, alphas: &[f64], out: &Path) -> CmdResult {
    let stage_variants: Vec<usize> = if cfg.stages == 1 { vec![1] } else { vec![1, cfg.stages] };
    let mut cells = Vec::new();
    for &alpha in alphas {
        for &stages in &stage_variants {
            let mut cell = cfg.clone();
            cell.alpha = alpha;
            cell.stages = stages;
            cells.push((format!("{alpha}"), cell));
        }
    }
    sweep(cfg, out, "sweep_alpha", "alpha", cells)
}

/// Width sweep at fixed α, recording parameter counts alongside.
pub fn cmd_sweep_width(cfg: &AppConfig, widths: &[usize], out: &Path) -> CmdResult {
    let stage_variants: Vec<usize> = if cfg.stages == 1 { vec![1] } else { vec![1, cfg.stages] };
    let mut cells = Vec::new();
    for &w in widths {
        for &stages in &stage_variants {
            let mut cell = cfg.clone();
            cell.net.width = w;
            cell.stages = stages;
            cells.push((format!("{w}"), cell));
        }
    }
    sweep(cfg, out, "sweep_width", "width", cells)
}

/// Output directory default: ./runs/<command>.
pub fn default_out(command: &str) -> PathBuf {
    PathBuf::from("runs").join(command)
}
