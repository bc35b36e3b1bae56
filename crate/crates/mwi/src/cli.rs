//! Command-line entry points.
//!
//! Subcommands: `model make` (synthetic model files), `forward` (shot-data
//! modeling), `invert` (manifest-driven runs), `gradcheck` (adjoint vs
//! finite differences), and `equivalence-check` (scaled vs unscaled
//! multiplier loops). Exit codes: 0 success, 1 configuration error,
//! 2 numerical failure. `MWI_THREADS` caps worker parallelism (0 = auto).

use std::path::PathBuf;
use std::sync::Once;

use clap::{Args, Parser, Subcommand};

use crate::acquisition::{default_band, dispersion_cap_hz, Acquisition, Side};
use crate::error::{MwiError, Result};
use crate::inversion::{
    frequency_continuation, run_inversion_with_sink, scaled_unscaled_equivalence_probe,
    InversionState,
};
use crate::io::{emit_outputs, load_model, load_shot_data, save_model, save_shot_data, write_checkpoint, write_model_pgm};
use crate::io::manifest::parse_manifest;
use crate::model::{make_camembert, make_homogeneous, make_two_layer, Model, CAMEMBERT_DISK_FRACTION};
use crate::sensitivity::{forward_map, gradient_fd_check, ShotData};

#[derive(Parser)]
#[command(name = "mwi", version, about = "Frequency-domain waveform inversion with multiplier updates", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create and save synthetic models.
    Model {
        #[command(subcommand)]
        action: ModelCommand,
    },
    /// Model shot data for a stored model.
    Forward(ForwardArgs),
    /// Run an inversion described by a manifest file.
    Invert {
        /// Manifest path (sectioned key = value text).
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Compare the adjoint-state gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Compare the scaled and unscaled multiplier iterations on a toy
    /// problem.
    EquivalenceCheck {
        /// Outer iterations to compare.
        #[arg(long, default_value_t = 5)]
        iterations: usize,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Generate a synthetic model and write it to a file.
    Make {
        #[command(subcommand)]
        kind: ModelKind,
    },
}

#[derive(Subcommand)]
enum ModelKind {
    /// Circular high-velocity anomaly in a homogeneous background.
    Camembert {
        /// Grid spacing in meters.
        #[arg(long)]
        h: f64,
        /// Disk diameter as a fraction of the model width.
        #[arg(long, default_value_t = CAMEMBERT_DISK_FRACTION)]
        disk_frac: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write an 8-bit graymap next to the model.
        #[arg(long, default_value_t = false)]
        pgm: bool,
    },
    /// Two flat layers (2.0 km/s over 4.0 km/s).
    TwoLayer {
        #[arg(long)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        pgm: bool,
    },
    /// Constant velocity.
    Homogeneous {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        nz: usize,
        #[arg(long)]
        h: f64,
        /// Velocity in m/s.
        #[arg(long)]
        v: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        pgm: bool,
    },
}

#[derive(Args)]
struct ForwardArgs {
    /// Model file to shoot through.
    #[arg(long)]
    model: PathBuf,
    /// Output shot-data file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    sources: usize,
    #[arg(long, default_value = "top")]
    source_side: String,
    #[arg(long, default_value_t = 1)]
    receivers: usize,
    #[arg(long, default_value = "bottom")]
    receiver_side: String,
    /// Wavelet peak frequency in Hz.
    #[arg(long)]
    peak_hz: f64,
    /// Explicit comma-separated frequency list in Hz.
    #[arg(long)]
    frequencies: Option<String>,
    /// Size of the default band when no explicit list is given.
    #[arg(long, default_value_t = 8)]
    n_frequencies: usize,
    #[arg(long, default_value_t = 12)]
    pml_cells: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Interior grid as NXxNZ.
    #[arg(long, default_value = "20x20")]
    grid: String,
    #[arg(long, default_value_t = 2)]
    sources: usize,
    #[arg(long, default_value_t = 10)]
    receivers: usize,
    #[arg(long, default_value_t = 3)]
    n_frequencies: usize,
    /// Cells to probe.
    #[arg(long, default_value_t = 20)]
    cells: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

static THREAD_POOL: Once = Once::new();

/// Apply `MWI_THREADS` to the global worker pool (0 or unset = automatic).
fn init_threads() {
    THREAD_POOL.call_once(|| {
        if let Ok(spec) = std::env::var("MWI_THREADS") {
            if let Ok(n) = spec.trim().parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    init_threads();
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version as "errors"; keep those successful.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Model { action } => run_model(action),
        Command::Forward(args) => run_forward(args),
        Command::Invert { manifest } => run_invert(&manifest),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::EquivalenceCheck { iterations } => run_equivalence(iterations),
    }
}

fn write_model_outputs(model: &Model, out: &PathBuf, pgm: bool) -> Result<()> {
    save_model(model, out)?;
    println!("wrote {} ({}x{} at {} m)", out.display(), model.nx, model.nz, model.h);
    if pgm {
        let p = out.with_extension("pgm");
        write_model_pgm(model, &p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_model(action: ModelCommand) -> Result<i32> {
    let ModelCommand::Make { kind } = action;
    match kind {
        ModelKind::Camembert { h, disk_frac, out, pgm } => {
            write_model_outputs(&make_camembert(h, disk_frac)?, &out, pgm)?;
        }
        ModelKind::TwoLayer { h, out, pgm } => {
            write_model_outputs(&make_two_layer(h)?, &out, pgm)?;
        }
        ModelKind::Homogeneous { nx, nz, h, v, out, pgm } => {
            write_model_outputs(&make_homogeneous(nx, nz, h, v)?, &out, pgm)?;
        }
    }
    Ok(0)
}

fn parse_float_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| MwiError::InvalidConfig(format!("'{}' is not a number", tok.trim())))
        })
        .collect()
}

fn run_forward(args: ForwardArgs) -> Result<i32> {
    let model = load_model(&args.model)?;
    let freqs = match &args.frequencies {
        Some(raw) => parse_float_list(raw)?,
        None => default_band(args.peak_hz, args.n_frequencies, Some(dispersion_cap_hz(&model))),
    };
    let acq = Acquisition::lines(
        model.nx,
        model.nz,
        args.sources,
        args.source_side.parse::<Side>().map_err(MwiError::InvalidConfig)?,
        args.receivers,
        args.receiver_side.parse::<Side>().map_err(MwiError::InvalidConfig)?,
        args.peak_hz,
        freqs,
    )?;
    report_dispersion(&acq, &model);
    let opts = crate::helmholtz::ModelingOptions { pml_cells: args.pml_cells, ..Default::default() };
    let data = forward_map(&model, &acq, &opts)?;
    save_shot_data(&data, &args.out)?;
    println!(
        "wrote {} ({} sources x {} frequencies x {} receivers)",
        args.out.display(),
        data.n_sources(),
        data.n_frequencies(),
        data.n_receivers()
    );
    Ok(0)
}

fn report_dispersion(acq: &Acquisition, model: &Model) {
    for w in acq.dispersion_report(model) {
        eprintln!(
            "warning: {:.3} Hz resolves {:.1} points per wavelength (< 6) in the slowest medium",
            w.freq_hz, w.points_per_wavelength
        );
    }
}

fn run_invert(manifest_path: &PathBuf) -> Result<i32> {
    let man = parse_manifest(manifest_path)?;
    let initial = load_model(&man.initial_model)?.with_velocity_bounds(man.v_min, man.v_max)?;
    let observed = load_shot_data(&man.observed_data)?;
    let truth = match &man.true_model {
        Some(p) => Some(load_model(p)?.with_velocity_bounds(man.v_min, man.v_max)?),
        None => None,
    };
    let mut acq = man.acquisition(&initial)?;
    // An explicit frequency axis in the data wins over the default band.
    if man.frequencies.is_none() {
        if observed.n_frequencies() == acq.frequencies.len() {
            acq.frequencies = observed.frequencies.clone();
        }
    }
    report_dispersion(&acq, &initial);
    let cfg = man.run_config(truth.clone())?;

    let snapshot_dir = man.output_dir.clone();
    let stride = man.snapshot_every;
    let mut last: Option<(usize, Model, ShotData)> = None;
    let mut sink = |k: usize, model: &Model, mult: &ShotData, _log: &[crate::inversion::IterRecord]| -> Result<()> {
        if stride > 0 && k % stride == 0 {
            let p = snapshot_dir.join(format!("model_iter{k:05}.bin"));
            save_model(model, &p)?;
        }
        last = Some((k, model.clone(), mult.clone()));
        Ok(())
    };

    let outcome = if let Some(schedule) = man.schedule() {
        frequency_continuation(&schedule, &cfg, &acq, &observed, &initial)
    } else {
        run_inversion_with_sink(&cfg, &acq, &observed, &initial, Some(&mut sink))
    };

    match outcome {
        Ok(state) => {
            let files = emit_outputs(&state, &man, &acq)?;
            println!("run '{}' finished after {} iterations", man.name, state.k);
            if let Some(rec) = state.log.last() {
                println!("  final logged misfit: {:.6e}", rec.e_true);
                if let Some(rmse) = rec.model_rmse {
                    println!("  final logged model rmse: {:.6e}", rmse);
                }
            }
            for f in files {
                println!("  wrote {}", f.display());
            }
            Ok(0)
        }
        Err(e) => {
            if let Some((k, model, mult)) = last {
                let ck = InversionState {
                    k,
                    model,
                    multipliers: mult,
                    alpha: 0.0,
                    log: vec![],
                };
                if write_checkpoint(&man.output_dir, &ck, man.mu).is_ok() {
                    eprintln!("checkpoint written to {}", man.output_dir.display());
                }
            }
            Err(e)
        }
    }
}

fn run_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let (nx, nz) = parse_grid(&args.grid)?;
    let result = gradient_fd_check(nx, nz, args.sources, args.receivers, args.n_frequencies, args.cells, args.seed)?;
    println!(
        "gradcheck: {} cells on a {}x{} grid, max relative error {:.3e}",
        result.cells_checked, nx, nz, result.max_rel_error
    );
    if result.max_rel_error <= args.tolerance {
        println!("PASS (tolerance {:.1e})", args.tolerance);
        Ok(0)
    } else {
        eprintln!("FAIL (tolerance {:.1e})", args.tolerance);
        Err(MwiError::Numerical(format!(
            "gradient check failed: {:.3e} > {:.1e}",
            result.max_rel_error, args.tolerance
        )))
    }
}

fn parse_grid(raw: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = raw.split('x').collect();
    if parts.len() == 2 {
        if let (Ok(nx), Ok(nz)) = (parts[0].parse(), parts[1].parse()) {
            return Ok((nx, nz));
        }
    }
    Err(MwiError::InvalidConfig(format!("grid must look like 20x20, got '{raw}'")))
}

fn run_equivalence(iterations: usize) -> Result<i32> {
    let probe = scaled_unscaled_equivalence_probe(iterations)?;
    println!(
        "equivalence over {} iterations: model deviation {:.3e}, multiplier deviation {:.3e}",
        iterations, probe.model_deviation, probe.multiplier_deviation
    );
    let tol = 1e-10;
    if probe.model_deviation <= tol && probe.multiplier_deviation <= tol {
        println!("PASS (tolerance {tol:.1e})");
        Ok(0)
    } else {
        Err(MwiError::Numerical(format!(
            "loops diverged: model {:.3e}, multipliers {:.3e} (tolerance {tol:.1e})",
            probe.model_deviation, probe.multiplier_deviation
        )))
    }
}
